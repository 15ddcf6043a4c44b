from .config import ScenarioError, load_scenario, parse_scenario, scenario_to_dict
from .experiments import (RunArtifact, RunFailure, byzantine_probe, cold_start_suite, desk_scenario, emit_plotdata,
                          emit_table, heterogeneity_suite, main_suite, full_scale, privacy_for_eps, privacy_suite,
                          run_one, run_suite)

__all__ = [
    "ScenarioError", "load_scenario", "parse_scenario", "scenario_to_dict", "RunArtifact", "RunFailure",
    "byzantine_probe", "cold_start_suite", "desk_scenario", "emit_plotdata", "emit_table", "heterogeneity_suite",
    "main_suite", "full_scale", "privacy_for_eps", "privacy_suite", "run_one", "run_suite",
]
