"""Seeded runs, suites, result files and the built-in experiment sets."""

from __future__ import annotations

import csv
import json
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .. import __version__
from ..federation.engine import cold_start, train
from ..federation.types import AlgorithmKind, RoundReport
from ..metrics import energy_reduction_pct, mean_ci, rounds_to_convergence, worst_case_rmse
from ..privacy import DpConfig, solve_z
from ..scenario import ByzantineSpec, ColdStartSpec, ScenarioConfig
from ..sim.population import HETEROGENEITY_LEVELS
from .config import scenario_to_dict

TABLE_COLUMNS = ("method", "rmse_mean", "rmse_ci", "energy_red_pct", "rounds_to_conv", "worst_case_rmse",
                 "eps_g", "eps_c", "comm_bytes")
PLOT_COLUMNS = ("heterogeneity", "method", "rmse_mean", "ci")
ROUND_COLUMNS = ("round", "facility_id", "cluster_id", "byzantine", "loss", "rmse_vpd", "energy_kwh_m2_day",
                 "trust", "eps_g", "eps_c", "comm_bytes", "tier1_skipped", "error")
PRIVACY_EPS = (1.0, 2.0, 4.0, 8.0, 16.0, math.inf)
METHOD_ORDER = [k.label for k in AlgorithmKind]


def fmt(v) -> str:
    """Stable text form of a number for result files."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def _json_safe(v):
    if isinstance(v, dict):
        return {str(k): _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(v, np.integer):
        return int(v)
    return v


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class RunArtifact:
    name: str
    seed: int
    scenario: dict
    csv_path: Path
    summary_path: Path
    version: str = __version__

    def summary(self) -> dict:
        return json.loads(self.summary_path.read_text())


@dataclass(frozen=True)
class RunFailure:
    name: str
    seed: int
    error: str
    path: Path


def write_round_csv(reports: Sequence[RoundReport], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROUND_COLUMNS)
        for rep in reports:
            for rec in rep.records:
                w.writerow([rep.round, rec.facility_id, rec.cluster_id, fmt(rec.byzantine), fmt(rec.loss),
                            fmt(rec.rmse), fmt(rec.energy), fmt(rec.trust), fmt(rep.ledger["eps_g"]),
                            fmt(rep.ledger["eps_c"]), rep.comm_bytes, fmt(rep.tier1_skipped), rec.error])


def summarize(scenario: ScenarioConfig, seed: int, reports: Sequence[RoundReport]) -> dict:
    last = reports[-1]
    per_fac = {r.facility_id: r.rmse for r in last.honest}
    finite = [v for v in per_fac.values() if math.isfinite(v)]
    return {
        "name": scenario.name,
        "method": scenario.algorithm.label,
        "seed": seed,
        "heterogeneity_level": scenario.heterogeneity_level,
        "n_facilities": scenario.n_facilities,
        "rounds": scenario.rounds,
        "fleet_rmse": last.fleet_rmse,
        "fleet_energy": last.fleet_energy,
        "worst_case_rmse": worst_case_rmse(finite) if finite else math.nan,
        "rounds_to_conv": rounds_to_convergence(reports),
        "eps_g": last.ledger["eps_g"],
        "eps_c": last.ledger["eps_c"],
        "z_g": scenario.round_cfg.dp.z_g,
        "z_c": scenario.round_cfg.dp.z_c,
        "sensitivity": scenario.round_cfg.dp.sensitivity,
        "comm_bytes": last.comm_bytes,
        "per_facility_rmse": per_fac,
        "fleet_rmse_by_round": [r.fleet_rmse for r in reports],
        "tier1_skipped_rounds": sum(r.tier1_skipped for r in reports),
        "cluster_moves": sum(len(r.moves) for r in reports),
        "errors": sum(1 for r in reports for rec in r.records if rec.error),
        "version": __version__,
    }


def run_dir(out_dir: Path, name: str, seed: int) -> Path:
    return Path(out_dir) / name / f"seed{seed}"


def run_one(scenario: ScenarioConfig, seed: int, out_dir: str | Path,
            trained=None) -> RunArtifact:
    """Train one (scenario, seed) cell and write its CSV, summary and scenario snapshot."""
    d = run_dir(Path(out_dir), scenario.name, seed)
    d.mkdir(parents=True, exist_ok=True)
    _, reports = train(scenario, seed) if trained is None else trained
    snap = scenario_to_dict(scenario)
    csv_path, summary_path = d / "rounds.csv", d / "summary.json"
    write_round_csv(reports, csv_path)
    _write_json(summary_path, summarize(scenario, seed, reports))
    _write_json(d / "scenario.json", {"scenario": snap, "seed": seed, "version": __version__})
    return RunArtifact(scenario.name, seed, snap, csv_path, summary_path)


def _cell(args) -> RunArtifact | RunFailure:
    scenario, seed, out_dir = args
    try:
        return run_one(scenario, seed, out_dir)
    except Exception:  # one broken cell must not stop the suite
        d = run_dir(Path(out_dir), scenario.name, seed)
        d.mkdir(parents=True, exist_ok=True)
        err = traceback.format_exc()
        (d / "failure.txt").write_text(err)
        return RunFailure(scenario.name, seed, err.strip().splitlines()[-1], d / "failure.txt")


def run_suite(scenarios: Iterable[ScenarioConfig], out_dir: str | Path, workers: int = 1) -> list:
    """Every (scenario, seed) cell; failures are recorded per cell and the suite carries on."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = [(sc, seed, out_dir) for sc in scenarios for seed in sc.seeds]
    names = [(sc.name, seed) for sc, seed, _ in cells]
    if len(set(names)) != len(names):
        raise ValueError("scenario names must be unique within a suite")
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell, cells))
    else:
        results = [_cell(c) for c in cells]
    index = [{"name": r.name, "seed": r.seed,
              "status": "ok" if isinstance(r, RunArtifact) else "failed",
              "path": str((r.summary_path if isinstance(r, RunArtifact) else r.path).relative_to(out_dir))}
             for r in results]
    _write_json(out_dir / "suite.json", {"cells": index, "version": __version__})
    return results


def find_summaries(paths: Iterable[str | Path]) -> list[dict]:
    out = []
    for p in paths:
        p = Path(p)
        files = sorted(p.rglob("summary.json")) if p.is_dir() else [p]
        out.extend(json.loads(f.read_text()) for f in files)
    return out


def _summaries(items) -> list[dict]:
    out = []
    for it in items:
        if isinstance(it, RunArtifact):
            out.append(it.summary())
        elif isinstance(it, dict):
            out.append(it)
    return out


def _f(v) -> float:
    if isinstance(v, str):
        return float(v)
    return math.nan if v is None else float(v)


def _ordered_methods(methods) -> list:
    return sorted(set(methods), key=lambda m: (METHOD_ORDER.index(m) if m in METHOD_ORDER else 99, m))


def table_rows(items) -> list[dict]:
    """One row per method: seed mean and 95% CI of the final fleet RMSE, and the other columns."""
    sums = _summaries(items)
    by_method: dict = {}
    for s in sums:
        by_method.setdefault(s["method"], []).append(s)
    local = {s["seed"]: _f(s["fleet_energy"]) for s in by_method.get(AlgorithmKind.LOCAL_ONLY.label, [])}
    rows = []
    for m in _ordered_methods(by_method):
        runs = sorted(by_method[m], key=lambda s: s["seed"])
        rm, half = mean_ci([_f(s["fleet_rmse"]) for s in runs])
        if m == AlgorithmKind.LOCAL_ONLY.label:
            energy = f"{np.mean([_f(s['fleet_energy']) for s in runs]):.4f} kWh/m2/day"
        else:
            red = [energy_reduction_pct(_f(s["fleet_energy"]), local[s["seed"]]) for s in runs if s["seed"] in local]
            energy = f"{np.mean(red):.3f}" if red else ""
        conv = [s["rounds_to_conv"] for s in runs]
        done = [c for c in conv if c is not None]
        if len(done) == len(conv):
            rtc = f"{np.mean(done):.1f}"
        elif done:
            rtc = f"{np.mean(done):.1f} ({len(conv) - len(done)}/{len(conv)} never)"
        else:
            rtc = f">{runs[0]['rounds']}"
        rows.append({
            "method": m,
            "rmse_mean": f"{rm:.5f}",
            "rmse_ci": f"{half:.5f}" if math.isfinite(half) else "nan",
            "energy_red_pct": energy,
            "rounds_to_conv": rtc,
            "worst_case_rmse": f"{max(_f(s['worst_case_rmse']) for s in runs):.5f}",
            "eps_g": fmt(_f(runs[0]["eps_g"])),
            "eps_c": fmt(_f(runs[0]["eps_c"])),
            "comm_bytes": str(int(runs[0]["comm_bytes"])),
        })
    return rows


def emit_table(items, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(table_rows(items))
    return path


def plot_rows(items) -> list[dict]:
    sums = _summaries(items)
    groups: dict = {}
    for s in sums:
        groups.setdefault((s["heterogeneity_level"], s["method"]), []).append(_f(s["fleet_rmse"]))
    levels = list(HETEROGENEITY_LEVELS)
    rows = []
    for (lvl, m) in sorted(groups, key=lambda g: (levels.index(g[0]) if g[0] in levels else 99,
                                                  METHOD_ORDER.index(g[1]) if g[1] in METHOD_ORDER else 99)):
        mean, half = mean_ci(groups[(lvl, m)])
        rows.append({"heterogeneity": lvl, "method": m, "rmse_mean": f"{mean:.5f}",
                     "ci": f"{half:.5f}" if math.isfinite(half) else "nan"})
    return rows


def emit_plotdata(items, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PLOT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(plot_rows(items))
    return path


# ---- built-in experiment sets ----

def desk_scenario(algorithm=AlgorithmKind.HIERFEDCEA, **kw) -> ScenarioConfig:
    """K=12, T=120, 60 simulated days, 3 seeds, full heterogeneity."""
    algorithm = algorithm if isinstance(algorithm, AlgorithmKind) else AlgorithmKind.parse(algorithm)
    base = dict(name=f"desk-{algorithm.label}", algorithm=algorithm, facilities=12, rounds=120, sim_days=60,
                seeds=(0, 1, 2), heterogeneity_level="Full")
    base.update(kw)
    return ScenarioConfig(**base)


def full_scale(sc: ScenarioConfig) -> ScenarioConfig:
    """K=30, T=100, 180 simulated days, 5 seeds."""
    name = sc.name.replace("desk-", "full-") if sc.name.startswith("desk-") else f"{sc.name}-full"
    return sc.with_changes(name=name, facilities=30, rounds=100, sim_days=180, seeds=(0, 1, 2, 3, 4))


def with_sensitivity(sc: ScenarioConfig, sensitivity: str) -> ScenarioConfig:
    return sc.with_round(dp=replace(sc.round_cfg.dp, sensitivity=sensitivity))


def main_suite(full: bool = False, methods: Sequence[AlgorithmKind] = tuple(AlgorithmKind),
               **kw) -> list[ScenarioConfig]:
    out = [desk_scenario(m, **kw) for m in methods]
    return [full_scale(s) for s in out] if full else out


def heterogeneity_suite(methods=(AlgorithmKind.HIERFEDCEA, AlgorithmKind.FEDAVG), full: bool = False,
                        **kw) -> list[ScenarioConfig]:
    out = []
    for lvl in HETEROGENEITY_LEVELS:
        for m in methods:
            sc = desk_scenario(m, heterogeneity_level=lvl, **kw)
            out.append(sc.with_changes(name=f"het-{lvl}-{sc.algorithm.label}"))
    return [full_scale(s) for s in out] if full else out


def privacy_for_eps(eps_c: float, rounds: int, base: DpConfig = DpConfig()) -> DpConfig:
    """Noise multipliers for a Tier-2 target ``eps_c``; Tier 1 gets twice the budget."""
    if math.isinf(eps_c):
        return replace(base, z_g=0.0, z_c=0.0)
    return replace(base, z_g=solve_z(2.0 * eps_c, rounds, base.delta), z_c=solve_z(eps_c, rounds, base.delta))


def privacy_suite(eps_values=PRIVACY_EPS, full: bool = False, **kw) -> list[ScenarioConfig]:
    out = []
    for eps in eps_values:
        sc = desk_scenario(AlgorithmKind.HIERFEDCEA, **kw)
        sc = full_scale(sc) if full else sc
        dp = privacy_for_eps(eps, sc.rounds, sc.round_cfg.dp)
        tag = "inf" if math.isinf(eps) else f"{eps:g}"
        out.append(sc.with_round(dp=dp).with_changes(name=f"{'full' if full else 'desk'}-privacy-eps{tag}"))
    return out


BUILTIN_SUITES = {"main": main_suite, "heterogeneity": heterogeneity_suite, "privacy": privacy_suite}


@dataclass
class ByzantineResult:
    seed: int
    rmse_trust: float
    rmse_plain: float
    adversary_trust: list
    honest_trust: list


def byzantine_probe(seed: int, *, honest: int = 3, adversaries: int = 1, rounds: int = 60,
                    sim_days: int = 60, dp: DpConfig | None = None, level: str = "Full") -> ByzantineResult:
    """Same seeded fleet with and without trust weighting; Tier-1 noise off by default."""
    dp = DpConfig(z_g=0.0) if dp is None else dp
    sc = ScenarioConfig(name="byzantine", facilities=honest + adversaries, rounds=rounds, sim_days=sim_days,
                        seeds=(seed,), heterogeneity_level=level, byzantine=ByzantineSpec(adversaries))
    sc = sc.with_round(dp=dp)
    _, rep_t = train(sc.with_round(trust=True), seed)
    _, rep_p = train(sc.with_round(trust=False), seed)
    adv_ids = [i for i in range(honest, honest + adversaries)]
    adv = [[r.records[i].trust for i in adv_ids] for r in rep_t]
    hon = [[r.records[i].trust for i in range(honest)] for r in rep_t]
    return ByzantineResult(seed, rep_t[-1].fleet_rmse, rep_p[-1].fleet_rmse, adv, hon)


def cold_start_suite(base: ScenarioConfig, methods=(AlgorithmKind.HIERFEDCEA, AlgorithmKind.FEDAVG,
                                                    AlgorithmKind.LOCAL_ONLY),
                     spec: ColdStartSpec | None = None, trained: dict | None = None) -> dict:
    """Cold-start curves per (method, seed); ``trained`` may hold ``(method, seed) -> (runner, reports)``."""
    if spec is None:
        spec = base.cold_start or ColdStartSpec()
    out = {}
    for m in methods:
        sc = base.with_changes(algorithm=m, cold_start=spec)
        for seed in base.seeds:
            pre = None if trained is None else trained.get((m, seed))
            out[(m, seed)] = cold_start(sc, seed, trained=pre)
    return out


def write_cold_start(results: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for (m, seed), r in sorted(results.items(), key=lambda kv: (METHOD_ORDER.index(kv[0][0].label), kv[0][1])):
        rows.append({"method": r.algorithm, "seed": seed, "days_to_threshold": r.days_to_threshold,
                     "fleet_rmse": r.fleet_rmse, "cluster_id": r.cluster_id, "flag": r.flag,
                     "daily_rmse": r.daily_rmse})
    _write_json(path, {"runs": rows, "version": __version__})
    return path
