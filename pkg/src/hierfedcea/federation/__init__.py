from .ops import (aggregate_cluster, aggregate_global, cold_start_join, compute_g_ref, local_train, make_update,
                  refine_clusters, trust_score)
from .types import (AlgorithmKind, ClientState, FacilityRoundRecord, FederationConfigError, RoundConfig, RoundReport,
                    ServerState)
from .wire import FRAME_BYTES, PAYLOAD_BYTES, decode_update, encode_update

__all__ = [
    "ColdStartResult", "build_environment", "can_contribute", "cold_start", "run_baseline", "run_training", "train",
    "aggregate_cluster", "aggregate_global", "cold_start_join", "compute_g_ref", "local_train", "make_update",
    "refine_clusters", "trust_score", "AlgorithmKind", "ClientState", "FacilityRoundRecord",
    "FederationConfigError", "RoundConfig", "RoundReport", "ServerState", "FRAME_BYTES", "PAYLOAD_BYTES",
    "decode_update", "encode_update",
]

_ENGINE_NAMES = {"ColdStartResult", "build_environment", "can_contribute", "cold_start", "run_baseline",
                 "run_training", "train"}


def __getattr__(name):
    # the engine depends on the scenario module, which depends on this package's types
    if name in _ENGINE_NAMES:
        from . import engine

        return getattr(engine, name)
    raise AttributeError(name)
