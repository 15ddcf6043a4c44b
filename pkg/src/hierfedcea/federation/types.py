"""Federation state and configuration types."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from ..model import Dataset
from ..privacy import DpConfig, PrivacyLedger


class FederationConfigError(ValueError):
    pass


class AlgorithmKind(str, enum.Enum):
    HIERFEDCEA = "HierFedCEA"
    FEDAVG = "FedAvg"
    FEDPROX = "FedProx"
    SCAFFOLD = "Scaffold"
    PERFEDAVG = "PerFedAvg"
    FEDPER = "FedPer"
    LOCAL_ONLY = "LocalOnly"
    CENTRALIZED = "Centralized"
    CURRENT_TL = "CurrentTL"

    @classmethod
    def parse(cls, name: str) -> "AlgorithmKind":
        key = str(name).replace("-", "").replace("_", "").lower()
        for k in cls:
            if k.value.lower() == key:
                return k
        aliases = {"tlproxy": cls.CURRENT_TL, "local": cls.LOCAL_ONLY}
        if key in aliases:
            return aliases[key]
        raise FederationConfigError(f"unknown algorithm {name!r}; expected one of {[k.value for k in cls]}")

    @property
    def label(self) -> str:
        return "TL-proxy" if self is AlgorithmKind.CURRENT_TL else self.value


@dataclass(frozen=True)
class RoundConfig:
    local_epochs: int = 5
    lr: float = 0.01
    batch: int = 64
    prox_mu: float = 0.01
    dp: DpConfig = field(default_factory=DpConfig)
    tau: float = 0.15
    t_warm: int = 20
    reassign_period: int = 10
    min_cluster_size: int = 3
    # switches used by ablations and equivalence checks
    trust: bool = True
    single_cluster: bool = False
    freeze_local: bool = False

    def __post_init__(self):
        if self.local_epochs < 0 or self.batch < 1:
            raise FederationConfigError("local_epochs must be >= 0 and batch >= 1")
        if self.lr < 0 or self.prox_mu < 0:
            raise FederationConfigError("lr and prox_mu must be non-negative")
        if not 0.0 < self.tau < 2.0:
            raise FederationConfigError("tau must lie in (0, 2)")
        if self.t_warm < 0 or self.reassign_period < 1 or self.min_cluster_size < 1:
            raise FederationConfigError("t_warm >= 0, reassign_period >= 1, min_cluster_size >= 1 required")


@dataclass
class ClientState:
    facility_id: int
    dataset: Dataset
    theta_l: float = 0.0
    cluster_id: int = 0
    control_variate: np.ndarray = field(default_factory=lambda: np.zeros(36))
    trust_history: list = field(default_factory=list)
    seed: int = 0
    local_steps: int = 0
    # personal parameters for flat baselines (full model or head)
    personal: np.ndarray | None = None
    flag: str = ""

    def __post_init__(self):
        if not math.isfinite(self.theta_l):
            raise FederationConfigError("theta_l must be finite")

    @property
    def n(self) -> int:
        return len(self.dataset)

    def rng(self, *tags: int) -> np.random.Generator:
        """Independent stream keyed by the run seed, this facility and ``tags``."""
        return np.random.default_rng(np.random.SeedSequence([self.seed, self.facility_id, *tags]))


@dataclass
class ServerState:
    theta_g: np.ndarray
    cluster_models: dict
    clusters: dict
    g_ref: np.ndarray | None = None
    round: int = 0
    ledger: PrivacyLedger = field(default_factory=PrivacyLedger)

    def cluster_of(self, facility_id: int) -> int:
        for cid, members in self.clusters.items():
            if facility_id in members:
                return cid
        raise KeyError(facility_id)

    def check_partition(self, facility_ids) -> None:
        seen = [f for members in self.clusters.values() for f in members]
        if sorted(seen) != sorted(facility_ids) or any(len(m) == 0 for m in self.clusters.values()):
            raise FederationConfigError("cluster map does not partition the facilities")


@dataclass
class FacilityRoundRecord:
    facility_id: int
    cluster_id: int
    loss: float
    rmse: float
    energy: float
    trust: float
    byzantine: bool = False
    error: str = ""


@dataclass
class RoundReport:
    round: int
    records: list
    ledger: dict
    comm_bytes: int
    tier1_skipped: bool = False
    moves: list = field(default_factory=list)
    # fleet reference model after the round (full 36-vector), when one exists
    model: np.ndarray | None = None

    @property
    def honest(self) -> list:
        return [r for r in self.records if not r.byzantine]

    @property
    def fleet_rmse(self) -> float:
        vals = [r.rmse for r in self.honest if math.isfinite(r.rmse)]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def fleet_energy(self) -> float:
        vals = [r.energy for r in self.honest if math.isfinite(r.energy)]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def cluster_map(self) -> dict:
        return {r.facility_id: r.cluster_id for r in self.records}
