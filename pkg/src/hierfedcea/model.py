"""The 7-3-3 sigmoid MLP that maps sensor features to PID gains.

Parameters live in a flat float64 vector of 36 entries laid out as
row-major ``w1`` (3x7), ``b1`` (3), row-major ``w2`` (3x3), ``b2`` (3).
Every federated component works on that flat layout; :func:`unpack`
gives matrix views when they are more convenient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

N_IN = 7
N_HIDDEN = 3
N_OUT = 3
N_PARAMS = N_IN * N_HIDDEN + N_HIDDEN + N_HIDDEN * N_OUT + N_OUT  # 36

FEATURE_NAMES = ("t_air", "rh", "t_leaf", "co2", "ppfd", "e_vpd", "e_vpd_int")
GAIN_NAMES = ("kp", "ki", "kd")

_W1 = slice(0, 21)
_B1 = slice(21, 24)
_W2 = slice(24, 33)
_B2 = slice(33, 36)

# tier index sets into the flat vector
GLOBAL_IDX = np.array([r * N_IN + c for r in range(N_HIDDEN) for c in range(5)] + [21, 22, 23])
CLUSTER_IDX = np.array(
    [r * N_IN + c for r in range(N_HIDDEN) for c in (5, 6)] + list(range(24, 33)) + [33, 34]
)
LOCAL_IDX = np.array([35])
SHARED_IDX = np.sort(np.concatenate([GLOBAL_IDX, CLUSTER_IDX]))

# FedPer split: hidden layer shared, output layer personal
BODY_IDX = np.arange(0, 24)
HEAD_IDX = np.arange(24, 36)


class ModelDomainError(ValueError):
    """Raised for non-finite inputs or empty batches."""


@dataclass(frozen=True)
class FeatureVector:
    t_air: float
    rh: float
    t_leaf: float
    co2: float
    ppfd: float
    e_vpd: float
    e_vpd_int: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ModelDomainError("feature vector contains non-finite values")
        if not 0.0 <= self.rh <= 1.0:
            raise ModelDomainError(f"rh must lie in [0, 1], got {self.rh}")
        if self.co2 <= 0:
            raise ModelDomainError(f"co2 must be positive, got {self.co2}")
        if self.ppfd < 0:
            raise ModelDomainError(f"ppfd must be non-negative, got {self.ppfd}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in FEATURE_NAMES], dtype=float)


class GainTriple(NamedTuple):
    kp: float
    ki: float
    kd: float


@dataclass(frozen=True)
class FeatureRanges:
    """Fixed per-feature affine ranges used to scale inputs to [0, 1]."""

    lo: tuple = (10.0, 0.0, 8.0, 300.0, 0.0, -1.5, -500.0)
    hi: tuple = (40.0, 1.0, 38.0, 2000.0, 1500.0, 1.5, 500.0)

    def __post_init__(self):
        if len(self.lo) != N_IN or len(self.hi) != N_IN:
            raise ValueError("feature ranges need exactly 7 entries")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("each feature range needs hi > lo")

    @property
    def lo_array(self) -> np.ndarray:
        return np.asarray(self.lo, dtype=float)

    @property
    def span_array(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=float) - self.lo_array


DEFAULT_RANGES = FeatureRanges()


def normalize(x_raw: np.ndarray, ranges: FeatureRanges = DEFAULT_RANGES) -> np.ndarray:
    """Scale raw features (shape ``(7,)`` or ``(n, 7)``) into the unit box."""
    return (np.asarray(x_raw, dtype=float) - ranges.lo_array) / ranges.span_array


def unpack(theta: np.ndarray):
    """Return ``(w1, b1, w2, b2)`` as views into ``theta``."""
    theta = np.asarray(theta)
    if theta.shape != (N_PARAMS,):
        raise ModelDomainError(f"expected 36 parameters, got shape {theta.shape}")
    return (
        theta[_W1].reshape(N_HIDDEN, N_IN),
        theta[_B1],
        theta[_W2].reshape(N_OUT, N_HIDDEN),
        theta[_B2],
    )


def pack(w1, b1, w2, b2) -> np.ndarray:
    return np.concatenate(
        [np.ravel(w1), np.ravel(b1), np.ravel(w2), np.ravel(b2)]
    ).astype(float)


def init_params(rng: np.random.Generator, scale: float = 0.5) -> np.ndarray:
    return rng.uniform(-scale, scale, size=N_PARAMS)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ModelDomainError("non-finite value in model input")


def forward(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on normalized features.

    ``x`` may be a single feature vector of shape ``(7,)`` or a batch of
    shape ``(n, 7)``; the result has shape ``(3,)`` or ``(n, 3)`` with
    columns ``(kp, ki, kd)``.
    """
    x = np.asarray(x, dtype=float)
    _check_finite(theta, x)
    w1, b1, w2, b2 = unpack(theta)
    h = _sigmoid(x @ w1.T + b1)
    return h @ w2.T + b2


def predict_gains(theta: np.ndarray, x: FeatureVector, ranges: FeatureRanges = DEFAULT_RANGES) -> GainTriple:
    out = forward(theta, normalize(x.as_array(), ranges))
    return GainTriple(*map(float, out))


@dataclass
class Dataset:
    """Training samples held column-wise.

    ``x`` holds raw (unnormalized) features, ``y`` target gains in model
    units. ``facility_id`` and ``timestamp`` are carried for CSV export.
    """

    x: np.ndarray
    y: np.ndarray
    facility_id: int = -1
    timestamp: np.ndarray | None = None
    fault: bool = False
    ranges: FeatureRanges = field(default=DEFAULT_RANGES, repr=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1, N_IN)
        self.y = np.asarray(self.y, dtype=float).reshape(-1, N_OUT)
        if len(self.x) != len(self.y):
            raise ValueError("x and y must have the same number of rows")
        self._xn = None

    def __len__(self) -> int:
        return len(self.x)

    @property
    def xn(self) -> np.ndarray:
        if self._xn is None:
            self._xn = normalize(self.x, self.ranges)
        return self._xn

    def subset(self, idx) -> "Dataset":
        ts = None if self.timestamp is None else self.timestamp[idx]
        return Dataset(self.x[idx], self.y[idx], self.facility_id, ts, self.fault, self.ranges)

    def samples(self) -> Iterator[tuple[FeatureVector, GainTriple]]:
        for xi, yi in zip(self.x, self.y):
            yield FeatureVector(*map(float, xi)), GainTriple(*map(float, yi))

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        return cls(
            np.concatenate([p.x for p in parts]),
            np.concatenate([p.y for p in parts]),
            ranges=parts[0].ranges,
        )


def _batch_arrays(batch):
    if isinstance(batch, Dataset):
        return batch.xn, batch.y
    xn, y = batch
    return np.asarray(xn, dtype=float).reshape(-1, N_IN), np.asarray(y, dtype=float).reshape(-1, N_OUT)


def loss(theta: np.ndarray, batch) -> float:
    """Mean over samples of the squared Euclidean error across the 3 gains.

    ``batch`` is a :class:`Dataset` or a tuple ``(x_normalized, y)``.
    """
    xn, y = _batch_arrays(batch)
    if len(xn) == 0:
        raise ModelDomainError("loss of an empty batch is undefined")
    _check_finite(y)
    r = forward(theta, xn) - y
    return float(np.mean(np.sum(r * r, axis=1)))


def gradient(theta: np.ndarray, batch) -> np.ndarray:
    """Analytic gradient of :func:`loss` with respect to all 36 parameters."""
    xn, y = _batch_arrays(batch)
    n = len(xn)
    if n == 0:
        raise ModelDomainError("gradient of an empty batch is undefined")
    _check_finite(theta, xn, y)
    w1, b1, w2, b2 = unpack(theta)
    h = _sigmoid(xn @ w1.T + b1)
    out = h @ w2.T + b2
    d_out = 2.0 * (out - y) / n
    g_w2 = d_out.T @ h
    g_b2 = d_out.sum(axis=0)
    d_pre = (d_out @ w2) * h * (1.0 - h)
    g_w1 = d_pre.T @ xn
    g_b1 = d_pre.sum(axis=0)
    return pack(g_w1, g_b1, g_w2, g_b2)


class TierSplit(NamedTuple):
    theta_g: np.ndarray
    theta_c: np.ndarray
    theta_l: np.ndarray


def split_tiers(theta: np.ndarray) -> TierSplit:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (N_PARAMS,):
        raise ModelDomainError(f"expected 36 parameters, got shape {theta.shape}")
    return TierSplit(theta[GLOBAL_IDX].copy(), theta[CLUSTER_IDX].copy(), theta[LOCAL_IDX].copy())


def merge_tiers(theta_g, theta_c, theta_l) -> np.ndarray:
    theta = np.empty(N_PARAMS)
    theta[GLOBAL_IDX] = theta_g
    theta[CLUSTER_IDX] = theta_c
    theta[LOCAL_IDX] = np.ravel(theta_l)
    return theta


def serialize_params(theta: np.ndarray) -> bytes:
    """36 little-endian float32 values in flat order."""
    return np.asarray(theta, dtype="<f4").tobytes()


def deserialize_params(blob: bytes) -> np.ndarray:
    if len(blob) != 4 * N_PARAMS:
        raise ModelDomainError(f"expected {4 * N_PARAMS} bytes, got {len(blob)}")
    return np.frombuffer(blob, dtype="<f4").astype(float)
