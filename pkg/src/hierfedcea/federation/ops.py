"""Client-side training and update release, server-side aggregation."""

from __future__ import annotations

from typing import Mapping, NamedTuple

import numpy as np

from .. import sgd
from ..model import (CLUSTER_IDX, GLOBAL_IDX, LOCAL_IDX, N_PARAMS, Dataset, ModelDomainError,
                     gradient, merge_tiers, split_tiers)
from ..privacy import DpConfig, clip, gaussianize
from ..sim.profiles import CROP_CLUSTER, FacilityProfile
from .types import ClientState, FederationConfigError, RoundConfig, ServerState

TAG_TRAIN = 1
TAG_NOISE = 2
TAG_ADAPT = 3


def param_mask(freeze_local: bool = False, trainable=None) -> np.ndarray:
    m = np.ones(N_PARAMS)
    if trainable is not None:
        m[:] = 0.0
        m[np.asarray(trainable)] = 1.0
    if freeze_local:
        m[LOCAL_IDX] = 0.0
    return m


def local_train(client: ClientState, global_params: np.ndarray, cfg: RoundConfig,
                prox_anchor: np.ndarray | None = None, *, rng: np.random.Generator | None = None,
                mask: np.ndarray | None = None, correction: np.ndarray | None = None,
                meta: bool = False) -> np.ndarray:
    """``cfg.local_epochs`` epochs of minibatch SGD on the client's data.

    Every step's gradient is the loss gradient plus ``prox_mu (theta -
    anchor)`` when an anchor is given, plus ``correction`` when given
    (drift correction), then clipped to ``cfg.dp.clip_c``. ``meta``
    switches to first-order meta-learning steps. The row order comes from
    ``rng`` (default: the client's own stream).
    """
    ds = client.dataset
    if len(ds) == 0:
        raise ModelDomainError(f"facility {client.facility_id} has no training data")
    theta = np.asarray(global_params, dtype=float)
    if rng is None:
        rng = client.rng(TAG_TRAIN)
    perms = sgd.make_perms(rng, len(ds), cfg.local_epochs)
    mask = np.ones(N_PARAMS) if mask is None else np.asarray(mask, dtype=float)
    if cfg.lr == 0 or cfg.local_epochs == 0:
        return theta.copy()
    y = np.ascontiguousarray(ds.y)
    xn = np.ascontiguousarray(ds.xn)
    if meta:
        out, steps = sgd.fo_meta_epochs(theta, xn, y, perms, cfg.batch, cfg.lr, cfg.lr,
                                        cfg.dp.clip_c, mask)
    else:
        use_anchor = prox_anchor is not None and cfg.prox_mu > 0
        anchor = theta if prox_anchor is None else np.asarray(prox_anchor, dtype=float)
        corr = np.zeros(N_PARAMS) if correction is None else np.asarray(correction, dtype=float)
        out, steps = sgd.sgd_epochs(theta, xn, y, perms, cfg.batch, cfg.lr, cfg.dp.clip_c,
                                    cfg.prox_mu, anchor, use_anchor, corr, correction is not None, mask)
    client.local_steps += steps
    return out


def release(v: np.ndarray, z: float, dp: DpConfig, n_k: int, rng: np.random.Generator) -> np.ndarray:
    """Clip ``v`` to the bound and add the tier's Gaussian noise."""
    return gaussianize(clip(v, dp.clip_c), z, dp.noise_std(1.0, n_k), rng)


def make_update(trained: np.ndarray, reference: np.ndarray, dp: DpConfig, rng: np.random.Generator,
                n_k: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Noised Tier-1 and Tier-2 deltas; the Tier-3 delta stays on the client."""
    d = split_tiers(np.asarray(trained, dtype=float) - np.asarray(reference, dtype=float))
    return release(d.theta_g, dp.z_g, dp, n_k, rng), release(d.theta_c, dp.z_c, dp, n_k, rng)


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def trust_score(delta_g: np.ndarray, g_ref: np.ndarray) -> float:
    if not np.any(np.asarray(g_ref) != 0):
        raise FederationConfigError("reference gradient is zero")
    return max(0.0, _cos(np.asarray(delta_g, dtype=float), np.asarray(g_ref, dtype=float)))


class GlobalAggregate(NamedTuple):
    theta_g: np.ndarray
    trust: dict
    weights: dict
    skipped: bool


def aggregate_global(server: ServerState, deltas: Mapping[int, np.ndarray], weights: Mapping[int, float],
                     use_trust: bool = True) -> GlobalAggregate:
    """Trust-weighted Tier-1 step; skipped (model unchanged) when every weight is zero."""
    keys = sorted(deltas)
    if use_trust:
        if server.g_ref is None:
            raise FederationConfigError("trust weighting needs a reference gradient")
        ts = {k: trust_score(deltas[k], server.g_ref) for k in keys}
    else:
        ts = {k: 1.0 for k in keys}
    raw = {k: ts[k] * float(weights[k]) for k in keys}
    total = sum(raw.values())
    if total <= 0:
        return GlobalAggregate(server.theta_g.copy(), ts, {k: 0.0 for k in keys}, True)
    w = {k: raw[k] / total for k in keys}
    step = np.zeros_like(server.theta_g)
    for k in keys:
        step += w[k] * np.asarray(deltas[k])
    return GlobalAggregate(server.theta_g + step, ts, w, False)


def aggregate_cluster(cluster_model: np.ndarray, deltas: Mapping[int, np.ndarray],
                      weights: Mapping[int, float]) -> np.ndarray:
    """Data-weighted mean of member deltas added to the cluster model."""
    keys = sorted(deltas)
    total = sum(float(weights[k]) for k in keys)
    if not keys or total <= 0:
        return np.array(cluster_model, dtype=float)
    step = np.zeros(len(cluster_model))
    for k in keys:
        step += (float(weights[k]) / total) * np.asarray(deltas[k])
    return np.asarray(cluster_model, dtype=float) + step


def refine_clusters(server: ServerState, tier2_grads: Mapping[int, np.ndarray],
                    cfg: RoundConfig) -> tuple[dict, list]:
    """Move facilities toward the cluster whose centroid their Tier-2 update matches best.

    Similarities and target sizes come from a snapshot; all moves apply at
    once. Ties go to the lowest cluster id. Returns the new cluster map and
    the list of ``(facility, from, to)`` moves.
    """
    clusters = {cid: set(m) for cid, m in server.clusters.items()}
    ids = sorted(clusters)
    centroids = {}
    for cid in ids:
        members = [k for k in sorted(clusters[cid]) if k in tier2_grads]
        if members:
            centroids[cid] = np.mean([np.asarray(tier2_grads[k]) for k in members], axis=0)
    sizes = {cid: len(clusters[cid]) for cid in ids}
    moves = []
    for k in sorted(tier2_grads):
        cur = next((c for c in ids if k in clusters[c]), None)
        if cur is None or cur not in centroids:
            continue
        cand = [c for c in ids if c in centroids]
        sims = np.array([_cos(np.asarray(tier2_grads[k]), centroids[c]) for c in cand])
        best = cand[int(np.argmax(sims))]
        gain = float(sims.max()) - _cos(np.asarray(tier2_grads[k]), centroids[cur])
        if best != cur and gain > cfg.tau and sizes[best] >= cfg.min_cluster_size:
            moves.append((k, cur, best))
    for k, src, dst in moves:
        clusters[src].discard(k)
        clusters[dst].add(k)
    clusters = {cid: m for cid, m in clusters.items() if m}
    return clusters, moves


def compute_g_ref(root: Dataset, params: np.ndarray) -> np.ndarray:
    """Descent direction of the root-set loss restricted to Tier 1."""
    if len(root) == 0:
        raise FederationConfigError("root dataset is empty")
    g = -gradient(params, root)[GLOBAL_IDX]
    if not np.any(g != 0):
        raise FederationConfigError("root gradient vanished; cannot score trust")
    return g


def nearest_cluster(server: ServerState, family: str) -> tuple[int, bool]:
    """Cluster for a declared crop family, falling back to the closest existing id."""
    want = CROP_CLUSTER.get(family)
    if want is not None and want in server.clusters:
        return want, False
    ids = sorted(server.clusters)
    if not ids:
        raise FederationConfigError("server has no clusters")
    ref = 0 if want is None else want
    return min(ids, key=lambda c: (abs(c - ref), c)), True


def cold_start_join(server: ServerState, new_profile: FacilityProfile, dataset: Dataset,
                    seed: int = 0) -> ClientState:
    """New client initialised from fleet state: 35 parameters inherited, Tier 3 at zero."""
    cid, fallback = nearest_cluster(server, new_profile.crop.family)
    client = ClientState(new_profile.id, dataset, theta_l=0.0, cluster_id=cid, seed=seed,
                         flag="cluster-fallback" if fallback else "")
    client.personal = merge_tiers(server.theta_g, server.cluster_models[cid], 0.0)
    return client


def initial_clusters(profiles, single: bool = False) -> dict:
    if single:
        return {0: {p.id for p in profiles}}
    out: dict = {}
    for p in profiles:
        out.setdefault(CROP_CLUSTER[p.crop.family], set()).add(p.id)
    return out


def flat_slices() -> list[tuple[np.ndarray, str]]:
    """Tier slices used to clip and noise a full 36-parameter update."""
    rest = np.sort(np.concatenate([CLUSTER_IDX, LOCAL_IDX]))
    return [(GLOBAL_IDX, "g"), (rest, "c")]


def release_flat(delta: np.ndarray, dp: DpConfig, n_k: int, rng: np.random.Generator,
                 shared: np.ndarray | None = None) -> np.ndarray:
    """Clip and noise the shared part of a flat update tier by tier.

    ``shared`` restricts the release to those indices (others come back as
    zero); each tier slice intersected with it is clipped and noised with
    that tier's multiplier.
    """
    delta = np.asarray(delta, dtype=float)
    out = np.zeros_like(delta)
    keep = np.arange(N_PARAMS) if shared is None else np.asarray(shared)
    for idx, tier in flat_slices():
        sel = np.intersect1d(idx, keep)
        if len(sel) == 0:
            continue
        z = dp.z_g if tier == "g" else dp.z_c
        out[sel] = release(delta[sel], z, dp, n_k, rng)
    return out
