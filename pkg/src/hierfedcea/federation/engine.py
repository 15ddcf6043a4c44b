"""Round loop for HierFedCEA and the baseline algorithms.

Every random draw comes from a stream keyed by (run seed, purpose tag,
facility, round), so datasets and initial weights are shared by all
algorithms run with one seed, and results do not depend on the order in
which clients are processed.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, replace

import numpy as np

from ..metrics import cold_start_days, energy_kwh_m2_day, rmse_vpd
from ..model import (DEFAULT_RANGES, BODY_IDX, CLUSTER_IDX, GLOBAL_IDX, HEAD_IDX, LOCAL_IDX, Dataset, ModelDomainError,
                     FeatureRanges, gradient, init_params, loss, merge_tiers)
from ..privacy import PrivacyLedger
from ..scenario import ScenarioConfig, reference_facility
from ..sim.dataset import generate_dataset, rollout
from ..sim.profiles import FacilityProfile, make_facility
from . import wire
from .ops import (TAG_ADAPT, TAG_NOISE, TAG_TRAIN, aggregate_cluster, aggregate_global, cold_start_join,
                  compute_g_ref, initial_clusters, local_train, make_update, param_mask, refine_clusters,
                  release_flat)
from .types import (AlgorithmKind, ClientState, FacilityRoundRecord, FederationConfigError, RoundConfig,
                    RoundReport, ServerState)

TAG_DATA = 21
TAG_ROOT = 22
TAG_INIT = 23
TAG_EVAL = 24
TAG_CENTRAL = 25
TAG_COLD = 26

LOSS_ROWS = 512
RAW_SAMPLE_BYTES = 40  # 10 float32 per uploaded training row
FLAT_FLOATS = 36

_DATA_CACHE: OrderedDict = OrderedDict()
_DATA_CACHE_MAX = 96


def _stream(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def cached_dataset(profile: FacilityProfile, days: int, key: tuple, label_noise: float,
                   ranges: FeatureRanges = DEFAULT_RANGES) -> Dataset:
    """Simulated training data for ``profile``, memoized per process."""
    ck = (profile.id, profile.packed().tobytes(), profile.samples_per_cycle, days, key, label_noise, ranges)
    ds = _DATA_CACHE.get(ck)
    if ds is None:
        ds = generate_dataset(profile, days, _stream(*key), label_noise=label_noise, ranges=ranges)
        _DATA_CACHE[ck] = ds
        while len(_DATA_CACHE) > _DATA_CACHE_MAX:
            _DATA_CACHE.popitem(last=False)
    else:
        _DATA_CACHE.move_to_end(ck)
    return ds


@dataclass
class Environment:
    scenario: ScenarioConfig
    seed: int
    profiles: dict
    datasets: dict
    root: Dataset
    byzantine: frozenset
    theta0: np.ndarray

    @property
    def ids(self) -> list:
        return sorted(self.profiles)

    @property
    def honest(self) -> list:
        return [k for k in self.ids if k not in self.byzantine]

    def eval_seed(self, k: int) -> int:
        return int(np.random.SeedSequence([self.seed, TAG_EVAL, k]).generate_state(1)[0])

    def loss_rows(self, k: int) -> np.ndarray:
        n = len(self.datasets[k])
        return np.sort(_stream(self.seed, TAG_EVAL, k).permutation(n)[:LOSS_ROWS])


def build_environment(scenario: ScenarioConfig, seed: int) -> Environment:
    profiles = {p.id: p for p in scenario.population(seed)}
    if len(profiles) != scenario.n_facilities:
        raise FederationConfigError("facility ids must be unique")
    datasets = {k: cached_dataset(p, scenario.sim_days, (seed, TAG_DATA, k), scenario.label_noise,
                                  scenario.ranges)
                for k, p in sorted(profiles.items())}
    root_days = 10
    root = cached_dataset(reference_facility(), root_days, (seed, TAG_ROOT), scenario.label_noise,
                          scenario.ranges)
    root_rng = _stream(seed, TAG_ROOT, 1)
    if len(root) > scenario.root_samples:
        root = root.subset(np.sort(root_rng.choice(len(root), scenario.root_samples, replace=False)))
    theta0 = init_params(_stream(seed, TAG_INIT))
    ids = sorted(profiles)
    byz = frozenset(ids[i] for i in sorted(scenario.byzantine_ids()))
    return Environment(scenario, seed, profiles, datasets, root, byz, theta0)


def evaluate_facility(env: Environment, k: int, theta: np.ndarray) -> tuple[float, float, float, str]:
    """Rollout RMSE, energy and training loss of ``theta`` at facility ``k``."""
    sc = env.scenario
    err = ""
    try:
        tr = rollout(env.profiles[k], theta, start_day=sc.sim_days, hours=sc.eval_hours,
                     warmup_hours=sc.warmup_hours, seed=env.eval_seed(k), ranges=sc.ranges)
        rmse, energy = rmse_vpd(tr), energy_kwh_m2_day(tr)
    except (ModelDomainError, ArithmeticError) as exc:
        rmse, energy, err = math.nan, math.nan, f"rollout: {exc}"
    if not (math.isfinite(rmse) and math.isfinite(energy)):
        err = err or "rollout: non-finite state"
    ds = env.datasets[k]
    rows = env.loss_rows(k)
    try:
        lval = loss(theta, (ds.xn[rows], ds.y[rows]))
    except (ModelDomainError, ArithmeticError) as exc:
        lval, err = math.nan, err or f"loss: {exc}"
    return rmse, energy, lval, err


class _Runner:
    """State and one-round update for one algorithm."""

    releases = True  # whether model updates leave the clients under DP

    def __init__(self, env: Environment, cfg: RoundConfig):
        self.env = env
        self.cfg = cfg
        self.mask = param_mask(cfg.freeze_local)
        self.clients = {k: ClientState(k, env.datasets[k], theta_l=float(env.theta0[LOCAL_IDX[0]]),
                                       seed=env.seed) for k in env.ids}
        self.ledger = PrivacyLedger(cfg.dp.z_g, cfg.dp.z_c, cfg.dp.delta)
        self.errors: dict = {}

    def _train(self, k: int, start: np.ndarray, t: int, **kw) -> np.ndarray | None:
        c = self.clients[k]
        try:
            out = local_train(c, start, self.cfg, rng=c.rng(TAG_TRAIN, t), mask=self.mask, **kw)
        except (ModelDomainError, ArithmeticError) as exc:
            self.errors[k] = f"train: {exc}"
            return None
        if not np.all(np.isfinite(out)):
            self.errors[k] = "train: non-finite parameters"
            return None
        return out

    def step(self, t: int) -> dict:
        raise NotImplementedError

    def params_for(self, k: int, t: int) -> np.ndarray:
        raise NotImplementedError

    def cluster_of(self, k: int) -> int:
        return 0

    def fleet_model(self) -> np.ndarray | None:
        return None

    def ledger_snapshot(self) -> dict:
        return self.ledger.snapshot()


def _flip_mean(vals: dict) -> np.ndarray:
    return -np.mean([vals[k] for k in sorted(vals)], axis=0)


class HierFedCEARunner(_Runner):
    def __init__(self, env, cfg):
        super().__init__(env, cfg)
        th = env.theta0
        clusters = initial_clusters([env.profiles[k] for k in env.ids], single=cfg.single_cluster)
        self.server = ServerState(th[GLOBAL_IDX].copy(), {cid: th[CLUSTER_IDX].copy() for cid in clusters},
                                  clusters, ledger=self.ledger)
        for k in env.ids:
            self.clients[k].cluster_id = self.server.cluster_of(k)

    def _reference_cluster_model(self) -> np.ndarray:
        ids = sorted(self.server.clusters)
        sizes = np.array([len(self.server.clusters[c]) for c in ids], dtype=float)
        return np.sum([w * self.server.cluster_models[c] for w, c in zip(sizes / sizes.sum(), ids)], axis=0)

    def step(self, t):
        env, cfg, srv = self.env, self.cfg, self.server
        dg, dc, n = {}, {}, {}
        for k in env.honest:
            c = self.clients[k]
            start = merge_tiers(srv.theta_g, srv.cluster_models[c.cluster_id], c.theta_l)
            trained = self._train(k, start, t, prox_anchor=start)
            if trained is None:
                continue
            if not cfg.freeze_local:
                c.theta_l = float(trained[LOCAL_IDX[0]])
            dg[k], dc[k] = make_update(trained, start, cfg.dp, c.rng(TAG_NOISE, t), c.n)
            n[k] = c.n
        if dg:
            fg, fc = _flip_mean(dg), _flip_mean(dc)
            for k in sorted(env.byzantine):
                dg[k], dc[k], n[k] = fg.copy(), fc.copy(), self.clients[k].n
        if cfg.trust:
            ref = merge_tiers(srv.theta_g, self._reference_cluster_model(), 0.0)
            srv.g_ref = compute_g_ref(env.root, ref)
        agg = aggregate_global(srv, dg, n, use_trust=cfg.trust) if dg else None
        skipped = agg is None or agg.skipped
        if agg is not None:
            srv.theta_g = agg.theta_g
        for cid, members in srv.clusters.items():
            srv.cluster_models[cid] = aggregate_cluster(
                srv.cluster_models[cid], {k: dc[k] for k in members if k in dc}, n)
        r = t + 1
        moves = []
        if not cfg.single_cluster and r > cfg.t_warm and r % cfg.reassign_period == 0 and dc:
            srv.clusters, moves = refine_clusters(srv, dc, cfg)
            srv.cluster_models = {cid: srv.cluster_models[cid] for cid in srv.clusters}
            for k in env.ids:
                self.clients[k].cluster_id = srv.cluster_of(k)
        srv.round = r
        self.ledger.record()
        trust = {} if agg is None else agg.trust
        for k, ts in trust.items():
            self.clients[k].trust_history.append(ts)
        return {"trust": trust, "skipped": skipped, "moves": moves,
                "comm": wire.round_payload_bytes(len(env.ids))}

    def params_for(self, k, t):
        c = self.clients[k]
        return merge_tiers(self.server.theta_g, self.server.cluster_models[c.cluster_id], c.theta_l)

    def cluster_of(self, k):
        return self.clients[k].cluster_id

    def fleet_model(self):
        tl = float(np.mean([self.clients[k].theta_l for k in self.env.honest]))
        return merge_tiers(self.server.theta_g, self._reference_cluster_model(), tl)


class FlatRunner(_Runner):
    """FedAvg, FedProx, Scaffold and first-order PerFedAvg on the full 36-vector."""

    def __init__(self, env, cfg, kind: AlgorithmKind):
        super().__init__(env, cfg)
        self.kind = kind
        self.theta = env.theta0.copy()
        self.c_server = np.zeros_like(self.theta)

    def step(self, t):
        env, cfg = self.env, self.cfg
        deltas, n, dcv = {}, {}, {}
        start = self.theta
        for k in env.honest:
            c = self.clients[k]
            if self.kind is AlgorithmKind.FEDPROX:
                trained = self._train(k, start, t, prox_anchor=start)
            elif self.kind is AlgorithmKind.PERFEDAVG:
                trained = self._train(k, start, t, meta=True)
            elif self.kind is AlgorithmKind.SCAFFOLD:
                steps0 = c.local_steps
                trained = self._train(k, start, t, correction=self.c_server - c.control_variate)
                steps = c.local_steps - steps0
                if trained is not None and steps > 0 and cfg.lr > 0:
                    new_cv = c.control_variate - self.c_server + (start - trained) / (steps * cfg.lr)
                    dcv[k] = new_cv - c.control_variate
                    c.control_variate = new_cv
            else:
                trained = self._train(k, start, t)
            if trained is None:
                continue
            deltas[k] = release_flat(trained - start, cfg.dp, c.n, c.rng(TAG_NOISE, t))
            n[k] = c.n
        if deltas:
            flip = _flip_mean(deltas)
            for k in sorted(env.byzantine):
                deltas[k], n[k] = flip.copy(), self.clients[k].n
            total = sum(n.values())
            step = np.zeros_like(self.theta)
            for k in sorted(deltas):
                step += (n[k] / total) * deltas[k]
            self.theta = self.theta + step
        if dcv:
            acc = np.zeros_like(self.c_server)
            for k in sorted(dcv):
                acc += dcv[k]
            self.c_server = self.c_server + acc / len(env.ids)
        self.ledger.record()
        floats = 2 * FLAT_FLOATS if self.kind is AlgorithmKind.SCAFFOLD else FLAT_FLOATS
        return {"comm": wire.round_payload_bytes(len(env.ids), floats)}

    def params_for(self, k, t):
        if self.kind is not AlgorithmKind.PERFEDAVG:
            return self.theta
        ds = self.env.datasets[k]
        rng = self.clients[k].rng(TAG_ADAPT, t)
        rows = rng.choice(len(ds), size=min(self.cfg.batch, len(ds)), replace=False)
        return self.theta - self.cfg.lr * self.mask * gradient(self.theta, (ds.xn[rows], ds.y[rows]))

    def fleet_model(self):
        return self.theta.copy()


class FedPerRunner(_Runner):
    """Hidden layer shared and averaged; output layer personal."""

    def __init__(self, env, cfg):
        super().__init__(env, cfg)
        self.body = env.theta0[BODY_IDX].copy()
        self.heads = {k: env.theta0[HEAD_IDX].copy() for k in env.ids}

    def _full(self, k):
        return np.concatenate([self.body, self.heads[k]])

    def step(self, t):
        env, cfg = self.env, self.cfg
        deltas, n = {}, {}
        for k in env.honest:
            c = self.clients[k]
            start = self._full(k)
            trained = self._train(k, start, t)
            if trained is None:
                continue
            self.heads[k] = trained[HEAD_IDX].copy()
            d = release_flat(trained - start, cfg.dp, c.n, c.rng(TAG_NOISE, t), shared=BODY_IDX)
            deltas[k], n[k] = d[BODY_IDX], c.n
        if deltas:
            flip = _flip_mean(deltas)
            for k in sorted(env.byzantine):
                deltas[k], n[k] = flip.copy(), self.clients[k].n
            total = sum(n.values())
            step = np.zeros_like(self.body)
            for k in sorted(deltas):
                step += (n[k] / total) * deltas[k]
            self.body = self.body + step
        self.ledger.record()
        return {"comm": wire.round_payload_bytes(len(env.ids), len(BODY_IDX))}

    def params_for(self, k, t):
        return self._full(k)


class LocalOnlyRunner(_Runner):
    releases = False

    def __init__(self, env, cfg):
        super().__init__(env, cfg)
        self.personal = {k: env.theta0.copy() for k in env.ids}

    def step(self, t):
        for k in self.env.honest:
            out = self._train(k, self.personal[k], t)
            if out is not None:
                self.personal[k] = out
        return {"comm": 0}

    def params_for(self, k, t):
        return self.personal[k]


class CentralizedRunner(_Runner):
    """One trainer on the pooled honest data; raw rows are uploaded once."""

    releases = False

    def __init__(self, env, cfg):
        super().__init__(env, cfg)
        pooled = Dataset.concat([env.datasets[k] for k in env.honest])
        self.pool = ClientState(0, pooled, seed=env.seed)
        self.theta = env.theta0.copy()
        self.upload = RAW_SAMPLE_BYTES * len(pooled)

    def _central_step(self, t):
        try:
            out = local_train(self.pool, self.theta, self.cfg, rng=_stream(self.env.seed, TAG_CENTRAL, t),
                              mask=self.mask)
        except (ModelDomainError, ArithmeticError) as exc:
            self.errors[-1] = f"train: {exc}"
            return
        if np.all(np.isfinite(out)):
            self.theta = out

    def step(self, t):
        self._central_step(t)
        return {"comm": self.upload if t == 0 else 0}

    def params_for(self, k, t):
        return self.theta

    def fleet_model(self):
        return self.theta.copy()

    def ledger_snapshot(self):
        return {"rounds_g": 0, "rounds_c": 0, "eps_g": math.inf, "eps_c": math.inf}


class TransferRunner(CentralizedRunner):
    """Centralized pretraining for ``t_warm`` rounds, then per-facility fine-tuning."""

    def __init__(self, env, cfg):
        super().__init__(env, cfg)
        self.personal: dict = {}

    def step(self, t):
        cfg = self.cfg
        if t < cfg.t_warm:
            return super().step(t)
        comm = 0
        if not self.personal:
            self.personal = {k: self.theta.copy() for k in self.env.ids}
            comm = len(self.env.ids) * 4 * FLAT_FLOATS
        for k in self.env.honest:
            out = self._train(k, self.personal[k], t)
            if out is not None:
                self.personal[k] = out
        return {"comm": comm + (self.upload if t == 0 else 0)}

    def params_for(self, k, t):
        return self.personal.get(k, self.theta)


def make_runner(kind: AlgorithmKind, env: Environment, cfg: RoundConfig) -> _Runner:
    if kind is AlgorithmKind.HIERFEDCEA:
        return HierFedCEARunner(env, cfg)
    if kind in (AlgorithmKind.FEDAVG, AlgorithmKind.FEDPROX, AlgorithmKind.SCAFFOLD, AlgorithmKind.PERFEDAVG):
        return FlatRunner(env, cfg, kind)
    if kind is AlgorithmKind.FEDPER:
        return FedPerRunner(env, cfg)
    if kind is AlgorithmKind.LOCAL_ONLY:
        return LocalOnlyRunner(env, cfg)
    if kind is AlgorithmKind.CENTRALIZED:
        return CentralizedRunner(env, cfg)
    if kind is AlgorithmKind.CURRENT_TL:
        return TransferRunner(env, cfg)
    raise FederationConfigError(f"no runner for {kind}")


def train(scenario: ScenarioConfig, seed: int | None = None, *, env: Environment | None = None,
          evaluate: bool = True) -> tuple[_Runner, list[RoundReport]]:
    """Run ``scenario.rounds`` rounds; returns the final runner state and the reports."""
    seed = scenario.seeds[0] if seed is None else int(seed)
    env = build_environment(scenario, seed) if env is None else env
    runner = make_runner(scenario.algorithm, env, scenario.round_cfg)
    reports = []
    comm = 0
    for t in range(scenario.rounds):
        runner.errors = {}
        info = runner.step(t)
        comm += info["comm"]
        trust = info.get("trust", {})
        records = []
        for k in env.ids:
            byz = k in env.byzantine
            if evaluate and not byz:
                rmse, energy, lval, err = evaluate_facility(env, k, runner.params_for(k, t))
            else:
                rmse = energy = lval = math.nan
                err = ""
            err = runner.errors.get(k, err)
            records.append(FacilityRoundRecord(k, runner.cluster_of(k), lval, rmse, energy,
                                               float(trust.get(k, math.nan)), byz, err))
        model = runner.fleet_model()
        reports.append(RoundReport(t + 1, records, runner.ledger_snapshot(), comm,
                                   bool(info.get("skipped", False)), list(info.get("moves", [])),
                                   None if model is None else model.copy()))
    return runner, reports


def run_training(scenario: ScenarioConfig, seed: int | None = None) -> list[RoundReport]:
    return train(scenario, seed)[1]


def run_baseline(kind: AlgorithmKind | str, scenario: ScenarioConfig, seed: int | None = None) -> list[RoundReport]:
    kind = kind if isinstance(kind, AlgorithmKind) else AlgorithmKind.parse(kind)
    return run_training(scenario.with_changes(algorithm=kind), seed)


def can_contribute(client: ClientState, cfg: RoundConfig) -> bool:
    """A joining client is held out of aggregation until it has taken ``t_warm`` local steps."""
    return client.local_steps >= cfg.t_warm


@dataclass
class ColdStartResult:
    algorithm: str
    seed: int
    daily_rmse: list
    fleet_rmse: float
    days_to_threshold: int | None
    cluster_id: int
    flag: str


def _cold_start_init(runner: _Runner, env: Environment, profile: FacilityProfile,
                     data: Dataset) -> tuple[np.ndarray, ClientState]:
    """Starting model a newcomer gets under each algorithm."""
    seed = env.seed
    if isinstance(runner, HierFedCEARunner):
        client = cold_start_join(runner.server, profile, data, seed=seed)
        return client.personal.copy(), client
    client = ClientState(profile.id, data, seed=seed)
    if isinstance(runner, LocalOnlyRunner):
        return env.theta0.copy(), client
    if isinstance(runner, FedPerRunner):
        return np.concatenate([runner.body, env.theta0[HEAD_IDX]]), client
    if isinstance(runner, (FlatRunner, CentralizedRunner)):
        return runner.theta.copy(), client
    raise FederationConfigError(f"cold start not defined for {type(runner).__name__}")


def cold_start(scenario: ScenarioConfig, seed: int | None = None, *,
               trained: tuple[_Runner, list[RoundReport]] | None = None) -> ColdStartResult:
    """Train the fleet, then let a new facility learn day by day from its own data.

    Each simulated day the newcomer trains ``epochs_per_day`` epochs on all
    data gathered so far and is scored with the fixed evaluation rollout.
    The reference is the trained fleet's final mean RMSE under the same
    algorithm.
    """
    spec = scenario.cold_start
    if spec is None:
        raise FederationConfigError("scenario has no cold_start section")
    seed = scenario.seeds[0] if seed is None else int(seed)
    runner, reports = train(scenario, seed) if trained is None else trained
    env = runner.env
    fleet = reports[-1].fleet_rmse
    new_id = max(env.ids) + 1
    profile = make_facility(new_id, spec.crop, spec.climate_zone, spec.equipment,
                            zone_count=scenario.zone_count, samples_per_cycle=scenario.samples_per_cycle)
    full = cached_dataset(profile, spec.days, (seed, TAG_COLD, new_id), scenario.label_noise,
                          scenario.ranges)
    theta, client = _cold_start_init(runner, env, profile, full.subset(np.arange(0)))
    cfg = replace(scenario.round_cfg, local_epochs=spec.epochs_per_day)
    eval_env = replace(env, profiles={**env.profiles, new_id: profile},
                       datasets={**env.datasets, new_id: full})
    daily = []
    for day in range(1, spec.days + 1):
        have = np.flatnonzero(full.timestamp < day * 86400.0)
        if len(have):
            client.dataset = full.subset(have)
            try:
                out = local_train(client, theta, cfg, rng=client.rng(TAG_TRAIN, TAG_COLD, day),
                                  mask=param_mask(cfg.freeze_local))
                if np.all(np.isfinite(out)):
                    theta = out
            except (ModelDomainError, ArithmeticError):
                pass
        rmse, _, _, _ = evaluate_facility(eval_env, new_id, theta)
        daily.append(rmse)
    days = cold_start_days(daily, fleet) if math.isfinite(fleet) and fleet > 0 else None
    return ColdStartResult(scenario.algorithm.label, seed, daily, fleet, days, client.cluster_id, client.flag)
