"""Acceptance checks; each prints one PASS/FAIL line and fails honestly when red.

Desk-scale runs (K=12, T=120, 60 simulated days, seeds 0-2) are shared
between criteria through a module-level cache and written under
``results/acceptance`` (override with HIERFEDCEA_ACCEPTANCE_OUT).
Lines marked INFO repeat a check under the per-sample sensitivity
convention for comparison; they never decide a verdict.
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from hierfedcea.federation import AlgorithmKind as A
from hierfedcea.federation import decode_update, encode_update, make_update, train
from hierfedcea.federation.wire import FRAME_BYTES, total_payload_bytes
from hierfedcea.harness import experiments as X
from hierfedcea.metrics import paired_wilcoxon, rounds_to_convergence
from hierfedcea.model import CLUSTER_IDX, GLOBAL_IDX, LOCAL_IDX, N_PARAMS, gradient, loss, merge_tiers, split_tiers
from hierfedcea.privacy import DpConfig, excess_risk_bound, rdp_epsilon, rdp_epsilon_analytic
from hierfedcea.scenario import ColdStartSpec, ScenarioConfig
from hierfedcea.sim.population import HETEROGENEITY_LEVELS
from hierfedcea.sim.control import FopdtActuator, actuator_step
from hierfedcea.sim.profiles import make_facility
from hierfedcea.sim.psychro import humidity_ratio
from hierfedcea.sim.zone import WeatherSample, ZoneState, step_zone, weather_sample

OUT = Path(os.environ.get("HIERFEDCEA_ACCEPTANCE_OUT", Path(__file__).resolve().parents[1] / "results" / "acceptance"))
ORDER = (A.CENTRALIZED, A.HIERFEDCEA, A.FEDPER, A.FEDPROX, A.FEDAVG, A.LOCAL_ONLY)
ALPHA = 0.05
CLIP, PER_SAMPLE = "clip", "per_sample"


def _desk(kind, sensitivity=CLIP, **kw) -> ScenarioConfig:
    sc = X.desk_scenario(kind, **kw)
    if sensitivity == PER_SAMPLE:
        sc = X.with_sensitivity(sc, PER_SAMPLE).with_changes(name=sc.name.replace("desk-", "desk-ps-"))
    return sc


class Bench:
    """Trains each (scenario, seed) once and writes its artifacts."""

    def __init__(self, out: Path):
        self.out = out
        self.runs = {}
        self.scenarios = {}

    def get(self, sc: ScenarioConfig, seed: int):
        key = (sc.name, seed)
        if key not in self.runs:
            self.runs[key] = train(sc, seed)
            self.scenarios[sc.name] = sc
            X.run_one(sc, seed, self.out / "runs", trained=self.runs[key])
        return self.runs[key]

    def all_seeds(self, sc: ScenarioConfig) -> list:
        return [self.get(sc, s) for s in sc.seeds]

    def summaries(self, names) -> list:
        return [X.summarize(self.scenarios[n], s, self.runs[(n, s)][1])
                for n in names for s in self.scenarios[n].seeds]


@pytest.fixture(scope="module")
def bench():
    OUT.mkdir(parents=True, exist_ok=True)
    return Bench(OUT)


def _final_per_facility(reports) -> dict:
    return {r.facility_id: r.rmse for r in reports[-1].honest}


def _fleet_mean(runs) -> float:
    return float(np.mean([rep[-1].fleet_rmse for _, rep in runs]))


def _paired(runs_a, runs_b):
    a, b = [], []
    for (_, ra), (_, rb) in zip(runs_a, runs_b):
        fa, fb = _final_per_facility(ra), _final_per_facility(rb)
        for k in sorted(fa):
            if math.isfinite(fa[k]) and math.isfinite(fb.get(k, math.nan)):
                a.append(fa[k])
                b.append(fb[k])
    return np.array(a), np.array(b)


# ---- 1-6: structural and oracle checks ----

def test_c1_structural_exactness(verdict):
    t0 = time.perf_counter()
    sizes = (len(GLOBAL_IDX), len(CLUSTER_IDX), len(LOCAL_IDX))
    rng = np.random.default_rng(1)
    round_trip = True
    local_absent = True
    for i in range(200):
        theta = rng.normal(size=N_PARAMS) * 10.0 ** rng.integers(-3, 4)
        round_trip &= bool(np.array_equal(merge_tiers(*split_tiers(theta)), theta))
        other = theta.copy()
        other[LOCAL_IDX] = rng.normal(size=len(LOCAL_IDX)) * 1e3
        ref = np.zeros(N_PARAMS)
        dp = DpConfig(clip_c=1e9, z_g=0.0, z_c=0.0)
        fa = encode_update(i, 0, *make_update(theta, ref, dp, np.random.default_rng(0)))
        fb = encode_update(i, 0, *make_update(other, ref, dp, np.random.default_rng(0)))
        _, _, g, c = decode_update(fa)
        local_absent &= fa == fb and len(fa) == FRAME_BYTES and len(g) + len(c) == N_PARAMS - len(LOCAL_IDX)
    dt = time.perf_counter() - t0
    ok = sizes == (18, 17, 1) and sum(sizes) == 36 and round_trip and local_absent and dt < 1.0
    verdict("C1", ok, f"tiers {sizes} sum {sum(sizes)}; split/merge identity {round_trip} over 200 vectors; "
                      f"local parameter absent from {FRAME_BYTES} B frames {local_absent}; {dt:.3f} s")
    assert ok


def test_c2_communication_arithmetic(verdict):
    t0 = time.perf_counter()
    arith = total_payload_bytes(30, 100)
    dt = time.perf_counter() - t0
    # dry run through the engine: no local epochs, no evaluation
    sc = ScenarioConfig(name="dry", facilities=30, rounds=100, sim_days=1, seeds=(0,)).with_round(local_epochs=0)
    t1 = time.perf_counter()
    _, reps = train(sc, 0, evaluate=False)
    engine_s = time.perf_counter() - t1
    counted = reps[-1].comm_bytes
    ok = arith == 840_000 and counted == 840_000 and dt < 1.0
    verdict("C2", ok, f"arithmetic {arith} B in {dt * 1e3:.3f} ms; engine counter {counted} B "
                      f"(dry run {engine_s:.1f} s)")
    assert ok


def test_c3_gradient_oracle(verdict):
    rng = np.random.default_rng(7)
    h = 1e-5
    worst = 0.0
    for _ in range(100):
        theta = rng.normal(0, 1, N_PARAMS)
        n = int(rng.integers(1, 9))
        batch = (rng.random((n, 7)), rng.normal(0, 1, (n, 3)))
        g = gradient(theta, batch)
        fd = np.empty(N_PARAMS)
        for i in range(N_PARAMS):
            e = np.zeros(N_PARAMS)
            e[i] = h
            fd[i] = (loss(theta + e, batch) - loss(theta - e, batch)) / (2 * h)
        worst = max(worst, float((np.abs(g - fd) / np.maximum(np.abs(fd), 1e-6)).max()))
    ok = worst < 1e-5
    verdict("C3", ok, f"worst per-component relative error {worst:.2e} over 100 cases x 36 components "
                      f"(central step {h:g}, denominator floor 1e-6)")
    assert ok


def test_c4_algorithm_degeneracy(verdict):
    t0 = time.perf_counter()
    sc = ScenarioConfig(name="degenerate", facilities=5, rounds=20, sim_days=10, seeds=(0,))
    sc = sc.with_round(dp=DpConfig(z_g=0.0, z_c=0.0), prox_mu=0.0, single_cluster=True, trust=False,
                       freeze_local=True)
    _, hier = train(sc, 0, evaluate=False)
    _, flat = train(sc.with_changes(algorithm=A.FEDAVG), 0, evaluate=False)
    diffs = [float(np.max(np.abs(a.model - b.model))) for a, b in zip(hier, flat)]
    moved = float(np.max(np.abs(hier[-1].model - hier[0].model)))
    ok = len(diffs) == 20 and max(diffs) <= 1e-9 and moved > 0
    verdict("C4", ok, f"max per-round |HierFedCEA - FedAvg| {max(diffs):.2e} over 20 rounds, K=5; "
                      f"model moved {moved:.3f}; {time.perf_counter() - t0:.1f} s")
    assert ok


def _actuators(p, dt):
    acts = []
    for a in (p.hvac, p.dehum):
        f = FopdtActuator(a.gain, a.tau_p, a.dead_time, a.u_min, a.u_max)
        f.reset(0.0, dt)
        acts.append(f)
    return tuple(acts)


def _open_loop(p, dt, hours):
    acts = _actuators(p, dt)
    s = ZoneState.from_air(22.0, 0.6, ppfd=p.crop.ppfd, co2=p.crop.co2_day)
    out = []
    for k in range(int(hours * 3600 / dt)):
        t = k * dt
        cmd_h = 0.2 + 0.1 * math.sin(2 * math.pi * t / 7200.0)
        cmd_d = 0.5 + 0.4 * math.sin(2 * math.pi * t / 5400.0)
        s = step_zone(s, p, weather_sample(p.weather, t), cmd_h, cmd_d, dt, acts)
        out.append((s.t_air, s.rh))
    return np.array(out)


def test_c5_physics_oracles(verdict):
    t0 = time.perf_counter()
    p = make_facility(0, "tomato", 3, 2)
    th = p.thermal
    steady = []
    for cmd in (0.3, -0.5):
        dt, t_out = 60.0, 12.0
        acts = _actuators(p, dt)
        s = ZoneState.from_air(t_out, 0.5)
        w = WeatherSample(t_out, humidity_ratio(t_out, 0.5), 0.0)
        for _ in range(int(10 * th.c_th / th.ua / dt)):
            s = step_zone(s, p, w, cmd, 0.0, dt, acts)
        want = t_out + cmd * p.hvac.gain / th.ua
        steady.append(abs(s.t_air - want) / abs(want))

    a = FopdtActuator(1000.0, 120.0, 30.0)
    a.reset(0.0, 1.0)
    ys = [actuator_step(a, 1.0, 1.0) for _ in range(150)]
    fopdt = abs(ys[-1] - 632.0) / 632.0

    rng = np.random.default_rng(3)
    rh_ok = True
    for crop in ("lettuce", "tomato", "cannabis-flower", "herbs"):
        q = make_facility(1, crop, int(rng.integers(1, 9)), int(rng.integers(1, 6)))
        for _ in range(25):
            acts = _actuators(q, 30.0)
            s = ZoneState.from_air(rng.uniform(5, 35), rng.uniform(0, 1), ppfd=rng.uniform(0, 1500))
            t_out = rng.uniform(-10, 40)
            w = WeatherSample(t_out, humidity_ratio(t_out, rng.uniform(0, 1)), 0.0)
            hv, dh = rng.uniform(-1, 1), rng.uniform(0, 1)
            for _ in range(40):
                s = step_zone(s, q, w, hv, dh, 30.0, acts)
                rh_ok &= 0.0 <= s.rh <= 1.0

    # both steps divide the 30 s dead time, so the delay line is not requantized
    coarse, fine = _open_loop(p, 10.0, 6), _open_loop(p, 5.0, 6)[1::2]
    halving = float((np.abs(coarse - fine) / np.abs(fine)).max())

    dt_s = time.perf_counter() - t0
    ok = max(steady) < 0.01 and fopdt < 0.02 and rh_ok and halving < 0.005
    verdict("C5", ok, f"steady state err {max(steady):.2e}; FOPDT at dead+tau {ys[-1]:.1f} vs 632.0 "
                      f"({fopdt:.2%}); RH in [0,1] over 100 random runs {rh_ok}; dt 10->5 s max change "
                      f"{halving:.3%}; {dt_s:.1f} s")
    assert ok


def _grid_eps(z, rounds, delta=1e-5):
    a = np.geomspace(1.25, 512.0, 2_000_001)
    return float(np.min(rounds * a / (2 * z * z) + math.log(1 / delta) / (a - 1)))


def test_c6_accountant(verdict):
    rng = np.random.default_rng(11)
    pairs = [(float(rng.uniform(0.5, 20)), int(rng.integers(1, 500))) for _ in range(20)]
    worst = 0.0
    for z, t in pairs:
        eps = rdp_epsilon(z, t)
        worst = max(worst, abs(eps - rdp_epsilon_analytic(z, t, 1e-5)) / eps, abs(eps - _grid_eps(z, t)) / eps)
    zs = np.geomspace(0.3, 50, 40)
    ts = np.arange(1, 400, 7)
    mono_z = all(np.all(np.diff([rdp_epsilon(z, t) for z in zs]) < 0) for t in (1, 50, 300))
    mono_t = all(np.all(np.diff([rdp_epsilon(z, int(t)) for t in ts]) > 0) for z in (0.5, 2.0, 10.0))
    bound = excess_risk_bound(17, 1e-5, 10000, 3.8)
    ok = worst < 1e-6 and mono_z and mono_t and 0.0013 <= bound <= 0.0015
    verdict("C6", ok, f"worst relative gap to analytic/dense-grid minimum {worst:.1e} over 20 (z, T) pairs; "
                      f"monotone in z {mono_z}, in T {mono_t}; excess risk bound {bound:.6f}; "
                      f"z=1, T=100 gives eps {rdp_epsilon(1.0, 100):.3f}")
    assert ok


# ---- 7-11: desk-scale experiments ----

def _ordering(bench, sensitivity):
    runs = {m: bench.all_seeds(_desk(m, sensitivity)) for m in ORDER}
    means = {m: _fleet_mean(runs[m]) for m in ORDER}
    parts, ok = [], True
    for lo, hi in zip(ORDER, ORDER[1:]):
        a, b = _paired(runs[lo], runs[hi])
        p = paired_wilcoxon(a, b)
        pair_ok = means[lo] <= means[hi] or p >= ALPHA
        ok &= pair_ok
        rel = "<=" if means[lo] <= means[hi] else (">~" if p >= ALPHA else ">")
        parts.append(f"{lo.label} {means[lo]:.4f} {rel} {hi.label} {means[hi]:.4f} (p={p:.3g}, n={len(a)})")
    ratio = means[A.HIERFEDCEA] / means[A.CENTRALIZED]
    ok &= ratio <= 1.15
    return ok, "; ".join(parts) + f"; HierFedCEA/Centralized {ratio:.3f} (limit 1.15)"


def test_c7_desk_ordering(bench, verdict):
    t0 = time.perf_counter()
    for m in A:
        if m not in ORDER:
            bench.all_seeds(_desk(m))
    ok, detail = _ordering(bench, CLIP)
    X.emit_table(bench.summaries([_desk(m).name for m in A]), OUT / "table_clip.csv")
    verdict("C7", ok, detail + f"; {time.perf_counter() - t0:.0f} s")
    ps_ok, ps_detail = _ordering(bench, PER_SAMPLE)
    X.emit_table(bench.summaries([_desk(m, PER_SAMPLE).name for m in ORDER]), OUT / "table_per_sample.csv")
    verdict("C7[per_sample]", None, f"{'would pass' if ps_ok else 'would fail'}: {ps_detail}")
    assert ok


def _conv(reports, rounds):
    c = rounds_to_convergence(reports)
    return (rounds + 1, f">{rounds}") if c is None else (c, str(c))


def test_c8_convergence_speedup(bench, verdict):
    lines, ok = [], True
    for sens in (CLIP, PER_SAMPLE):
        h = [_conv(r, 120) for _, r in bench.all_seeds(_desk(A.HIERFEDCEA, sens))]
        f = [_conv(r, 120) for _, r in bench.all_seeds(_desk(A.FEDAVG, sens))]
        mh, mf = np.mean([c for c, _ in h]), np.mean([c for c, _ in f])
        this = mh <= 0.5 * mf
        lines.append((this, f"HierFedCEA rounds {[s for _, s in h]} mean {mh:.1f}; FedAvg {[s for _, s in f]} "
                            f"mean {mf:.1f}; ratio {mh / mf:.2f} (limit 0.5, threshold 0.10 kPa held 3 rounds)"))
        if sens == CLIP:
            ok = this
    verdict("C8", ok, lines[0][1])
    verdict("C8[per_sample]", None, f"{'would pass' if lines[1][0] else 'would fail'}: {lines[1][1]}")
    assert ok


def test_c9_heterogeneity_degradation(bench, verdict):
    t0 = time.perf_counter()
    names, means = [], {}
    for lvl in HETEROGENEITY_LEVELS:
        for m in (A.HIERFEDCEA, A.FEDAVG):
            sc = _desk(m) if lvl == "Full" else _desk(m, heterogeneity_level=lvl).with_changes(
                name=f"het-{lvl}-{m.label}")
            means[(lvl, m)] = _fleet_mean(bench.all_seeds(sc))
            names.append(sc.name)
    X.emit_plotdata(bench.summaries(names), OUT / "heterogeneity.csv")
    inc = {m: (means[("Full", m)] - means[("IID", m)]) / means[("IID", m)] for m in (A.HIERFEDCEA, A.FEDAVG)}
    ok = inc[A.HIERFEDCEA] <= 0.5 * inc[A.FEDAVG]
    curve = ", ".join(f"{lvl} {means[(lvl, A.HIERFEDCEA)]:.4f}/{means[(lvl, A.FEDAVG)]:.4f}"
                      for lvl in HETEROGENEITY_LEVELS)
    verdict("C9", ok, f"IID->Full increase HierFedCEA {inc[A.HIERFEDCEA]:+.1%} vs FedAvg {inc[A.FEDAVG]:+.1%} "
                      f"(limit 0.5x); HierFedCEA/FedAvg by level: {curve}; {time.perf_counter() - t0:.0f} s")
    assert ok


def _privacy_pair(bench, sensitivity):
    base = _desk(A.HIERFEDCEA, sensitivity)
    tag = "ps-" if sensitivity == PER_SAMPLE else ""
    inf = base.with_round(dp=X.privacy_for_eps(math.inf, base.rounds, base.round_cfg.dp)).with_changes(
        name=f"desk-{tag}privacy-epsinf")
    four = base.with_round(dp=X.privacy_for_eps(4.0, base.rounds, base.round_cfg.dp)).with_changes(
        name=f"desk-{tag}privacy-eps4")
    m_inf, m_four = _fleet_mean(bench.all_seeds(inf)), _fleet_mean(bench.all_seeds(four))
    rel = (m_four - m_inf) / m_inf
    dp = four.round_cfg.dp
    return rel <= 0.10, (f"eps_C=4 (z_C={dp.z_c:.3f}, z_G={dp.z_g:.3f}, T={four.rounds}) RMSE {m_four:.4f} vs "
                         f"eps=inf {m_inf:.4f}: {rel:+.1%} (limit +10%)")


def test_c10_privacy_utility(bench, verdict):
    t0 = time.perf_counter()
    ok, detail = _privacy_pair(bench, CLIP)
    verdict("C10", ok, detail + f"; {time.perf_counter() - t0:.0f} s")
    ps_ok, ps_detail = _privacy_pair(bench, PER_SAMPLE)
    verdict("C10[per_sample]", None, f"{'would pass' if ps_ok else 'would fail'}: {ps_detail}")
    assert ok


def _cold(bench, sensitivity):
    methods = (A.HIERFEDCEA, A.FEDAVG, A.LOCAL_ONLY)
    trained = {(m, s): bench.get(_desk(m, sensitivity), s) for m in methods for s in (0, 1, 2)}
    base = _desk(A.HIERFEDCEA, sensitivity).with_changes(cold_start=ColdStartSpec())
    res = X.cold_start_suite(base, methods, trained=trained)
    tag = "" if sensitivity == CLIP else "_per_sample"
    X.write_cold_start(res, OUT / f"cold_start{tag}.json")
    days = base.cold_start.days
    got = {m: [(r.days_to_threshold or days + 1) for (mm, _), r in sorted(res.items()) if mm is m]
           for m in methods}
    show = {m: [str(d) if d <= days else f">{days}" for d in got[m]] for m in methods}
    mean = {m: float(np.mean(got[m])) for m in methods}
    ok = mean[A.HIERFEDCEA] <= 0.5 * mean[A.LOCAL_ONLY] and mean[A.HIERFEDCEA] <= mean[A.FEDAVG]
    return ok, (f"days to 85%-of-fleet threshold HierFedCEA {show[A.HIERFEDCEA]}, FedAvg {show[A.FEDAVG]}, "
                f"LocalOnly {show[A.LOCAL_ONLY]}; means {mean[A.HIERFEDCEA]:.1f}/{mean[A.FEDAVG]:.1f}/"
                f"{mean[A.LOCAL_ONLY]:.1f} (need HierFedCEA <= 0.5 x LocalOnly and <= FedAvg)")


def test_c11_cold_start(bench, verdict):
    t0 = time.perf_counter()
    ok, detail = _cold(bench, CLIP)
    verdict("C11", ok, detail + f"; {time.perf_counter() - t0:.0f} s")
    ps_ok, ps_detail = _cold(bench, PER_SAMPLE)
    verdict("C11[per_sample]", None, f"{'would pass' if ps_ok else 'would fail'}: {ps_detail}")
    assert ok


# ---- 12-13 ----

def _byzantine(dp):
    parts, ok = [], True
    for seed in (0, 1, 2):
        r = X.byzantine_probe(seed, dp=dp)
        positive = sum(1 for row in r.adversary_trust if any(v > 0 for v in row))
        peak = max(max(row) for row in r.adversary_trust)
        better = r.rmse_trust < r.rmse_plain
        ok &= positive == 0 and better
        parts.append(f"seed {seed}: adversary trust > 0 in {positive}/{len(r.adversary_trust)} rounds "
                     f"(max {peak:.3f}), RMSE trust {r.rmse_trust:.4f} vs plain {r.rmse_plain:.4f}")
    return ok, "; ".join(parts)


def test_c12_byzantine_damping(verdict):
    t0 = time.perf_counter()
    ok, detail = _byzantine(DpConfig(z_g=0.0))
    verdict("C12", ok, detail + f"; {time.perf_counter() - t0:.0f} s")
    ps_ok, ps_detail = _byzantine(DpConfig(z_g=0.0, sensitivity=PER_SAMPLE))
    verdict("C12[per_sample]", None, f"{'would pass' if ps_ok else 'would fail'}: {ps_detail}")
    assert ok


def _files(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


def test_c13_determinism(tmp_path, verdict):
    t0 = time.perf_counter()
    base = ScenarioConfig(facilities=6, rounds=20, sim_days=10, seeds=(0, 1))
    suite = [base.with_changes(name=f"det-{m.label}", algorithm=m) for m in (A.HIERFEDCEA, A.FEDAVG, A.SCAFFOLD)]
    X.run_suite(suite, tmp_path / "a", workers=1)
    X.run_suite(suite, tmp_path / "b", workers=1)
    X.run_suite(suite, tmp_path / "c", workers=2)
    a, b, c = (_files(tmp_path / d) for d in "abc")
    ok = len(a) == 6 and a == b and a == c
    verdict("C13", ok, f"{len(a)} round CSVs; repeat identical {a == b}; workers 1 vs 2 identical {a == c}; "
                       f"{time.perf_counter() - t0:.0f} s")
    assert ok
