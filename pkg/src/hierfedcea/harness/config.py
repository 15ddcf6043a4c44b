"""YAML scenario files.

A scenario file is a mapping; every section and key is optional except
``algorithm``, ``facilities``, ``rounds`` and ``seeds``. Unknown keys and
invalid values raise :class:`ScenarioError` naming the field and the line.

Example::

    name: desk-fedavg
    algorithm: FedAvg
    facilities: 12            # or a list of {crop, climate_zone, equipment}
    rounds: 120
    seeds: [0, 1, 2]
    sim_days: 60
    heterogeneity_level: Full
    round:
      lr: 0.01
      local_epochs: 5
    privacy:
      z_g: 0.8
      z_c: 1.0              # or eps_g / eps_c targets solved by the accountant
    feature_ranges:
      rh: [0.0, 1.0]
"""

from __future__ import annotations

import math
from dataclasses import fields
from pathlib import Path

import yaml

from ..federation.types import AlgorithmKind, FederationConfigError, RoundConfig
from ..model import DEFAULT_RANGES, FEATURE_NAMES, FeatureRanges
from ..privacy import DpConfig, PrivacyConfigError, solve_z
from ..scenario import ByzantineSpec, ColdStartSpec, ScenarioConfig
from ..sim.profiles import CLIMATES, CROPS, EQUIPMENT, make_facility

TOP_KEYS = {"name", "algorithm", "facilities", "rounds", "seeds", "sim_days", "heterogeneity_level",
            "round", "privacy", "byzantine", "cold_start", "evaluation", "data", "feature_ranges"}
REQUIRED = ("algorithm", "facilities", "rounds", "seeds")
ROUND_KEYS = {f.name for f in fields(RoundConfig)} - {"dp"}
# inclusive (low, high) bounds; tau's open interval is checked by RoundConfig
ROUND_BOUNDS = {"local_epochs": (0, None), "lr": (0.0, None), "batch": (1, None), "prox_mu": (0.0, None),
                "tau": (0.0, 2.0), "t_warm": (0, None), "reassign_period": (1, None), "min_cluster_size": (1, None)}
PRIVACY_KEYS = {"clip_c", "z_g", "z_c", "delta", "sensitivity", "eps_g", "eps_c"}
EVAL_KEYS = {"hours", "warmup_hours"}
DATA_KEYS = {"root_samples", "label_noise", "samples_per_cycle", "zone_count"}
FACILITY_KEYS = {"crop", "climate_zone", "equipment", "floor_area", "zone_count", "start_growth_day"}
PHYSICAL_LIMITS = {"rh": (0.0, 1.0), "co2": (0.0, math.inf), "ppfd": (0.0, math.inf)}


class ScenarioError(ValueError):
    pass


class _Node:
    """A parsed value with the source line of its YAML node."""

    def __init__(self, value, line: int):
        self.value = value
        self.line = line


def _wrap(node: yaml.Node):
    line = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = yaml.safe_load(yaml.serialize(k))
            out[key] = (_wrap(v), k.start_mark.line + 1)
        return _Node(out, line)
    if isinstance(node, yaml.SequenceNode):
        return _Node([_wrap(v) for v in node.value], line)
    return _Node(yaml.safe_load(yaml.serialize(node)), line)


def _plain(n: _Node):
    if isinstance(n.value, dict):
        return {k: _plain(v) for k, (v, _) in n.value.items()}
    if isinstance(n.value, list):
        return [_plain(v) for v in n.value]
    return n.value


class _Reader:
    def __init__(self, source: str):
        self.source = source

    def fail(self, field_name: str, line: int, msg: str):
        raise ScenarioError(f"{self.source}:{line}: field '{field_name}': {msg}")

    def section(self, node: _Node, name: str, allowed: set) -> dict:
        if not isinstance(node.value, dict):
            self.fail(name, node.line, "expected a mapping")
        for key, (_, line) in node.value.items():
            if key not in allowed:
                self.fail(f"{name}.{key}" if name else str(key), line,
                          f"unknown key; allowed: {sorted(allowed)}")
        return node.value

    def number(self, sec: dict, key: str, prefix: str, kind=float, lo=None, hi=None, default=None):
        if key not in sec:
            return default
        node, line = sec[key]
        v = node.value
        name = f"{prefix}{key}"
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            if isinstance(v, str) and kind is float and v.lower() in ("inf", ".inf", "infinity"):
                v = math.inf
            else:
                self.fail(name, line, f"expected a number, got {v!r}")
        if kind is int:
            if float(v) != int(v):
                self.fail(name, line, f"expected an integer, got {v!r}")
            v = int(v)
        else:
            v = float(v)
        if lo is not None and v < lo:
            self.fail(name, line, f"must be >= {lo}, got {v}")
        if hi is not None and v > hi:
            self.fail(name, line, f"must be <= {hi}, got {v}")
        return v


def _ranges(r: _Reader, node: _Node) -> FeatureRanges:
    sec = r.section(node, "feature_ranges", set(FEATURE_NAMES))
    lo, hi = list(DEFAULT_RANGES.lo), list(DEFAULT_RANGES.hi)
    for key, (vnode, line) in sec.items():
        name = f"feature_ranges.{key}"
        pair = _plain(vnode)
        if not (isinstance(pair, list) and len(pair) == 2
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in pair)):
            r.fail(name, line, "expected [low, high]")
        a, b = float(pair[0]), float(pair[1])
        if not b > a:
            r.fail(name, line, f"high must exceed low, got [{a}, {b}]")
        plo, phi = PHYSICAL_LIMITS.get(key, (-math.inf, math.inf))
        if a < plo or b > phi:
            r.fail(name, line, f"range [{a}, {b}] outside physical limits [{plo}, {phi}]")
        i = FEATURE_NAMES.index(key)
        lo[i], hi[i] = a, b
    return FeatureRanges(tuple(lo), tuple(hi))


def _facilities(r: _Reader, node: _Node, line: int, zone_count: int, spc) -> int | tuple:
    v = node.value
    if isinstance(v, int) and not isinstance(v, bool):
        if v < 1:
            r.fail("facilities", line, "at least one facility is required")
        return v
    if not isinstance(v, list) or not v:
        r.fail("facilities", line, "expected a count or a non-empty list of facility mappings")
    out = []
    for i, item in enumerate(v):
        prefix = f"facilities[{i}]."
        sec = r.section(item, f"facilities[{i}]", FACILITY_KEYS)
        for req in ("crop", "climate_zone", "equipment"):
            if req not in sec:
                r.fail(prefix + req, item.line, "required")
        crop = sec["crop"][0].value
        if crop not in CROPS:
            r.fail(prefix + "crop", sec["crop"][1], f"unknown crop {crop!r}; expected one of {sorted(CROPS)}")
        cz = r.number(sec, "climate_zone", prefix, int, 1, len(CLIMATES))
        eq = r.number(sec, "equipment", prefix, int, 1, len(EQUIPMENT))
        area = r.number(sec, "floor_area", prefix, float, 1.0, default=200.0)
        zc = r.number(sec, "zone_count", prefix, int, 1, default=zone_count)
        g0 = r.number(sec, "start_growth_day", prefix, float, 0.0, default=0.0)
        out.append(make_facility(i, crop, cz, eq, floor_area=area, zone_count=zc,
                                 samples_per_cycle=spc, start_growth_day=g0))
    return tuple(out)


def _privacy(r: _Reader, node: _Node | None, rounds: int) -> DpConfig:
    if node is None:
        return DpConfig()
    sec = r.section(node, "privacy", PRIVACY_KEYS)
    p = "privacy."
    kw = {}
    for key in ("clip_c", "delta"):
        v = r.number(sec, key, p, float, 0.0)
        if v is not None:
            kw[key] = v
    for tier in ("g", "c"):
        zk, ek = f"z_{tier}", f"eps_{tier}"
        if zk in sec and ek in sec:
            r.fail(p + ek, sec[ek][1], f"give either {zk} or {ek}, not both")
        if zk in sec:
            kw[zk] = r.number(sec, zk, p, float, 0.0)
        elif ek in sec:
            eps = r.number(sec, ek, p, float, 0.0)
            if eps <= 0:
                r.fail(p + ek, sec[ek][1], "target epsilon must be positive")
            kw[zk] = solve_z(eps, rounds, kw.get("delta", 1e-5))
    if "sensitivity" in sec:
        kw["sensitivity"] = sec["sensitivity"][0].value
    try:
        return DpConfig(**kw)
    except PrivacyConfigError as exc:
        r.fail("privacy", node.line, str(exc))


def parse_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    r = _Reader(source)
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 0
        raise ScenarioError(f"{source}:{line}: invalid YAML: {exc}") from None
    if root is None:
        raise ScenarioError(f"{source}:1: empty scenario file")
    top = r.section(_wrap(root), "", TOP_KEYS)
    for key in REQUIRED:
        if key not in top:
            r.fail(key, 1, "required")

    alg_node, alg_line = top["algorithm"]
    try:
        algorithm = AlgorithmKind.parse(alg_node.value)
    except FederationConfigError as exc:
        r.fail("algorithm", alg_line, str(exc))
    rounds = r.number(top, "rounds", "", int, 1)
    seeds_node, seeds_line = top["seeds"]
    seeds = _plain(seeds_node)
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = [seeds]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        r.fail("seeds", seeds_line, "expected a non-empty list of non-negative integers")

    data = r.section(top["data"][0], "data", DATA_KEYS) if "data" in top else {}
    zone_count = r.number(data, "zone_count", "data.", int, 1, default=10)
    spc = r.number(data, "samples_per_cycle", "data.", int, 1)
    kw = dict(
        name=str(top["name"][0].value) if "name" in top else Path(source).stem,
        algorithm=algorithm,
        facilities=_facilities(r, *top["facilities"], zone_count, spc),
        rounds=rounds,
        seeds=tuple(seeds),
        sim_days=r.number(top, "sim_days", "", int, 1, default=60),
        root_samples=r.number(data, "root_samples", "data.", int, 1, default=500),
        label_noise=r.number(data, "label_noise", "data.", float, 0.0, 1.0, default=0.02),
        samples_per_cycle=spc,
        zone_count=zone_count,
    )
    if "heterogeneity_level" in top:
        kw["heterogeneity_level"] = str(top["heterogeneity_level"][0].value)
    if "evaluation" in top:
        ev = r.section(top["evaluation"][0], "evaluation", EVAL_KEYS)
        kw["eval_hours"] = r.number(ev, "hours", "evaluation.", float, 1e-3, default=24.0)
        kw["warmup_hours"] = r.number(ev, "warmup_hours", "evaluation.", float, 0.0, default=6.0)
    if "feature_ranges" in top:
        kw["ranges"] = _ranges(r, top["feature_ranges"][0])

    rnd = r.section(top["round"][0], "round", ROUND_KEYS) if "round" in top else {}
    rkw = {}
    for f in fields(RoundConfig):
        if f.name in rnd:
            node, line = rnd[f.name]
            if isinstance(f.default, bool):
                if not isinstance(node.value, bool):
                    r.fail(f"round.{f.name}", line, "expected true or false")
                rkw[f.name] = node.value
            else:
                rkw[f.name] = r.number(rnd, f.name, "round.", type(f.default), *ROUND_BOUNDS.get(f.name, (None, None)))
    rkw["dp"] = _privacy(r, top["privacy"][0] if "privacy" in top else None, rounds)
    try:
        kw["round_cfg"] = RoundConfig(**rkw)
    except FederationConfigError as exc:
        r.fail("round", top["round"][1] if "round" in top else 1, str(exc))

    if "byzantine" in top:
        sec = r.section(top["byzantine"][0], "byzantine", {"count"})
        kw["byzantine"] = ByzantineSpec(r.number(sec, "count", "byzantine.", int, 1, default=1))
    if "cold_start" in top:
        node, line = top["cold_start"]
        sec = r.section(node, "cold_start", {"crop", "climate_zone", "equipment", "days", "epochs_per_day"})
        ckw = {k: r.number(sec, k, "cold_start.", int, 1) for k in ("climate_zone", "equipment", "days",
                                                                    "epochs_per_day") if k in sec}
        if "crop" in sec:
            ckw["crop"] = sec["crop"][0].value
        try:
            kw["cold_start"] = ColdStartSpec(**ckw)
        except FederationConfigError as exc:
            r.fail("cold_start", line, str(exc))
    try:
        return ScenarioConfig(**kw)
    except FederationConfigError as exc:
        raise ScenarioError(f"{source}: {exc}") from None


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario file: {exc}") from None
    return parse_scenario(text, str(path))


def scenario_to_dict(sc: ScenarioConfig) -> dict:
    """JSON-friendly snapshot of a scenario (facility profiles by their defining choices)."""
    rc = sc.round_cfg
    if isinstance(sc.facilities, int):
        fac = sc.facilities
    else:
        fac = [{"crop": p.crop.family, "climate_zone": p.climate_zone, "equipment": p.equipment,
                "floor_area": p.thermal.floor_area, "zone_count": p.zone_count,
                "start_growth_day": p.start_growth_day} for p in sc.facilities]
    dp = rc.dp
    out = {
        "name": sc.name, "algorithm": sc.algorithm.value, "facilities": fac, "rounds": sc.rounds,
        "seeds": list(sc.seeds), "sim_days": sc.sim_days, "heterogeneity_level": sc.heterogeneity_level,
        "round": {f.name: getattr(rc, f.name) for f in fields(RoundConfig) if f.name != "dp"},
        "privacy": {"clip_c": dp.clip_c, "z_g": dp.z_g, "z_c": dp.z_c, "delta": dp.delta,
                    "sensitivity": dp.sensitivity},
        "byzantine": None if sc.byzantine is None else {"count": sc.byzantine.count},
        "cold_start": None if sc.cold_start is None else {
            "crop": sc.cold_start.crop, "climate_zone": sc.cold_start.climate_zone,
            "equipment": sc.cold_start.equipment, "days": sc.cold_start.days,
            "epochs_per_day": sc.cold_start.epochs_per_day},
        "evaluation": {"hours": sc.eval_hours, "warmup_hours": sc.warmup_hours},
        "data": {"root_samples": sc.root_samples, "label_noise": sc.label_noise,
                 "samples_per_cycle": sc.samples_per_cycle, "zone_count": sc.zone_count},
        "feature_ranges": {n: [float(a), float(b)] for n, a, b in zip(FEATURE_NAMES, sc.ranges.lo, sc.ranges.hi)},
    }
    return _drop_none(out)


def _drop_none(d):
    if isinstance(d, dict):
        return {k: _drop_none(v) for k, v in d.items() if v is not None}
    return d

