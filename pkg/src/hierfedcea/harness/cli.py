"""Command-line entry point."""

from __future__ import annotations

import math
import os
from pathlib import Path

import click

from ..privacy import DpConfig, rdp_epsilon
from . import experiments as X
from .config import ScenarioError, load_scenario

OUT_ENV = "HIERFEDCEA_OUT"


def _out_dir(value: str | None) -> Path:
    return Path(value or os.environ.get(OUT_ENV) or "results")


def _scenarios_from(source: str, full: bool) -> list:
    p = Path(source)
    if p.is_dir():
        files = sorted([*p.glob("*.yaml"), *p.glob("*.yml")])
        if not files:
            raise click.ClickException(f"no scenario files in {p}")
        out = [load_scenario(f) for f in files]
        return [X.full_scale(s) for s in out] if full else out
    if source in X.BUILTIN_SUITES:
        return X.BUILTIN_SUITES[source](full=full)
    raise click.ClickException(f"{source} is neither a directory nor one of {sorted(X.BUILTIN_SUITES)}")


def _seeds(sc, seed):
    return (seed,) if seed is not None else sc.seeds


@click.group()
@click.version_option(package_name="artifact", prog_name="hierfedcea")
def main():
    """Hierarchical federated PID auto-tuning experiments."""


@main.command()
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Run only this seed.")
@click.option("--out-dir", default=None, help=f"Output directory (default ${OUT_ENV} or ./results).")
@click.option("--full-scale", is_flag=True, help="K=30, T=100, 180 days, 5 seeds.")
def run(scenario_file, seed, out_dir, full_scale):
    """Train one scenario and write per-round CSV plus summary JSON."""
    try:
        sc = load_scenario(scenario_file)
    except ScenarioError as exc:
        raise click.ClickException(str(exc))
    sc = X.full_scale(sc) if full_scale else sc
    out = _out_dir(out_dir)
    for s in _seeds(sc, seed):
        art = X.run_one(sc, s, out)
        summ = art.summary()
        click.echo(f"{sc.name} seed={s} rmse={summ['fleet_rmse']:.5f} eps_g={summ['eps_g']} "
                   f"eps_c={summ['eps_c']} comm={summ['comm_bytes']} -> {art.csv_path.parent}")


@main.command()
@click.argument("source")
@click.option("--out-dir", default=None, help=f"Output directory (default ${OUT_ENV} or ./results).")
@click.option("--workers", type=int, default=1, show_default=True, help="Parallel (scenario, seed) runs.")
@click.option("--full-scale", is_flag=True, help="K=30, T=100, 180 days, 5 seeds.")
@click.option("--seed", type=int, default=None, help="Restrict every scenario to this seed.")
def suite(source, out_dir, workers, full_scale, seed):
    """Run every scenario file in SOURCE (a directory) or a built-in set: main, heterogeneity, privacy."""
    try:
        scenarios = _scenarios_from(source, full_scale)
    except ScenarioError as exc:
        raise click.ClickException(str(exc))
    if seed is not None:
        scenarios = [s.with_changes(seeds=(seed,)) for s in scenarios]
    out = _out_dir(out_dir)
    results = X.run_suite(scenarios, out, workers=workers)
    failed = [r for r in results if isinstance(r, X.RunFailure)]
    click.echo(f"{len(results) - len(failed)} runs ok, {len(failed)} failed -> {out}")
    for f in failed:
        click.echo(f"  FAILED {f.name} seed={f.seed}: {f.error}")
    arts = [r for r in results if isinstance(r, X.RunArtifact)]
    if arts:
        X.emit_table(arts, out / "table.csv")
        X.emit_plotdata(arts, out / "plotdata.csv")


@main.command()
@click.argument("artifacts", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", default=None, help="Write CSV here instead of stdout.")
def table(artifacts, out):
    """Comparison table from run summaries (files or directories searched recursively)."""
    sums = X.find_summaries(artifacts)
    if out:
        click.echo(str(X.emit_table(sums, out)))
        return
    rows = X.table_rows(sums)
    click.echo(",".join(X.TABLE_COLUMNS))
    for r in rows:
        click.echo(",".join(r[c] for c in X.TABLE_COLUMNS))


@main.command()
@click.argument("artifacts", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", default=None, help="Write CSV here instead of stdout.")
def plotdata(artifacts, out):
    """Heterogeneity plot data (level, method, mean RMSE, CI) from run summaries."""
    sums = X.find_summaries(artifacts)
    if out:
        click.echo(str(X.emit_plotdata(sums, out)))
        return
    click.echo(",".join(X.PLOT_COLUMNS))
    for r in X.plot_rows(sums):
        click.echo(",".join(r[c] for c in X.PLOT_COLUMNS))


@main.command()
@click.option("--z", "z", type=float, required=True, help="Noise multiplier.")
@click.option("--rounds", type=int, required=True, help="Number of releases.")
@click.option("--delta", type=float, default=DpConfig().delta, show_default=True)
def accountant(z, rounds, delta):
    """Epsilon of ROUNDS Gaussian releases at noise multiplier Z."""
    eps = rdp_epsilon(z, rounds, 1.0, delta)
    click.echo("inf" if math.isinf(eps) else f"{eps:.6f}")


@main.command()
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", default=None, help=f"Output directory (default ${OUT_ENV} or ./results).")
@click.option("--full-scale", is_flag=True)
def coldstart(scenario_file, seed, out_dir, full_scale):
    """Train the scenario's fleet, then let a new facility join and learn day by day."""
    try:
        sc = load_scenario(scenario_file)
    except ScenarioError as exc:
        raise click.ClickException(str(exc))
    sc = X.full_scale(sc) if full_scale else sc
    sc = sc.with_changes(seeds=_seeds(sc, seed))
    res = X.cold_start_suite(sc, methods=(sc.algorithm,))
    path = X.write_cold_start(res, _out_dir(out_dir) / sc.name / "coldstart.json")
    for (_, s), r in sorted(res.items(), key=lambda kv: kv[0][1]):
        click.echo(f"{r.algorithm} seed={s} days_to_85pct={r.days_to_threshold} fleet_rmse={r.fleet_rmse:.5f}")
    click.echo(str(path))


if __name__ == "__main__":  # pragma: no cover
    main()
