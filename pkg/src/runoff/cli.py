"""Command line: ingest -> fit -> nowcast -> compare -> simulate.

Exit codes: 0 success, 2 input or validation error, 3 convergence failure.
Every command writes ``<output>.manifest.json`` next to its main output.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import time
from pathlib import Path

import click
import pandas as pd

from . import __version__
from . import io as fio
from . import rng as rngmod
from .inference import SamplerConfig, diagnostics, run_mcmc
from .model import ModelSpec, Variant
from .nowcast import DEFAULT_QUANTILES, nowcast
from .selection import comparison_table, criteria
from .simulator import SimulationScenario, coverage_experiment, coverage_summary, simulate
from .triangle import SUNDAY, build_triangle, validate_adjacency

log = logging.getLogger("runoff")

WEEKDAYS = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]


class InputError(click.ClickException):
    exit_code = 2


class ConvergenceError(click.ClickException):
    exit_code = 3


def _manifest(out: Path, command: str, config: dict, inputs: dict, seed, started: float) -> None:
    digests = {k: fio.file_digest(v) for k, v in inputs.items() if v is not None}
    fio.write_json(
        {
            "command": command,
            "argv": _argv(click.get_current_context()),
            "config": config,
            "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
            "input_sha256": digests,
            "seed": seed,
            "version": __version__,
            "timings": {"seconds": round(time.perf_counter() - started, 3)},
        },
        out.with_name(out.name + ".manifest.json"),
    )


def _argv(ctx: click.Context) -> list[str]:
    """Rebuild an equivalent command line from the resolved parameters."""
    argv = [ctx.info_name]
    for p in ctx.command.params:
        if not isinstance(p, click.Option):
            argv.append(str(ctx.params[p.name]))
            continue
        v = ctx.params.get(p.name)
        if v is None:
            continue
        if p.is_flag and p.secondary_opts:
            argv.append(p.opts[0] if v else p.secondary_opts[0])
        elif p.is_flag:
            if v:
                argv.append(p.opts[0])
        else:
            if isinstance(v, dt.datetime):
                v = v.date().isoformat()
            argv += [p.opts[0], str(v)]
    return argv


def _sampler_options(f):
    opts = [
        click.option("--chains", default=3, show_default=True),
        click.option("--iters", default=20_000, show_default=True),
        click.option("--burn", default=10_000, show_default=True),
        click.option("--thin", default=5, show_default=True),
        click.option("--seed", default=0, show_default=True, help="Single source of all randomness."),
        click.option("--threads", default=1, show_default=True, help="Upper bound on worker threads."),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _config(chains, iters, burn, thin, seed, threads) -> SamplerConfig:
    try:
        return SamplerConfig(chains=chains, iterations=iters, burn_in=burn, thin=thin,
                             seed=seed, threads=threads)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _load_triangle(path):
    try:
        return fio.read_triangle(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _load_region_map(path, tri=None):
    if path is None:
        return None
    try:
        rmap = fio.read_adjacency(path)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    diag = validate_adjacency(rmap)
    if not diag.symmetric:
        raise InputError(f"{path}: adjacency matrix is not symmetric")
    if tri is not None and tuple(rmap.regions) != tuple(tri.regions):
        raise InputError("adjacency regions do not match the triangle's regions (same order required)")
    return rmap


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    """Nowcast delayed surveillance counts with negative-binomial run-off triangle models.

    \b
    Formats (t and s are 1-based, d is 0-based):
      line list CSV   header event_date,report_date[,region]; ISO-8601 dates
      triangle JSON   T, D, S, unit, start, as_of, regions, counts (null = unobserved), overflow
      adjacency CSV   first row and column hold region ids, body is 0/1
      samples         <prefix>.samples.csv (chain, iteration, mu, alpha[t], beta[d], ...)
                      plus <prefix>.samples.json (spec, config, seed, acceptance, diagnostics)
      nowcast CSV     t,s,observed_partial,mean,median,q<quantile>...[,exceedance];
                      s is "all" for the sum over regions
      criteria CSV    model,Dbar,pD,DIC,WAIC
    """
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--unit", type=click.Choice(["week", "day"]), default="week", show_default=True)
@click.option("--max-delay", "max_delay", type=int, default=10, show_default=True)
@click.option("--as-of", "as_of", type=click.DateTime(["%Y-%m-%d"]), default=None)
@click.option("--week-start", type=click.Choice(WEEKDAYS), default="sunday", show_default=True)
@click.option("--adjacency", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def ingest(input_path, unit, max_delay, as_of, week_start, adjacency, out):
    """Aggregate a line list into a triangle JSON file."""
    started = time.perf_counter()
    try:
        records = fio.read_line_list(input_path)
    except ValueError as exc:
        raise InputError(f"{input_path}: {exc}") from None
    rmap = _load_region_map(adjacency)
    try:
        tri = build_triangle(records, unit, max_delay, as_of.date() if as_of else None, rmap,
                             week_start=WEEKDAYS.index(week_start))
    except ValueError as exc:
        msg = str(exc)
        if msg.startswith("record "):
            idx = int(msg.split()[1].rstrip(":"))
            msg = f"line {idx + 2}: " + msg.split(":", 1)[1].strip()
        raise InputError(f"{input_path}: {msg}") from None
    out = Path(out)
    fio.write_triangle(tri, out)
    click.echo(f"triangle T={tri.T} D={tri.D} S={tri.S}, overflow={int(tri.overflow.sum())} -> {out}")
    _manifest(out, "ingest", {"unit": unit, "max_delay": max_delay,
                              "as_of": tri.as_of.isoformat(), "week_start": week_start},
              {"input": input_path, "adjacency": adjacency}, None, started)


def _fit(tri, model, rmap, cfg):
    variant = Variant(model)
    if variant.spatial and rmap is None:
        raise InputError(f"model {model} is spatial and needs --adjacency")
    try:
        spec = ModelSpec.for_triangle(variant, tri)
        return run_mcmc(tri, spec, None, rmap, cfg)
    except ValueError as exc:
        raise InputError(str(exc)) from None


@main.command()
@click.option("--triangle", "triangle_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--model", type=click.Choice([v.value for v in Variant]), default="BASE", show_default=True)
@click.option("--adjacency", type=click.Path(exists=True, dir_okay=False), default=None)
@_sampler_options
@click.option("--out-prefix", required=True, type=click.Path())
@click.option("--strict/--no-strict", default=True, show_default=True,
              help="Exit with code 3 when any monitored Rhat exceeds 1.1.")
def fit(triangle_path, model, adjacency, chains, iters, burn, thin, seed, threads, out_prefix, strict):
    """Sample the posterior and write samples plus diagnostics."""
    started = time.perf_counter()
    tri = _load_triangle(triangle_path)
    rmap = _load_region_map(adjacency, tri)
    cfg = _config(chains, iters, burn, thin, seed, threads)
    samples = _fit(tri, model, rmap, cfg)
    diag = diagnostics(samples)
    out = Path(out_prefix)
    out.parent.mkdir(parents=True, exist_ok=True)
    fio.write_samples(samples, out, diag)
    _manifest(out, "fit", {"model": model, **cfg.to_dict()},
              {"triangle": triangle_path, "adjacency": adjacency}, seed, started)
    click.echo(f"{len(samples)} draws from {cfg.chains} chains")
    if diag.rhat is None:
        click.echo("single chain: Rhat not computed")
    else:
        for k, v in diag.rhat.items():
            click.echo(f"  Rhat {k:<16} {v:7.4f}   ESS {diag.ess[k]:8.1f}")
        if strict and not diag.converged(1.1):
            raise ConvergenceError(f"max Rhat {diag.max_rhat:.3f} > 1.1 (use --no-strict to accept)")


@main.command(name="nowcast")
@click.option("--samples", "samples_prefix", required=True, type=click.Path())
@click.option("--triangle", "triangle_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--quantiles", default=",".join(f"{q:g}" for q in DEFAULT_QUANTILES), show_default=True)
@click.option("--threshold", type=float, default=None, help="Epidemic threshold for exceedance probabilities.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--draws-out", type=click.Path(dir_okay=False), default=None,
              help="Also write every predictive total draw (one column per target).")
def nowcast_cmd(samples_prefix, triangle_path, quantiles, threshold, seed, out, draws_out):
    """Posterior predictive totals for the recent, incomplete rows."""
    started = time.perf_counter()
    tri = _load_triangle(triangle_path)
    try:
        samples = fio.read_samples(samples_prefix)
        qs = tuple(float(q) for q in quantiles.split(","))
        samples.spec.check_triangle(tri)
    except (ValueError, OSError) as exc:
        raise InputError(str(exc)) from None
    res = nowcast(samples, tri, None, threshold, qs, rngmod.stream(seed, "predict", 0))
    out = Path(out)
    df = fio.write_nowcast(res, out)
    if draws_out:
        cols = {"chain": samples.chain, "iteration": samples.iteration}
        cols.update({f"N[{t + 1},{tri.regions[s]}]": res.total_samples[:, i, s]
                     for i, t in enumerate(res.t) for s in range(tri.S)})
        if res.aggregate_samples is not None:
            cols.update({f"N[{t + 1},all]": res.aggregate_samples[:, i] for i, t in enumerate(res.t)})
        pd.DataFrame(cols).to_csv(draws_out, index=False)
    if len(res.cell_draws.cells) == 0:
        click.echo("triangle fully observed: no cells to predict, observed totals echoed")
    click.echo(df.to_string(index=False))
    csv_path, _ = fio.samples_paths(samples_prefix)
    _manifest(out, "nowcast", {"quantiles": qs, "threshold": threshold},
              {"samples": csv_path, "triangle": triangle_path}, seed, started)


@main.command()
@click.option("--triangle", "triangle_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--models", required=True, help="Comma-separated list, e.g. M0,M4.")
@click.option("--adjacency", type=click.Path(exists=True, dir_okay=False), default=None)
@_sampler_options
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def compare(triangle_path, models, adjacency, chains, iters, burn, thin, seed, threads, out):
    """Fit several variants and tabulate Dbar, pD, DIC and WAIC."""
    started = time.perf_counter()
    tri = _load_triangle(triangle_path)
    rmap = _load_region_map(adjacency, tri)
    cfg = _config(chains, iters, burn, thin, seed, threads)
    names = []
    for m in (x.strip() for x in models.split(",") if x.strip()):
        if m in names:
            click.echo(f"warning: duplicate model {m} ignored", err=True)
            continue
        if m not in {v.value for v in Variant}:
            raise InputError(f"unknown model {m}")
        names.append(m)
    reports, failed = [], {}
    for m in names:
        try:
            samples = _fit(tri, m, rmap, cfg)
            reports.append(criteria(m, samples, tri))
        except click.ClickException as exc:
            failed[m] = exc.format_message()
        except Exception as exc:  # one bad model must not sink the comparison
            failed[m] = str(exc)
    for m, msg in failed.items():
        click.echo(f"warning: model {m} failed: {msg}", err=True)
    table = comparison_table(reports)
    out = Path(out)
    table.to_csv(out, index=False, float_format="%.17g")
    click.echo(table.to_string(index=False))
    _manifest(out, "compare", {"models": names, "failed": failed, **cfg.to_dict()},
              {"triangle": triangle_path, "adjacency": adjacency}, seed, started)
    if not reports:
        raise InputError("every model failed")


@main.command(name="simulate")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--replicates", default=1, show_default=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--coverage", is_flag=True, help="Also censor, refit and score nowcast intervals.")
@click.option("--level", default=0.95, show_default=True)
@_sampler_options
def simulate_cmd(scenario_path, replicates, out_dir, coverage, level, chains, iters, burn, thin, seed, threads):
    """Write synthetic triangles and their truth records; optionally run a coverage study."""
    started = time.perf_counter()
    try:
        scenario = SimulationScenario.from_dict(json.loads(Path(scenario_path).read_text()))
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise InputError(f"{scenario_path}: invalid scenario: {exc}") from None
    if replicates < 1:
        raise InputError("--replicates must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if scenario.region_map is not None:
        fio.write_adjacency(scenario.region_map, out_dir / "adjacency.csv")
    for r in range(replicates):
        try:
            full, truth = simulate(scenario.replicate(r))
        except ValueError as exc:
            raise InputError(str(exc)) from None
        fio.write_triangle(full, out_dir / f"dataset_{r:03d}.json")
        fio.write_json(truth.to_dict(), out_dir / f"truth_{r:03d}.json")
    config = {"replicates": replicates, "scenario": scenario.to_dict()}
    if coverage:
        cfg = _config(chains, iters, burn, thin, seed, threads)
        table = coverage_experiment(scenario, replicates, cfg, level)
        table.to_csv(out_dir / "coverage.csv", index=False, float_format="%.17g")
        summary = coverage_summary(table)
        summary.to_csv(out_dir / "coverage_summary.csv", float_format="%.17g")
        click.echo(summary.to_string())
        config.update({"level": level, **cfg.to_dict()})
    click.echo(f"{replicates} replicate(s) -> {out_dir}")
    _manifest(out_dir / "run", "simulate", config, {"scenario": scenario_path}, seed, started)


@main.command()
@click.argument("manifest", type=click.Path(exists=True, dir_okay=False))
def replay(manifest):
    """Re-run the command recorded in a manifest."""
    argv = json.loads(Path(manifest).read_text())["argv"]
    if argv and argv[0] == "replay":
        raise InputError("refusing to replay a replay")
    main.main(args=argv, prog_name="runoff", standalone_mode=False)


if __name__ == "__main__":
    main()
