"""Posterior predictive nowcasts of unreported cells and row totals."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from . import rng as rngmod
from .inference import SamplerConfig, run_mcmc
from .model import ModelSpec, as_covariates
from .triangle import LineListRecord, ReportingTriangle, build_triangle, censor, marginal_totals

DEFAULT_QUANTILES = (0.025, 0.5, 0.975)


@dataclass
class CellDraws:
    """Predictive draws ``draws[m, k]`` for the unobserved cells ``cells[k] = (t, d, s)``."""

    cells: np.ndarray
    draws: np.ndarray

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]


def _missing_log_means(samples, cells: np.ndarray, X) -> np.ndarray:
    spec = samples.spec
    X = as_covariates(X, spec)
    t, d, s = cells[:, 0], cells[:, 1], cells[:, 2]
    eta = samples.param("mu")[:, None] + samples.param("alpha")[:, t] + samples.param("beta")[:, d]
    if spec.covariate_count:
        eta = eta + samples.param("gamma") @ X[t, d, s].T
    if spec.has_alpha_ts:
        eta = eta + samples.param("alpha_ts")[:, t, s]
    if spec.has_beta_ds:
        eta = eta + samples.param("beta_ds")[:, d, s]
    if spec.has_delta_ind:
        eta = eta + samples.param("delta_ind")[:, s]
    if spec.has_iar:
        eta = eta + samples.param("delta_iar")[:, s]
    return eta


def predict_cells(samples, tri: ReportingTriangle, X=None, rng=None, order=None) -> CellDraws:
    """One NegBin draw per posterior draw and unobserved cell (gamma-Poisson mixture).

    Cells are conditionally independent given the parameters, so the
    simulation ``order`` (a permutation of the unobserved cells) only changes
    which random numbers land where, not the predictive distribution.
    """
    samples.spec.check_triangle(tri)
    rng = np.random.default_rng() if rng is None else rng
    cells = np.argwhere(~tri.mask)
    M = len(samples)
    if len(cells) == 0:
        return CellDraws(cells.reshape(0, 3), np.zeros((M, 0), dtype=np.int64))
    perm = np.arange(len(cells)) if order is None else np.asarray(order)
    if sorted(perm.tolist()) != list(range(len(cells))):
        raise ValueError("order must be a permutation of the unobserved cells")
    lam = np.exp(_missing_log_means(samples, cells[perm], X))
    phi = samples.param("phi")[:, None]
    mix = rng.gamma(np.broadcast_to(phi, lam.shape), lam / phi)
    drawn = rng.poisson(mix)
    out = np.empty_like(drawn)
    out[:, perm] = drawn
    return CellDraws(cells, out.astype(np.int64))


@dataclass
class NowcastResult:
    """Predictive totals ``N_t`` for the target rows.

    ``total_samples[m, i, s]`` is draw ``m`` of the total of row ``t[i]`` in
    region ``s``; ``aggregate_samples`` sums over regions when ``S > 1``.
    """

    t: np.ndarray
    regions: tuple[str, ...]
    observed_partial: np.ndarray
    total_samples: np.ndarray
    cell_draws: CellDraws
    aggregate_samples: np.ndarray | None = None
    threshold: float | None = None
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES
    as_of: dt.date | int | None = None
    triangle: ReportingTriangle | None = field(default=None, repr=False)

    @property
    def exceedance(self) -> np.ndarray | None:
        if self.threshold is None:
            return None
        return (self.total_samples > self.threshold).mean(axis=0)

    @property
    def aggregate_exceedance(self) -> np.ndarray | None:
        if self.threshold is None or self.aggregate_samples is None:
            return None
        return (self.aggregate_samples > self.threshold).mean(axis=0)

    def interval(self, level: float = 0.95, aggregate: bool = False) -> tuple[np.ndarray, np.ndarray]:
        x = self.aggregate_samples if aggregate else self.total_samples
        lo = np.quantile(x, (1 - level) / 2, axis=0)
        hi = np.quantile(x, (1 + level) / 2, axis=0)
        return lo, hi

    def summary(self) -> pd.DataFrame:
        rows = []
        targets = [(self.regions[s], self.total_samples[:, :, s], self.observed_partial[:, s])
                   for s in range(len(self.regions))]
        if self.aggregate_samples is not None:
            targets.append(("all", self.aggregate_samples, self.observed_partial.sum(axis=1)))
        for label, x, partial in targets:
            qs = np.quantile(x, self.quantiles, axis=0) if len(x) else np.full((len(self.quantiles), x.shape[1]), np.nan)
            for i, t in enumerate(self.t):
                row = {"t": int(t) + 1, "s": label, "observed_partial": int(partial[i]),
                       "mean": float(x[:, i].mean()), "median": float(np.median(x[:, i]))}
                for q, v in zip(self.quantiles, qs[:, i]):
                    row[quantile_column(q)] = float(v)
                if self.threshold is not None:
                    row["exceedance"] = float((x[:, i] > self.threshold).mean())
                rows.append(row)
        return pd.DataFrame(rows)


def quantile_column(q: float) -> str:
    return f"q{100 * q:g}"


def target_rows(tri: ReportingTriangle) -> np.ndarray:
    """The last ``D`` rows plus any other row with an unobserved cell."""
    incomplete = ~tri.mask.all(axis=(1, 2))
    last = np.zeros(tri.T, dtype=bool)
    last[max(tri.T - tri.D, 0):] = True
    return np.flatnonzero(incomplete | last)


def nowcast_totals(
    cell_draws: CellDraws,
    tri: ReportingTriangle,
    threshold: float | None = None,
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
) -> NowcastResult:
    rows = target_rows(tri)
    partial = marginal_totals(tri).observed[rows]
    M = cell_draws.n_draws
    totals = np.broadcast_to(partial, (M,) + partial.shape).copy()
    row_pos = -np.ones(tri.T, dtype=np.int64)
    row_pos[rows] = np.arange(len(rows))
    for k, (t, d, s) in enumerate(cell_draws.cells):
        if row_pos[t] < 0:
            raise ValueError(f"predicted cell in row {t} is not a nowcast target")
        totals[:, row_pos[t], s] += cell_draws.draws[:, k]
    agg = totals.sum(axis=2) if tri.S > 1 else None
    return NowcastResult(
        t=rows,
        regions=tri.regions,
        observed_partial=partial,
        total_samples=totals,
        cell_draws=cell_draws,
        aggregate_samples=agg,
        threshold=threshold,
        quantiles=tuple(quantiles),
        as_of=tri.as_of,
        triangle=tri,
    )


def nowcast(samples, tri, X=None, threshold=None, quantiles=DEFAULT_QUANTILES, rng=None) -> NowcastResult:
    return nowcast_totals(predict_cells(samples, tri, X, rng), tri, threshold, quantiles)


def fit_and_nowcast(
    tri: ReportingTriangle,
    spec: ModelSpec,
    cfg: SamplerConfig,
    X=None,
    region_map=None,
    threshold: float | None = None,
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
    seed: int | None = None,
    key: int = 0,
) -> NowcastResult:
    """Fit then nowcast, with fit and prediction streams keyed by ``(seed, key)``."""
    seed = cfg.seed if seed is None else seed
    run_cfg = SamplerConfig(**{**cfg.to_dict(), "seed": rngmod.derive_seed(seed, "fit", key)})
    samples = run_mcmc(tri, spec, X, region_map, run_cfg)
    return nowcast(samples, tri, X, threshold, quantiles, rngmod.stream(seed, "predict", key))


def rolling_nowcast(
    data,
    unit: str,
    D: int,
    spec: ModelSpec,
    cfg: SamplerConfig,
    dates: Sequence,
    *,
    region_map=None,
    threshold: float | None = None,
    quantiles: Sequence[float] = DEFAULT_QUANTILES,
    seed: int | None = None,
) -> list[NowcastResult]:
    """Refit and nowcast at each as-of date, as an analyst would week by week.

    ``data`` is either a line list (then ``dates`` are calendar dates) or a
    complete :class:`ReportingTriangle` (then ``dates`` are 1-based period
    counts, or dates if the triangle has a ``start``).
    """
    seed = cfg.seed if seed is None else seed
    prev = None
    out = []
    if not isinstance(data, ReportingTriangle):
        records: list[LineListRecord] = list(data)
        origin = min(r.event_time for r in records)
    for k, when in enumerate(dates):
        if prev is not None and not when > prev:
            raise ValueError("as-of dates must be increasing")
        prev = when
        if isinstance(data, ReportingTriangle):
            tri = censor(data, when)
        else:
            known = [r for r in records if r.event_time <= when]
            tri = build_triangle(known, unit, D, when, region_map, start=origin)
        sp = spec.with_dims(tri.T, tri.D, tri.S)
        res = fit_and_nowcast(tri, sp, cfg, region_map=region_map, threshold=threshold,
                              quantiles=quantiles, seed=seed, key=k)
        out.append(res)
    return out
