"""DIC and WAIC from posterior draws, and a model comparison table."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from .model import Layout, ModelSpec, as_covariates, negbin_logpmf
from .triangle import ReportingTriangle

log = logging.getLogger(__name__)

CHUNK = 256


def _eta_observed(theta: np.ndarray, spec: ModelSpec, cells: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Linear predictor at observed cells for a stack of flat parameter vectors."""
    lay = Layout(spec)
    t, d, s = cells[:, 0], cells[:, 1], cells[:, 2]
    S, o = spec.S, lay.offsets
    eta = theta[:, o["mu"][0], None] + theta[:, o["alpha"][0] + t] + theta[:, o["beta"][0] + d]
    if spec.covariate_count:
        eta = eta + theta[:, o["gamma"][0]:o["gamma"][1]] @ X[t, d, s].T
    if spec.has_alpha_ts:
        eta = eta + theta[:, o["alpha_ts"][0] + t * S + s]
    if spec.has_beta_ds:
        eta = eta + theta[:, o["beta_ds"][0] + d * S + s]
    if spec.has_delta_ind:
        eta = eta + theta[:, o["delta_ind"][0] + s]
    if spec.has_iar:
        eta = eta + theta[:, o["delta_iar"][0] + s]
    return eta


def pointwise_loglik(samples, tri: ReportingTriangle, X=None, chunk: int | None = None):
    """Yield ``(draw_indices, loglik[m, cell])`` blocks over the observed cells."""
    chunk = CHUNK if chunk is None else chunk
    spec = samples.spec
    spec.check_triangle(tri)
    X = as_covariates(X, spec)
    cells = np.argwhere(tri.mask)
    y = tri.counts[tri.mask]
    for a in range(0, len(samples), chunk):
        idx = np.arange(a, min(a + chunk, len(samples)))
        eta = _eta_observed(samples.theta[idx], spec, cells, X)
        with np.errstate(over="ignore"):
            lam = np.exp(eta)
        phi = samples.phi[idx, None]
        bad = ~np.isfinite(lam).all(axis=1) | (lam <= 0).any(axis=1)
        if bad.any():
            raise ValueError(f"non-finite deviance at draw {int(idx[np.argmax(bad)])}")
        yield idx, negbin_logpmf(y[None, :], lam, phi)


@dataclass(frozen=True)
class DIC:
    Dbar: float
    pD: float
    DIC: float


@dataclass(frozen=True)
class WAIC:
    lppd: float
    pWAIC: float
    WAIC: float


def dic(samples, tri: ReportingTriangle, spec: ModelSpec | None = None, X=None, region_map=None) -> DIC:
    """Deviance information criterion.

    The plug-in point is the posterior mean with ``phi`` averaged on the log
    scale (precisions do not enter the likelihood).
    """
    if len(samples) < 2:
        raise ValueError("DIC needs at least 2 draws")
    spec = samples.spec if spec is None else spec
    Xc = as_covariates(X, spec)
    dev = np.empty(len(samples))
    for idx, ll in pointwise_loglik(samples, tri, Xc):
        dev[idx] = -2.0 * ll.sum(axis=1)
    if not np.isfinite(dev).all():
        raise ValueError(f"non-finite deviance at draw {int(np.argmax(~np.isfinite(dev)))}")
    Dbar = float(dev.mean())
    theta_bar = samples.theta.mean(axis=0)
    phi_bar = float(np.exp(np.log(samples.phi).mean()))
    cells = np.argwhere(tri.mask)
    eta = _eta_observed(theta_bar[None, :], spec, cells, Xc)[0]
    D_hat = -2.0 * float(np.sum(negbin_logpmf(tri.counts[tri.mask], np.exp(eta), phi_bar)))
    pD = Dbar - D_hat
    if pD < 0:
        log.warning("negative pD (%.2f): posterior far from normal", pD)
    return DIC(Dbar, pD, Dbar + pD)


def waic(samples, tri: ReportingTriangle, spec: ModelSpec | None = None, X=None, region_map=None) -> WAIC:
    """WAIC with one triangle cell as the pointwise unit.

    ``pWAIC`` uses the population variance across draws so that duplicating
    every draw leaves the criterion unchanged.
    """
    M = len(samples)
    if M < 2:
        raise ValueError("WAIC needs at least 2 draws")
    n_cells = tri.n_observed
    lse = np.full(n_cells, -np.inf)
    s1 = np.zeros(n_cells)
    s2 = np.zeros(n_cells)
    shift = None
    for _, ll in pointwise_loglik(samples, tri, X):
        if not np.isfinite(ll).all():
            raise ValueError("non-finite pointwise log-likelihood")
        lse = np.logaddexp(lse, logsumexp(ll, axis=0))
        if shift is None:
            shift = ll[0]
        c = ll - shift
        s1 += c.sum(axis=0)
        s2 += (c * c).sum(axis=0)
    lppd = float(np.sum(lse - np.log(M)))
    var = np.maximum(s2 / M - (s1 / M) ** 2, 0.0)
    p = float(var.sum())
    return WAIC(lppd, p, -2.0 * (lppd - p))


@dataclass(frozen=True)
class CriteriaReport:
    model: str
    Dbar: float
    pD: float
    DIC: float
    lppd: float
    pWAIC: float
    WAIC: float


def criteria(name: str, samples, tri, X=None) -> CriteriaReport:
    d = dic(samples, tri, X=X)
    w = waic(samples, tri, X=X)
    return CriteriaReport(name, d.Dbar, d.pD, d.DIC, w.lppd, w.pWAIC, w.WAIC)


def comparison_table(reports) -> pd.DataFrame:
    """One row per model with columns ``model, Dbar, pD, DIC, WAIC``."""
    rows = [{"model": r.model, "Dbar": r.Dbar, "pD": r.pD, "DIC": r.DIC, "WAIC": r.WAIC} for r in reports]
    return pd.DataFrame(rows, columns=["model", "Dbar", "pD", "DIC", "WAIC"])
