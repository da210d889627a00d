"""Convergence diagnostics: rank-normalised split-Rhat and effective sample size."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, rankdata


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    m = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, n=m, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), n=m, axis=-1)[..., :n]
    return acov / n


def ess(draws) -> float:
    """Effective sample size of ``draws`` with shape ``(chains, n)`` or ``(n,)``.

    Autocorrelations are combined across chains and truncated with Geyer's
    initial monotone positive sequence.
    """
    x = np.atleast_2d(np.asarray(draws, dtype=float))
    m, n = x.shape
    if n < 4:
        return float(m * n)
    acov = _autocovariance(x)
    W = acov[:, 0].mean() * n / (n - 1)
    if not W > 0:
        return float(m * n)
    var_plus = W * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sums of adjacent pairs, positive and monotone
    pairs = rho[: (n // 2) * 2].reshape(-1, 2).sum(axis=1)
    k = 1
    while k < len(pairs) and pairs[k] > 0:
        k += 1
    pairs = np.minimum.accumulate(pairs[:k])
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def _split(x: np.ndarray) -> np.ndarray:
    n = x.shape[1] // 2
    return np.concatenate([x[:, :n], x[:, -n:]], axis=0)


def _rhat_raw(x: np.ndarray) -> float:
    m, n = x.shape
    W = x.var(axis=1, ddof=1).mean()
    B = n * x.mean(axis=1).var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else np.inf
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))


def split_rhat(draws) -> float:
    """Rank-normalised split-Rhat (max of bulk and folded versions), floored at 1."""
    x = _split(np.asarray(draws, dtype=float))
    def z(a):
        r = rankdata(a, method="average").reshape(a.shape)
        return norm.ppf((r - 0.375) / (a.size + 0.25))
    bulk = _rhat_raw(z(x))
    fold = _rhat_raw(z(np.abs(x - np.median(x))))
    return max(bulk, fold, 1.0)


@dataclass
class Diagnostics:
    rhat: dict | None
    ess: dict

    @property
    def max_rhat(self) -> float:
        return max(self.rhat.values()) if self.rhat else float("nan")

    def converged(self, threshold: float = 1.1) -> bool:
        return self.rhat is None or all(v <= threshold for v in self.rhat.values())

    def to_dict(self) -> dict:
        return {"rhat": self.rhat, "ess": self.ess}


def monitored_scalars(samples) -> dict:
    """mu, phi, active precisions and lambda at the four corner cells (region 0)."""
    spec = samples.spec
    out = {"mu": samples.param("mu"), "phi": samples.param("phi")}
    for name in spec.active_precisions():
        out[name] = samples.param(name)
    T, D = spec.T, spec.D
    for t, d in ((0, 0), (0, D), (T - 1, 0), (T - 1, D)):
        out[f"lambda[{t + 1},{d}]"] = np.exp(samples.log_lambda(t, d, 0))
    return out


def diagnostics(samples) -> Diagnostics:
    scalars = monitored_scalars(samples)
    m = samples.n_chains
    rhat = None
    if m >= 2:
        rhat = {k: split_rhat(samples.by_chain(v)) for k, v in scalars.items()}
    effective = {k: min(ess(samples.by_chain(v)), float(len(v))) for k, v in scalars.items()}
    return Diagnostics(rhat, effective)
