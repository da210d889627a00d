"""Negative-binomial run-off triangle model: mean structure, priors, posterior.

The count in cell ``(t, d, s)`` is NegBin with mean ``lambda`` and scale
``phi`` (variance ``lambda * (1 + lambda / phi)``) and

    log(lambda) = mu + X'gamma + alpha_t + alpha_ts + beta_d + beta_ds
                  + delta_ind_s + delta_iar_s

where the variant decides which blocks exist.  ``alpha`` and ``beta`` are
first-order random walks whose first element has a fixed vague precision.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.special import betaln

from .spatial import IarStructure, build_iar, iar_logdensity
from .triangle import RegionMap, ReportingTriangle

PRECISIONS = (
    "tau_alpha",
    "tau_beta",
    "tau_alpha_ts",
    "tau_beta_ds",
    "tau_delta_ind",
    "tau_delta_iar",
)
LOG2PI = math.log(2.0 * math.pi)


class Variant(str, enum.Enum):
    BASE = "BASE"
    M0 = "M0"
    M1 = "M1"
    M2 = "M2"
    M3 = "M3"
    M4 = "M4"
    M5 = "M5"
    M6 = "M6"
    M7 = "M7"

    @property
    def spatial(self) -> bool:
        return self is not Variant.BASE

    @property
    def has_iar(self) -> bool:
        return self.value in ("M1", "M3", "M5", "M7")

    @property
    def has_alpha_ts(self) -> bool:
        return self.value in ("M2", "M3", "M6", "M7")

    @property
    def has_beta_ds(self) -> bool:
        return self.value in ("M4", "M5", "M6", "M7")

    @property
    def formula(self) -> str:
        terms = ["mu", "alpha_t", "beta_d"]
        if self.spatial:
            terms.append("delta_s")
        if self.has_alpha_ts:
            terms.append("alpha_ts")
        if self.has_beta_ds:
            terms.append("beta_ds")
        if self.has_iar:
            terms.append("delta_iar_s")
        return " + ".join(terms)


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant
    T: int
    D: int
    S: int = 1
    covariate_count: int = 0
    anchor_precision: float = 1e-3
    hyperprior: tuple[float, float] = (1e-3, 1e-3)
    mu_prior_variance: float = 1e3

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "hyperprior", tuple(float(x) for x in self.hyperprior))
        if self.T < 1 or self.D < 1 or self.S < 1:
            raise ValueError(f"bad dimensions T={self.T}, D={self.D}, S={self.S}")
        if self.variant is Variant.BASE and self.S != 1:
            raise ValueError("BASE model is non-spatial and needs S = 1")
        if self.covariate_count < 0:
            raise ValueError("covariate_count must be >= 0")
        a, b = self.hyperprior
        if not (a > 0 and b > 0 and self.anchor_precision > 0 and self.mu_prior_variance > 0):
            raise ValueError("prior constants must be positive")

    @property
    def K(self) -> int:
        return self.D + 1

    @property
    def has_delta_ind(self) -> bool:
        return self.variant.spatial

    @property
    def has_iar(self) -> bool:
        return self.variant.has_iar

    @property
    def has_alpha_ts(self) -> bool:
        return self.variant.has_alpha_ts

    @property
    def has_beta_ds(self) -> bool:
        return self.variant.has_beta_ds

    def active_precisions(self) -> tuple[str, ...]:
        flags = (True, True, self.has_alpha_ts, self.has_beta_ds, self.has_delta_ind, self.has_iar)
        return tuple(n for n, on in zip(PRECISIONS, flags) if on)

    def with_dims(self, T: int, D: int | None = None, S: int | None = None) -> "ModelSpec":
        return replace(self, T=T, D=self.D if D is None else D, S=self.S if S is None else S)

    @classmethod
    def for_triangle(cls, variant, tri: ReportingTriangle, covariate_count: int = 0, **kw) -> "ModelSpec":
        return cls(Variant(variant), tri.T, tri.D, tri.S, covariate_count, **kw)

    def check_triangle(self, tri: ReportingTriangle) -> None:
        if (tri.T, tri.D, tri.S) != (self.T, self.D, self.S):
            raise ValueError(
                f"triangle dims (T={tri.T}, D={tri.D}, S={tri.S}) do not match "
                f"model (T={self.T}, D={self.D}, S={self.S})"
            )

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "T": self.T,
            "D": self.D,
            "S": self.S,
            "covariate_count": self.covariate_count,
            "anchor_precision": self.anchor_precision,
            "hyperprior": list(self.hyperprior),
            "mu_prior_variance": self.mu_prior_variance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["hyperprior"] = tuple(d.get("hyperprior", (1e-3, 1e-3)))
        return cls(**d)


@dataclass
class ParameterState:
    """One realisation of all model parameters; absent blocks stay zero."""

    mu: float
    gamma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    alpha_ts: np.ndarray
    beta_ds: np.ndarray
    delta_ind: np.ndarray
    delta_iar: np.ndarray
    tau_alpha: float = 1.0
    tau_beta: float = 1.0
    tau_alpha_ts: float = 1.0
    tau_beta_ds: float = 1.0
    tau_delta_ind: float = 1.0
    tau_delta_iar: float = 1.0
    phi: float = 1.0

    @classmethod
    def zeros(cls, spec: ModelSpec, mu: float = 0.0, **kw) -> "ParameterState":
        T, K, S, p = spec.T, spec.K, spec.S, spec.covariate_count
        state = cls(
            mu=mu,
            gamma=np.zeros(p),
            alpha=np.zeros(T),
            beta=np.zeros(K),
            alpha_ts=np.zeros((T, S)),
            beta_ds=np.zeros((K, S)),
            delta_ind=np.zeros(S),
            delta_iar=np.zeros(S),
        )
        for k, v in kw.items():
            setattr(state, k, np.array(v, dtype=float) if np.ndim(v) else float(v))
        return state

    def copy(self) -> "ParameterState":
        return replace(self, **{f.name: np.array(getattr(self, f.name)) for f in fields(self)
                                if isinstance(getattr(self, f.name), np.ndarray)})

    def precisions(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PRECISIONS], dtype=float)

    def check(self, spec: ModelSpec) -> None:
        """Raise ``ValueError`` if shapes, positivity or inactive blocks are wrong."""
        T, K, S, p = spec.T, spec.K, spec.S, spec.covariate_count
        shapes = {
            "gamma": (p,), "alpha": (T,), "beta": (K,), "alpha_ts": (T, S),
            "beta_ds": (K, S), "delta_ind": (S,), "delta_iar": (S,),
        }
        for name, shape in shapes.items():
            got = np.shape(getattr(self, name))
            if got != shape:
                raise ValueError(f"{name} has shape {got}, model needs {shape}")
        inactive = {
            "alpha_ts": not spec.has_alpha_ts, "beta_ds": not spec.has_beta_ds,
            "delta_ind": not spec.has_delta_ind, "delta_iar": not spec.has_iar,
        }
        for name, off in inactive.items():
            if off and np.any(getattr(self, name) != 0):
                raise ValueError(f"{name} is not part of {spec.variant.value} but is nonzero")
        for name in PRECISIONS + ("phi",):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class Layout:
    """Offsets of each latent block inside the flat parameter vector."""

    spec: ModelSpec
    offsets: dict = field(init=False)
    size: int = field(init=False)

    def __post_init__(self):
        s = self.spec
        sizes = [("mu", 1), ("gamma", s.covariate_count), ("alpha", s.T), ("beta", s.K),
                 ("alpha_ts", s.T * s.S), ("beta_ds", s.K * s.S), ("delta_ind", s.S),
                 ("delta_iar", s.S)]
        off, pos = {}, 0
        for name, n in sizes:
            off[name] = (pos, pos + n)
            pos += n
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "size", pos)

    BLOCKS = ("mu", "gamma", "alpha", "beta", "alpha_ts", "beta_ds", "delta_ind", "delta_iar")

    def shape(self, name: str) -> tuple:
        s = self.spec
        return {"mu": (), "gamma": (s.covariate_count,), "alpha": (s.T,), "beta": (s.K,),
                "alpha_ts": (s.T, s.S), "beta_ds": (s.K, s.S), "delta_ind": (s.S,),
                "delta_iar": (s.S,)}[name]

    def pack(self, state: ParameterState) -> np.ndarray:
        theta = np.empty(self.size)
        for name in self.BLOCKS:
            a, b = self.offsets[name]
            theta[a:b] = np.ravel(getattr(state, name))
        return theta

    def unpack(self, theta: np.ndarray, tau: np.ndarray, phi: float) -> ParameterState:
        kw = {}
        for name in self.BLOCKS:
            a, b = self.offsets[name]
            kw[name] = float(theta[a]) if name == "mu" else np.array(theta[a:b]).reshape(self.shape(name))
        kw.update({n: float(v) for n, v in zip(PRECISIONS, tau)})
        return ParameterState(phi=float(phi), **kw)


def as_covariates(X, spec: ModelSpec) -> np.ndarray:
    """Normalise covariates to shape ``(T, D+1, S, p)``; ``None`` means no covariates."""
    T, K, S, p = spec.T, spec.K, spec.S, spec.covariate_count
    if X is None:
        if p:
            raise ValueError(f"model expects {p} covariates but none given")
        return np.zeros((T, K, S, 0))
    X = np.asarray(X, dtype=float)
    if X.ndim == 3 and S == 1:
        X = X[:, :, None, :]
    if X.shape != (T, K, S, p):
        raise ValueError(f"covariates have shape {X.shape}, model needs {(T, K, S, p)}")
    if not np.isfinite(X).all():
        raise ValueError("covariates must be finite")
    return X


def _check_positive(name, x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise ValueError(f"{name} must be positive and finite")
    return x


def negbin_logpmf(n, lam, phi):
    """Log pmf of NegBin with mean ``lam`` and scale ``phi``.

    ``log Gamma(n+phi) - log Gamma(phi) - log n!`` is evaluated as
    ``-log(n) - betaln(n, phi)`` so that large ``phi`` stays accurate.
    """
    lam = _check_positive("lambda", lam)
    phi = _check_positive("phi", phi)
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("n must be non-negative")
    n = n.astype(float)
    safe_n = np.where(n > 0, n, 1.0)
    comb = np.where(n > 0, -np.log(safe_n) - betaln(safe_n, phi), 0.0)
    out = comb - phi * np.log1p(lam / phi) + n * (np.log(lam) - np.log(phi + lam))
    return out if out.ndim else float(out)


def linear_predictor(state: ParameterState, spec: ModelSpec, X=None) -> np.ndarray:
    """``log(lambda)`` for every cell, shape ``(T, D+1, S)``."""
    X = as_covariates(X, spec)
    eta = (
        state.mu
        + state.alpha[:, None, None]
        + state.beta[None, :, None]
        + X @ np.asarray(state.gamma, dtype=float)
    )
    if spec.has_alpha_ts:
        eta = eta + state.alpha_ts[:, None, :]
    if spec.has_beta_ds:
        eta = eta + state.beta_ds[None, :, :]
    if spec.has_delta_ind:
        eta = eta + state.delta_ind[None, None, :]
    if spec.has_iar:
        eta = eta + state.delta_iar[None, None, :]
    return np.broadcast_to(eta, (spec.T, spec.K, spec.S))


def log_mean(state: ParameterState, spec: ModelSpec, X, t: int, d: int, s: int = 0) -> float:
    for name, i, n in (("t", t, spec.T), ("d", d, spec.K), ("s", s, spec.S)):
        if not 0 <= i < n:
            raise IndexError(f"{name}={i} out of range [0, {n})")
    X = as_covariates(X, spec)
    val = state.mu + float(X[t, d, s] @ state.gamma) + state.alpha[t] + state.beta[d]
    if spec.has_alpha_ts:
        val += state.alpha_ts[t, s]
    if spec.has_beta_ds:
        val += state.beta_ds[d, s]
    if spec.has_delta_ind:
        val += state.delta_ind[s]
    if spec.has_iar:
        val += state.delta_iar[s]
    return float(val)


def normal_logpdf(x, precision: float) -> float:
    """Sum of zero-mean Gaussian log densities with the given precision."""
    x = np.asarray(x, dtype=float)
    return float(0.5 * x.size * (math.log(precision) - LOG2PI) - 0.5 * precision * np.sum(x * x))


def gamma_logpdf(x: float, shape: float, rate: float) -> float:
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * math.log(x) - rate * x


def rw1_logdensity(x, tau: float, anchor_precision: float) -> float:
    """First-order random walk: ``x[0] ~ N(0, 1/anchor)``, ``x[i] ~ N(x[i-1], 1/tau)``."""
    if not tau > 0 or not anchor_precision > 0:
        raise ValueError("precisions must be positive")
    x = np.asarray(x, dtype=float)
    if x.size < 1:
        raise ValueError("random walk needs at least one element")
    return normal_logpdf(x[:1], anchor_precision) + normal_logpdf(np.diff(x), tau)


def _iar(region_map) -> IarStructure:
    if isinstance(region_map, IarStructure):
        return region_map
    if isinstance(region_map, RegionMap):
        return build_iar(region_map)
    raise ValueError("model with an IAR block needs a region map")


def log_prior(state: ParameterState, spec: ModelSpec, region_map=None) -> float:
    state.check(spec)
    a, b = spec.hyperprior
    c = spec.anchor_precision
    lp = rw1_logdensity(state.alpha, state.tau_alpha, c)
    lp += rw1_logdensity(state.beta, state.tau_beta, c)
    if spec.has_alpha_ts:
        lp += normal_logpdf(state.alpha_ts, state.tau_alpha_ts)
    if spec.has_beta_ds:
        lp += normal_logpdf(state.beta_ds, state.tau_beta_ds)
    if spec.has_delta_ind:
        lp += normal_logpdf(state.delta_ind, state.tau_delta_ind)
    if spec.has_iar:
        iar = _iar(region_map)
        if iar.S != spec.S:
            raise ValueError(f"region map has {iar.S} regions, model has {spec.S}")
        lp += iar_logdensity(state.delta_iar, state.tau_delta_iar, iar)
    for name in spec.active_precisions() + ("phi",):
        lp += gamma_logpdf(getattr(state, name), a, b)
    v = 1.0 / spec.mu_prior_variance
    lp += normal_logpdf([state.mu], v) + normal_logpdf(state.gamma, v)
    return float(lp)


def cell_loglik(state: ParameterState, spec: ModelSpec, tri: ReportingTriangle, X=None) -> np.ndarray:
    """Per-cell log-likelihood over the whole array; unobserved cells are NaN."""
    spec.check_triangle(tri)
    lam = np.exp(linear_predictor(state, spec, X))
    out = np.full(tri.counts.shape, np.nan)
    m = tri.mask
    out[m] = negbin_logpmf(tri.counts[m], lam[m], state.phi)
    return out


def log_likelihood(state: ParameterState, spec: ModelSpec, X, tri: ReportingTriangle) -> float:
    if not tri.mask.any():
        spec.check_triangle(tri)
        return 0.0
    return float(np.nansum(cell_loglik(state, spec, tri, X)))


def log_posterior_unnormalized(state, spec, X, tri, region_map=None) -> float:
    return log_prior(state, spec, region_map) + log_likelihood(state, spec, X, tri)
