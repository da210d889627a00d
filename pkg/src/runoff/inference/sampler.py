"""Adaptive Metropolis-within-Gibbs sampler for the run-off triangle models."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import rng as rngmod
from ..model import (
    PRECISIONS,
    Layout,
    ModelSpec,
    ParameterState,
    as_covariates,
    gamma_logpdf,
    log_likelihood,
    normal_logpdf,
    rw1_logdensity,
)
from ..spatial import IarStructure, build_iar, iar_logdensity
from ..triangle import RegionMap, ReportingTriangle
from . import _kernel

log = logging.getLogger(__name__)

BLOCK_NAMES = ("mu", "gamma", "alpha", "beta", "alpha_ts", "beta_ds", "delta_ind", "delta_iar", "phi")
FIXABLE = PRECISIONS + ("phi",)


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 3
    iterations: int = 20_000
    burn_in: int = 10_000
    thin: int = 5
    seed: int = 0
    target_acceptance: float = 0.44
    adapt_window: int = 50
    initial_scale: float = 0.1
    fixed: dict = field(default_factory=dict)
    threads: int = 1

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1 or self.adapt_window < 1:
            raise ValueError("thin and adapt_window must be >= 1")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target_acceptance must lie in (0, 1)")
        bad = set(self.fixed) - set(FIXABLE)
        if bad:
            raise ValueError(f"only {FIXABLE} can be fixed, got {sorted(bad)}")
        for k, v in self.fixed.items():
            if not v > 0:
                raise ValueError(f"fixed value of {k} must be positive")

    @property
    def draws_per_chain(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PosteriorSamples:
    """Stacked draws of every chain, in chain-major order.

    ``theta`` holds the latent effects in the flat :class:`~runoff.model.Layout`
    order, ``tau`` the six precisions (fixed at 1 when the block is absent).
    """

    spec: ModelSpec
    config: SamplerConfig
    chain: np.ndarray
    iteration: np.ndarray
    theta: np.ndarray
    tau: np.ndarray
    phi: np.ndarray
    acceptance: dict = field(default_factory=dict)
    scale_history: np.ndarray | None = None
    burn_in_batches: int = 0

    @property
    def layout(self) -> Layout:
        return Layout(self.spec)

    def __len__(self) -> int:
        return len(self.phi)

    @property
    def n_chains(self) -> int:
        return int(self.chain.max()) + 1 if len(self) else 0

    def state(self, i: int) -> ParameterState:
        return self.layout.unpack(self.theta[i], self.tau[i], self.phi[i])

    def __iter__(self):
        return (self.state(i) for i in range(len(self)))

    @property
    def draws(self) -> list[ParameterState]:
        return list(self)

    def param(self, name: str) -> np.ndarray:
        """Draws of one named block, shape ``(n_draws, *block_shape)``."""
        if name == "phi":
            return self.phi
        if name in PRECISIONS:
            return self.tau[:, PRECISIONS.index(name)]
        lay = self.layout
        a, b = lay.offsets[name]
        return self.theta[:, a:b].reshape((len(self),) + lay.shape(name))

    def by_chain(self, values: np.ndarray) -> np.ndarray:
        """Reshape a per-draw vector into ``(chains, draws_per_chain)``."""
        return np.asarray(values).reshape(self.n_chains, -1)

    def log_lambda(self, t: int, d: int, s: int = 0, X=None) -> np.ndarray:
        X = as_covariates(X, self.spec)
        eta = self.param("mu") + self.param("gamma") @ X[t, d, s] + self.param("alpha")[:, t] \
            + self.param("beta")[:, d]
        if self.spec.has_alpha_ts:
            eta = eta + self.param("alpha_ts")[:, t, s]
        if self.spec.has_beta_ds:
            eta = eta + self.param("beta_ds")[:, d, s]
        if self.spec.has_delta_ind:
            eta = eta + self.param("delta_ind")[:, s]
        if self.spec.has_iar:
            eta = eta + self.param("delta_iar")[:, s]
        return eta

    def subset(self, idx) -> "PosteriorSamples":
        idx = np.asarray(idx)
        return PosteriorSamples(self.spec, self.config, self.chain[idx], self.iteration[idx],
                                self.theta[idx], self.tau[idx], self.phi[idx],
                                dict(self.acceptance), self.scale_history, self.burn_in_batches)


def adapt_step(scale: float, acceptance: float, target: float = 0.44, batch: int = 1) -> float:
    """Robbins-Monro step on the log proposal scale with gain ``batch ** -0.6``."""
    return scale * math.exp(batch ** -0.6 * (acceptance - target))


def gibbs_precision(values, prior=(1e-3, 1e-3), effective_dim=None, rng=None, *, sum_of_squares=None):
    """Draw a precision from its Gamma full conditional.

    ``values`` are the terms whose squares enter the Gaussian kernel (random-walk
    increments, unstructured effects).  For the IAR block pass the quadratic
    form through ``sum_of_squares`` and the rank as ``effective_dim``.
    """
    shape, rate = precision_conditional(values, prior, effective_dim, sum_of_squares=sum_of_squares)
    rng = np.random.default_rng() if rng is None else rng
    return float(max(rng.gamma(shape, 1.0 / rate), _kernel.TAU_FLOOR))


def precision_conditional(values, prior=(1e-3, 1e-3), effective_dim=None, *, sum_of_squares=None):
    """``(shape, rate)`` of the Gamma full conditional of a precision."""
    a, b = prior
    if sum_of_squares is None:
        v = np.asarray(values, dtype=float)
        ss = float(v @ v)
        dim = v.size if effective_dim is None else effective_dim
    else:
        ss = float(sum_of_squares)
        dim = effective_dim
    if ss < 0:
        raise RuntimeError("negative sum of squares in precision update")
    return a + 0.5 * dim, b + 0.5 * ss


def initial_state(spec: ModelSpec, tri: ReportingTriangle) -> ParameterState:
    obs = tri.counts[tri.mask]
    mean = obs.mean() if obs.size else 0.0
    return ParameterState.zeros(spec, mu=math.log(mean + 0.5))


def _block_logdensities(state, spec, X, tri, iar) -> dict:
    a, b = spec.hyperprior
    c = spec.anchor_precision
    v = 1.0 / spec.mu_prior_variance
    parts = {
        "mu": normal_logpdf([state.mu], v),
        "gamma": normal_logpdf(state.gamma, v),
        "alpha": rw1_logdensity(state.alpha, state.tau_alpha, c),
        "beta": rw1_logdensity(state.beta, state.tau_beta, c),
        "phi": gamma_logpdf(state.phi, a, b),
    }
    try:
        with np.errstate(over="ignore"):
            parts["likelihood"] = log_likelihood(state, spec, X, tri)
    except ValueError:
        parts["likelihood"] = -np.inf
    if spec.has_alpha_ts:
        parts["alpha_ts"] = normal_logpdf(state.alpha_ts, state.tau_alpha_ts)
    if spec.has_beta_ds:
        parts["beta_ds"] = normal_logpdf(state.beta_ds, state.tau_beta_ds)
    if spec.has_delta_ind:
        parts["delta_ind"] = normal_logpdf(state.delta_ind, state.tau_delta_ind)
    if spec.has_iar:
        parts["delta_iar"] = iar_logdensity(state.delta_iar, state.tau_delta_iar, iar)
    for name in spec.active_precisions():
        parts[name] = gamma_logpdf(getattr(state, name), a, b)
    return parts


class _Problem:
    """Kernel inputs shared by every chain."""

    def __init__(self, tri, spec, X, iar):
        self.spec, self.layout = spec, Layout(spec)
        lay = self.layout
        idx = np.argwhere(tri.mask)
        self.cells = idx
        self.y = tri.counts[tri.mask].astype(np.float64)
        cell_id = -np.ones(tri.counts.shape, dtype=np.int64)
        cell_id[tri.mask] = np.arange(len(idx))
        T, K, S = tri.counts.shape

        active = {"mu": True, "gamma": spec.covariate_count > 0, "alpha": True, "beta": True,
                  "alpha_ts": spec.has_alpha_ts, "beta_ds": spec.has_beta_ds,
                  "delta_ind": spec.has_delta_ind, "delta_iar": spec.has_iar}
        n_theta = lay.size
        incid = [[] for _ in range(n_theta)]
        block_of = np.zeros(n_theta, dtype=np.int64)
        for b, name in enumerate(Layout.BLOCKS):
            lo, hi = lay.offsets[name]
            block_of[lo:hi] = b
        for c, (t, d, s) in enumerate(idx):
            incid[lay.offsets["mu"][0]].append((c, 1.0))
            for j in range(spec.covariate_count):
                if X[t, d, s, j] != 0:
                    incid[lay.offsets["gamma"][0] + j].append((c, X[t, d, s, j]))
            incid[lay.offsets["alpha"][0] + t].append((c, 1.0))
            incid[lay.offsets["beta"][0] + d].append((c, 1.0))
            if active["alpha_ts"]:
                incid[lay.offsets["alpha_ts"][0] + t * S + s].append((c, 1.0))
            if active["beta_ds"]:
                incid[lay.offsets["beta_ds"][0] + d * S + s].append((c, 1.0))
            if active["delta_ind"]:
                incid[lay.offsets["delta_ind"][0] + s].append((c, 1.0))
            if active["delta_iar"]:
                incid[lay.offsets["delta_iar"][0] + s].append((c, 1.0))
        self.ptr = np.zeros(n_theta + 1, dtype=np.int64)
        self.ptr[1:] = np.cumsum([len(x) for x in incid])
        self.cell = np.array([c for x in incid for c, _ in x], dtype=np.int64)
        self.coef = np.array([w for x in incid for _, w in x], dtype=np.float64)
        self.block_of = block_of
        self.sites = np.concatenate(
            [np.arange(*lay.offsets[n]) for n in Layout.BLOCKS if active[n]]
        ).astype(np.int64)
        self.offsets = np.array([lay.offsets[n][0] for n in Layout.BLOCKS] + [n_theta], dtype=np.int64)
        self.dims = np.array([T, K, S, spec.covariate_count], dtype=np.int64)
        a, b = spec.hyperprior
        self.consts = np.array([spec.anchor_precision, 1.0 / spec.mu_prior_variance, a, b])

        if spec.has_iar:
            nb_ptr, nb_idx = iar.neighbours()
            members = [list(c) for c in iar.components]
            comp_ptr = np.zeros(len(members) + 1, dtype=np.int64)
            comp_ptr[1:] = np.cumsum([len(m) for m in members])
            comp_members = np.array([i for m in members for i in m], dtype=np.int64)
            comp_id = np.asarray(iar.component_id, dtype=np.int64)
            rank = iar.rank
            absorb_mu = len(members) == 1
        else:
            nb_ptr = np.zeros(S + 1, dtype=np.int64)
            nb_idx = np.zeros(0, dtype=np.int64)
            comp_ptr = np.array([0, S], dtype=np.int64)
            comp_members = np.arange(S, dtype=np.int64)
            comp_id = np.zeros(S, dtype=np.int64)
            rank, absorb_mu = 0, True
        self.iar_args = (nb_ptr, nb_idx, comp_ptr, comp_members, comp_id, rank)
        self.flags = np.array([spec.has_alpha_ts, spec.has_beta_ds, spec.has_delta_ind,
                               spec.has_iar, absorb_mu], dtype=np.bool_)


def _run_one_chain(problem: _Problem, state: ParameterState, cfg: SamplerConfig, chain_id: int):
    lay = problem.layout
    theta = lay.pack(state)
    tau = state.precisions()
    phi = np.array([state.phi])
    fixed = np.zeros(7, dtype=np.bool_)
    for k, v in cfg.fixed.items():
        j = FIXABLE.index(k)
        fixed[j] = True
        if j < 6:
            tau[j] = v
        else:
            phi[0] = v
    scales = np.full(lay.size + 1, cfg.initial_scale)
    n_keep = cfg.draws_per_chain
    out_theta = np.zeros((n_keep, lay.size))
    out_tau = np.zeros((n_keep, 6))
    out_phi = np.zeros(n_keep)
    out_iter = np.zeros(n_keep, dtype=np.int64)
    acc = np.zeros((_kernel.N_BLOCKS, 2))
    hist = np.full((cfg.iterations // cfg.adapt_window, _kernel.N_BLOCKS), np.nan)
    gen = rngmod.stream(cfg.seed, "chain", chain_id)
    kept = _kernel.run_chain(
        gen, problem.y, problem.ptr, problem.cell, problem.coef,
        theta, tau, phi, scales,
        problem.block_of, problem.sites, problem.offsets, problem.dims,
        problem.consts, problem.flags, fixed, *problem.iar_args,
        cfg.iterations, cfg.burn_in, cfg.thin, cfg.adapt_window, cfg.target_acceptance,
        out_theta, out_tau, out_phi, out_iter, acc, hist,
    )
    assert kept == n_keep
    return out_theta, out_tau, out_phi, out_iter, acc, hist


def run_mcmc(
    tri: ReportingTriangle,
    spec: ModelSpec,
    X=None,
    region_map: RegionMap | IarStructure | None = None,
    cfg: SamplerConfig | None = None,
    init: ParameterState | None = None,
) -> PosteriorSamples:
    """Sample the posterior with adaptive single-site Metropolis-within-Gibbs.

    Each sweep does single-site Gaussian random-walk updates of every active
    latent effect, exact Gibbs moves along the directions that leave the
    likelihood unchanged (overall level traded between ``mu`` and the effect
    blocks), conjugate Gamma draws of the active precisions, and a log-scale
    random walk on ``phi``.  The IAR block is kept centred per connected
    component.  Chain ``k`` uses the PCG64 stream keyed by ``(seed, "chain", k)``
    so results do not depend on ``cfg.threads``.
    """
    cfg = SamplerConfig() if cfg is None else cfg
    spec.check_triangle(tri)
    X = as_covariates(X, spec)
    iar = None
    if spec.has_iar:
        if region_map is None:
            raise ValueError(f"{spec.variant.value} needs a region map for its IAR block")
        iar = region_map if isinstance(region_map, IarStructure) else build_iar(region_map)
        if iar.S != spec.S:
            raise ValueError(f"region map has {iar.S} regions, model has {spec.S}")

    state = initial_state(spec, tri) if init is None else init.copy()
    for k, v in cfg.fixed.items():
        setattr(state, k, float(v))
    state.check(spec)
    for block, val in _block_logdensities(state, spec, X, tri, iar).items():
        if not np.isfinite(val):
            raise ValueError(f"non-finite log posterior at initialisation in block {block!r}")

    problem = _Problem(tri, spec, X, iar)
    jobs = range(cfg.chains)
    if cfg.threads > 1 and cfg.chains > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            results = list(ex.map(lambda k: _run_one_chain(problem, state, cfg, k), jobs))
    else:
        results = [_run_one_chain(problem, state, cfg, k) for k in jobs]

    acc = sum(r[4] for r in results)
    acceptance = {
        BLOCK_NAMES[b]: float(acc[b, 0] / acc[b, 1]) for b in range(len(BLOCK_NAMES)) if acc[b, 1] > 0
    }
    n = cfg.draws_per_chain
    samples = PosteriorSamples(
        spec=spec,
        config=cfg,
        chain=np.repeat(np.arange(cfg.chains), n),
        iteration=np.concatenate([r[3] for r in results]),
        theta=np.concatenate([r[0] for r in results]),
        tau=np.concatenate([r[1] for r in results]),
        phi=np.concatenate([r[2] for r in results]),
        acceptance=acceptance,
        scale_history=np.stack([r[5] for r in results]),
        burn_in_batches=cfg.burn_in // cfg.adapt_window,
    )
    log.info("sampled %d draws; acceptance %s", len(samples), acceptance)
    return samples
