"""Synthetic surveillance data from the model's own generative process."""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from . import rng as rngmod
from .inference import SamplerConfig
from .model import ModelSpec, ParameterState, linear_predictor
from .nowcast import fit_and_nowcast
from .spatial import build_iar
from .triangle import RegionMap, ReportingTriangle, censor, marginal_totals

log = logging.getLogger(__name__)

MAX_LOG_MEAN = 30.0
DEFAULT_START = dt.date(2011, 1, 2)  # a Sunday

HYPER_DEFAULTS = {
    "mu": np.log(20.0),
    "sigma_alpha": 0.1,
    "sigma_beta": 0.3,
    "phi": 10.0,
    "sigma_alpha_ts": 0.2,
    "sigma_beta_ds": 0.3,
    "sigma_delta_ind": 0.3,
    "sigma_delta_iar": 0.3,
    "alpha_drift": 0.0,
    "beta_drift": 0.0,
}


@dataclass(frozen=True)
class Outbreak:
    """Multiply ``lambda`` by ``amplitude`` for rows ``start .. start+duration-1`` (0-based)."""

    start: int
    duration: int
    amplitude: float

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError("outbreak amplitude must be positive")
        if self.duration < 0 or self.start < 0:
            raise ValueError("outbreak start and duration must be non-negative")

    def multiplier(self, T: int) -> np.ndarray:
        m = np.ones(T)
        m[self.start:self.start + self.duration] = self.amplitude
        return m


@dataclass(frozen=True)
class SimulationScenario:
    """What to simulate.

    Either ``truth`` holds an explicit :class:`ParameterState`, or effects
    are drawn from their priors given ``hyper`` (standard deviations and
    drifts; see ``HYPER_DEFAULTS``).  Random walks start at zero so ``mu``
    is the log-mean of cell ``(0, 0)``.
    """

    spec: ModelSpec
    hyper: dict = field(default_factory=dict)
    truth: ParameterState | None = None
    outbreak: Outbreak | None = None
    region_map: RegionMap | None = None
    seed: int = 0
    start: dt.date = DEFAULT_START

    def __post_init__(self):
        unknown = set(self.hyper) - set(HYPER_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown scenario hyperparameters {sorted(unknown)}")
        if self.region_map is not None and self.region_map.S != self.spec.S:
            raise ValueError("region map size does not match spec.S")
        if self.spec.has_iar and self.region_map is None:
            raise ValueError("IAR scenario needs a region map")
        if self.truth is not None:
            self.truth.check(self.spec)

    def value(self, name: str) -> float:
        return float(self.hyper.get(name, HYPER_DEFAULTS[name]))

    def replicate(self, r: int) -> "SimulationScenario":
        return replace(self, seed=rngmod.derive_seed(self.seed, "replicate", r))

    def to_dict(self) -> dict:
        out = {"spec": self.spec.to_dict(), "hyper": dict(self.hyper), "seed": self.seed,
               "start": self.start.isoformat()}
        if self.outbreak is not None:
            out["outbreak"] = {"start": self.outbreak.start, "duration": self.outbreak.duration,
                               "amplitude": self.outbreak.amplitude}
        if self.region_map is not None:
            out["regions"] = list(self.region_map.regions)
            out["adjacency"] = self.region_map.adjacency.tolist()
        if self.truth is not None:
            out["truth"] = state_to_dict(self.truth)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationScenario":
        spec = ModelSpec.from_dict(d["spec"])
        rmap = None
        if "adjacency" in d:
            W = np.asarray(d["adjacency"])
            regions = d.get("regions") or [f"R{k + 1}" for k in range(len(W))]
            rmap = RegionMap(tuple(regions), W)
        elif spec.S > 1:
            rmap = RegionMap.chain(spec.S)
        ob = d.get("outbreak")
        return cls(
            spec=spec,
            hyper=dict(d.get("hyper", {})),
            truth=state_from_dict(d["truth"]) if "truth" in d else None,
            outbreak=Outbreak(**ob) if ob else None,
            region_map=rmap,
            seed=int(d.get("seed", 0)),
            start=dt.date.fromisoformat(d["start"]) if "start" in d else DEFAULT_START,
        )


def state_to_dict(state: ParameterState) -> dict:
    return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in vars(state).items()}


def state_from_dict(d: dict) -> ParameterState:
    kw = {k: (np.asarray(v, dtype=float) if isinstance(v, list) else float(v)) for k, v in d.items()}
    return ParameterState(**kw)


@dataclass
class Truth:
    state: ParameterState
    log_lambda: np.ndarray
    totals: np.ndarray
    outbreak_multiplier: np.ndarray

    def to_dict(self) -> dict:
        return {
            "state": state_to_dict(self.state),
            "log_lambda": self.log_lambda.tolist(),
            "totals": self.totals.tolist(),
            "outbreak_multiplier": self.outbreak_multiplier.tolist(),
        }


def draw_state(scenario: SimulationScenario, rng: np.random.Generator) -> ParameterState:
    spec = scenario.spec
    T, K, S = spec.T, spec.K, spec.S
    v = scenario.value
    state = ParameterState.zeros(spec, mu=v("mu"))
    state.alpha = np.concatenate([[0.0], np.cumsum(v("alpha_drift") + v("sigma_alpha") * rng.standard_normal(T - 1))])
    state.beta = np.concatenate([[0.0], np.cumsum(v("beta_drift") + v("sigma_beta") * rng.standard_normal(K - 1))])
    state.tau_alpha = v("sigma_alpha") ** -2
    state.tau_beta = v("sigma_beta") ** -2
    state.phi = v("phi")
    if spec.has_alpha_ts:
        state.alpha_ts = v("sigma_alpha_ts") * rng.standard_normal((T, S))
        state.tau_alpha_ts = v("sigma_alpha_ts") ** -2
    if spec.has_beta_ds:
        state.beta_ds = v("sigma_beta_ds") * rng.standard_normal((K, S))
        state.tau_beta_ds = v("sigma_beta_ds") ** -2
    if spec.has_delta_ind:
        state.delta_ind = v("sigma_delta_ind") * rng.standard_normal(S)
        state.tau_delta_ind = v("sigma_delta_ind") ** -2
    if spec.has_iar:
        iar = build_iar(scenario.region_map)
        evals, evecs = np.linalg.eigh(iar.Q)
        keep = evals > 1e-9
        z = rng.standard_normal(keep.sum())
        state.delta_iar = v("sigma_delta_iar") * evecs[:, keep] @ (z / np.sqrt(evals[keep]))
        state.tau_delta_iar = v("sigma_delta_iar") ** -2
    return state


def simulate(scenario: SimulationScenario) -> tuple[ReportingTriangle, Truth]:
    """Draw an uncensored triangle and its latent truth; deterministic given the seed."""
    spec = scenario.spec
    rng = rngmod.stream(scenario.seed, "simulate")
    state = scenario.truth.copy() if scenario.truth is not None else draw_state(scenario, rng)
    eta = np.array(linear_predictor(state, spec))
    mult = scenario.outbreak.multiplier(spec.T) if scenario.outbreak else np.ones(spec.T)
    eta = eta + np.log(mult)[:, None, None]
    worst = float(eta.max())
    if worst > MAX_LOG_MEAN:
        raise ValueError(f"log-mean {worst:.1f} exceeds {MAX_LOG_MEAN}; rescale mu or the effect sizes")
    lam = np.exp(eta)
    counts = rng.poisson(rng.gamma(state.phi, lam / state.phi))
    regions = scenario.region_map.regions if scenario.region_map is not None else None
    full = ReportingTriangle(
        counts=counts,
        mask=np.ones_like(counts, dtype=bool),
        unit="week",
        start=scenario.start,
        as_of=None,
        regions=regions,
    )
    return full, Truth(state, eta, counts.sum(axis=1), mult)


def true_totals(full: ReportingTriangle) -> np.ndarray:
    return marginal_totals(full).observed


def coverage_experiment(
    scenario: SimulationScenario,
    replicates: int,
    cfg: SamplerConfig,
    level: float = 0.95,
    as_of: int | None = None,
) -> pd.DataFrame:
    """Simulate, censor at the last row, refit and score the nowcast intervals.

    One table row per replicate, target row and region, with the true total,
    the central interval at ``level``, whether it covers, its width and the
    error of the predictive mean.  Failed replicates are logged and recorded
    with an ``error`` message instead of aborting the experiment.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    rows = []
    for r in range(replicates):
        sc = scenario.replicate(r)
        try:
            full, _ = simulate(sc)
            T = full.T if as_of is None else as_of
            tri = censor(full, T)
            res = fit_and_nowcast(tri, sc.spec.with_dims(tri.T), cfg, region_map=sc.region_map,
                                  seed=rngmod.derive_seed(cfg.seed, "replicate", r))
        except Exception as exc:  # recorded, not fatal
            log.warning("replicate %d failed: %s", r, exc)
            rows.append({"replicate": r, "error": str(exc)})
            continue
        truth = true_totals(full)
        lo, hi = res.interval(level)
        mean = res.total_samples.mean(axis=0)
        for i, t in enumerate(res.t):
            for s in range(tri.S):
                n_true = int(truth[t, s])
                rows.append({
                    "replicate": r,
                    "t": int(t) + 1,
                    "lag": int(tri.T - 1 - t),
                    "s": tri.regions[s],
                    "truth": n_true,
                    "observed_partial": int(res.observed_partial[i, s]),
                    "lower": float(lo[i, s]),
                    "upper": float(hi[i, s]),
                    "covered": bool(lo[i, s] <= n_true <= hi[i, s]),
                    "width": float(hi[i, s] - lo[i, s]),
                    "error": None,
                    "mean_error": float(mean[i, s] - n_true),
                })
    return pd.DataFrame(rows)


def coverage_summary(table: pd.DataFrame) -> pd.DataFrame:
    """Empirical coverage, mean width and RMSE by lag behind the as-of row."""
    ok = table[table["error"].isna()] if "error" in table else table
    g = ok.groupby("lag")
    return pd.DataFrame({
        "coverage": g["covered"].mean(),
        "width": g["width"].mean(),
        "rmse": g["mean_error"].apply(lambda e: float(np.sqrt(np.mean(np.square(e))))),
        "n": g.size(),
    })
