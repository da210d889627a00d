"""Intrinsic autoregressive (IAR) prior on areal units."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .triangle import RegionMap, validate_adjacency


@dataclass(frozen=True)
class IarStructure:
    """Precision structure ``Q = diag(degree) - W`` and its component partition."""

    Q: np.ndarray
    rank: int
    components: tuple[tuple[int, ...], ...]
    component_id: np.ndarray
    isolated: tuple[int, ...]
    warnings: tuple[str, ...] = ()

    @property
    def S(self) -> int:
        return self.Q.shape[0]

    @property
    def n_components(self) -> int:
        return len(self.components)

    def neighbours(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR-style ``(indptr, indices)`` of the adjacency graph."""
        W = -np.where(np.eye(self.S, dtype=bool), 0.0, self.Q)
        indptr = np.zeros(self.S + 1, dtype=np.int64)
        indices = []
        for i in range(self.S):
            nb = np.flatnonzero(W[i] > 0)
            indices.extend(nb.tolist())
            indptr[i + 1] = len(indices)
        return indptr, np.asarray(indices, dtype=np.int64)


def build_iar(region_map: RegionMap) -> IarStructure:
    diag = validate_adjacency(region_map)
    if not diag.symmetric:
        raise ValueError("IAR prior needs a symmetric adjacency matrix")
    W = region_map.adjacency.astype(float)
    Q = np.diag(W.sum(axis=1)) - W
    Q.setflags(write=False)
    comp_id = np.empty(region_map.S, dtype=np.int64)
    for c, members in enumerate(diag.components):
        comp_id[list(members)] = c
    comp_id.setflags(write=False)
    notes = []
    if diag.isolated:
        names = [region_map.regions[i] for i in diag.isolated]
        msg = f"isolated regions {names} get no structured spatial effect"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
    return IarStructure(
        Q=Q,
        rank=region_map.S - diag.n_components,
        components=diag.components,
        component_id=comp_id,
        isolated=diag.isolated,
        warnings=tuple(notes),
    )


def iar_quadratic(delta: np.ndarray, iar: IarStructure) -> float:
    delta = np.asarray(delta, dtype=float)
    return float(delta @ iar.Q @ delta)


def iar_logdensity(delta: np.ndarray, tau: float, iar: IarStructure) -> float:
    """``rank/2 * log(tau) - tau/2 * delta' Q delta``; the normalising constant is taken as 0."""
    if not tau > 0:
        raise ValueError(f"IAR precision must be positive, got {tau}")
    return 0.5 * iar.rank * np.log(tau) - 0.5 * tau * iar_quadratic(delta, iar)


def center_per_component(delta: np.ndarray, iar: IarStructure) -> np.ndarray:
    out = np.array(delta, dtype=float)
    for members in iar.components:
        idx = list(members)
        out[idx] -= out[idx].mean()
    return out
