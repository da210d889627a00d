"""Run-off triangles: ingestion of line lists, censoring geometry, region maps.

Arrays are always stored with shape ``(T, D + 1, S)``; a non-spatial
triangle simply has ``S == 1``.  Python-side indices are 0-based; the
file formats in :mod:`runoff.io` use 1-based ``t`` and ``s``.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

SUNDAY = 6  # datetime.weekday() numbering
UNITS = ("week", "day")


@dataclass(frozen=True)
class LineListRecord:
    event_time: dt.date
    report_time: dt.date
    region: str | None = None


@dataclass(frozen=True)
class RegionMap:
    """Ordered regions plus a 0/1 adjacency matrix."""

    regions: tuple[str, ...]
    adjacency: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.adjacency)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {W.shape}")
        if W.shape[0] != len(self.regions):
            raise ValueError(
                f"adjacency is {W.shape[0]}x{W.shape[0]} but {len(self.regions)} regions given"
            )
        if not np.isin(W, (0, 1)).all():
            raise ValueError("adjacency entries must be 0 or 1")
        if np.any(np.diag(W) != 0):
            bad = np.flatnonzero(np.diag(W)).tolist()
            raise ValueError(f"adjacency has nonzero diagonal at rows {bad}")
        if len(set(self.regions)) != len(self.regions):
            raise ValueError("duplicate region identifiers")
        W = W.astype(np.int64)
        W.setflags(write=False)
        object.__setattr__(self, "regions", tuple(str(r) for r in self.regions))
        object.__setattr__(self, "adjacency", W)

    @property
    def S(self) -> int:
        return len(self.regions)

    def index(self, region: str) -> int:
        try:
            return self.regions.index(region)
        except ValueError:
            raise KeyError(region) from None

    @classmethod
    def chain(cls, S: int, prefix: str = "R") -> "RegionMap":
        W = np.zeros((S, S), dtype=np.int64)
        i = np.arange(S - 1)
        W[i, i + 1] = W[i + 1, i] = 1
        return cls(tuple(f"{prefix}{k + 1}" for k in range(S)), W)

    @classmethod
    def from_edges(cls, S: int, edges, prefix: str = "R") -> "RegionMap":
        """Map with regions ``R1..RS`` and undirected 0-based ``edges``."""
        W = np.zeros((S, S), dtype=np.int64)
        for i, j in edges:
            W[i, j] = W[j, i] = 1
        return cls(tuple(f"{prefix}{k + 1}" for k in range(S)), W)

    @classmethod
    def single(cls, name: str = "all") -> "RegionMap":
        return cls((name,), np.zeros((1, 1), dtype=np.int64))


@dataclass(frozen=True)
class AdjacencyDiagnostics:
    symmetric: bool
    n_components: int
    components: tuple[tuple[int, ...], ...]
    isolated: tuple[int, ...]
    degrees: np.ndarray = field(repr=False)

    @property
    def ok(self) -> bool:
        return self.symmetric and not self.isolated


def validate_adjacency(region_map: RegionMap) -> AdjacencyDiagnostics:
    """Report (never repair) problems with an adjacency matrix.

    Non-square, non-binary and nonzero-diagonal matrices are already
    rejected by :class:`RegionMap`; asymmetry and isolated regions are
    reported here.
    """
    W = region_map.adjacency
    symmetric = bool(np.array_equal(W, W.T))
    # components of the undirected closure, so asymmetric input still gets a partition
    n_comp, labels = connected_components(csr_matrix(W | W.T), directed=False)
    comps = tuple(tuple(np.flatnonzero(labels == c).tolist()) for c in range(n_comp))
    comps = tuple(sorted(comps, key=lambda c: c[0]))
    degrees = (W | W.T).sum(axis=1)
    isolated = tuple(np.flatnonzero(degrees == 0).tolist())
    return AdjacencyDiagnostics(symmetric, n_comp, comps, isolated, degrees)


@dataclass(frozen=True)
class ReportingTriangle:
    """Censored delay counts ``counts[t, d, s]`` with observation mask.

    Unobserved cells hold 0 in ``counts`` and must be read through ``mask``.
    ``start`` is the first day of time unit ``t = 0``.
    """

    counts: np.ndarray
    mask: np.ndarray
    unit: str = "week"
    start: dt.date | None = None
    as_of: dt.date | None = None
    overflow: np.ndarray | None = None
    regions: tuple[str, ...] | None = None

    def __post_init__(self):
        counts = np.asarray(self.counts)
        mask = np.asarray(self.mask, dtype=bool)
        if counts.ndim == 2:
            counts = counts[:, :, None]
        if mask.ndim == 2:
            mask = mask[:, :, None]
        if counts.ndim != 3 or counts.shape != mask.shape:
            raise ValueError(f"counts {counts.shape} and mask {mask.shape} must be equal 3-D shapes")
        T, K, S = counts.shape
        if K < 2:
            raise ValueError("need D >= 1")
        if np.any(counts[mask] < 0):
            raise ValueError("observed counts must be non-negative")
        counts = np.where(mask, counts, 0).astype(np.int64)
        if self.unit not in UNITS:
            raise ValueError(f"unit must be one of {UNITS}")
        overflow = (
            np.zeros((T, S), dtype=np.int64)
            if self.overflow is None
            else np.asarray(self.overflow, dtype=np.int64).reshape(T, S)
        )
        regions = (
            tuple(f"R{k + 1}" for k in range(S)) if self.regions is None else tuple(self.regions)
        )
        if len(regions) != S:
            raise ValueError(f"{len(regions)} region names for S={S}")
        for a in (counts, mask, overflow):
            a.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "overflow", overflow)
        object.__setattr__(self, "regions", regions)

    @property
    def T(self) -> int:
        return self.counts.shape[0]

    @property
    def D(self) -> int:
        return self.counts.shape[1] - 1

    @property
    def S(self) -> int:
        return self.counts.shape[2]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    def is_standard_geometry(self) -> bool:
        return bool(np.array_equal(self.mask, censoring_mask(self.T, self.D, self.S)))

    def observed(self) -> np.ndarray:
        """Float copy of the counts with NaN in unobserved cells."""
        return np.where(self.mask, self.counts.astype(float), np.nan)


def censoring_mask(T: int, D: int, S: int = 1, as_of: int | None = None) -> np.ndarray:
    """``mask[t, d, s] = t + d <= as_of`` (0-based; default ``as_of = T - 1``)."""
    last = T - 1 if as_of is None else as_of
    t = np.arange(T)[:, None]
    d = np.arange(D + 1)[None, :]
    return np.broadcast_to(((t + d) <= last)[:, :, None], (T, D + 1, S)).copy()


def period_start(day: dt.date, unit: str = "week", week_start: int = SUNDAY) -> dt.date:
    if unit == "day":
        return day
    return day - dt.timedelta(days=(day.weekday() - week_start) % 7)


def period_index(day: dt.date, origin: dt.date, unit: str = "week") -> int:
    days = (day - origin).days
    return days if unit == "day" else days // 7


def build_triangle(
    records: Sequence[LineListRecord],
    unit: str = "week",
    D: int = 10,
    as_of: dt.date | None = None,
    regions: RegionMap | None = None,
    *,
    start: dt.date | None = None,
    week_start: int = SUNDAY,
) -> ReportingTriangle:
    """Aggregate a line list into a censored run-off triangle.

    The delay of a record is the number of whole time units between the
    unit containing its event date and the unit containing its report date.
    Records with delay greater than ``D`` go to ``overflow``.  Records
    reported after ``as_of`` are not yet known and are left out.

    Parameters
    ----------
    records : sequence of LineListRecord
    unit : {"week", "day"}
        Epidemiological weeks start on ``week_start`` (Sunday by default).
    D : int
        Maximum delay kept in the triangle.
    as_of : date
        Its time unit is row ``T - 1``.  Defaults to the last day of the
        time unit holding the latest event.
    regions : RegionMap, optional
        When given, every record must carry a known region key.
    start : date, optional
        Any day in the first time unit; defaults to the earliest event.
    """
    if unit not in UNITS:
        raise ValueError(f"unit must be one of {UNITS}")
    if D < 1:
        raise ValueError("D must be >= 1")
    records = list(records)
    if not records:
        raise ValueError("empty record set")
    for i, r in enumerate(records):
        if r.report_time < r.event_time:
            raise ValueError(f"record {i}: report_time {r.report_time} precedes event_time {r.event_time}")
        if regions is not None:
            if r.region is None:
                raise ValueError(f"record {i}: missing region")
            if r.region not in regions.regions:
                raise ValueError(f"record {i}: unknown region {r.region!r}")
    first_event = min(r.event_time for r in records)
    if as_of is None:
        last = period_start(max(r.event_time for r in records), unit, week_start)
        as_of = last + dt.timedelta(days=6 if unit == "week" else 0)
    late = [i for i, r in enumerate(records) if r.event_time > as_of]
    if late:
        raise ValueError(f"record {late[0]}: event_time after as_of {as_of}")
    origin = period_start(start if start is not None else first_event, unit, week_start)
    if first_event < origin:
        raise ValueError(f"start {origin} is after the earliest event {first_event}")
    T = period_index(as_of, origin, unit) + 1
    if T <= D:
        raise ValueError(f"need T > D for at least one fully observed row, got T={T}, D={D}")
    S = 1 if regions is None else regions.S
    counts = np.zeros((T, D + 1, S), dtype=np.int64)
    overflow = np.zeros((T, S), dtype=np.int64)
    for r in records:
        if r.report_time > as_of:
            continue
        t = period_index(r.event_time, origin, unit)
        d = period_index(r.report_time, origin, unit) - t
        s = 0 if regions is None else regions.index(r.region)
        if d > D:
            overflow[t, s] += 1
        else:
            counts[t, d, s] += 1
    return ReportingTriangle(
        counts=counts,
        mask=censoring_mask(T, D, S),
        unit=unit,
        start=origin,
        as_of=as_of,
        overflow=overflow,
        regions=None if regions is None else regions.regions,
    )


def triangle_from_matrix(
    matrix,
    *,
    unit: str = "week",
    start: dt.date | None = None,
    as_of: dt.date | None = None,
    regions: Sequence[str] | None = None,
    overflow=None,
    check_geometry: bool = True,
) -> ReportingTriangle:
    """Wrap a pre-aggregated ``(T, D+1[, S])`` matrix; NaN/None marks unobserved."""
    arr = np.array(matrix, dtype=float)
    mask = ~np.isnan(arr)
    if arr.ndim == 2:
        arr, mask = arr[:, :, None], mask[:, :, None]
    if np.any(arr[mask] != np.round(arr[mask])):
        raise ValueError("counts must be integers")
    T, K, S = arr.shape
    if check_geometry and not np.array_equal(mask, censoring_mask(T, K - 1, S)):
        raise ValueError("observed cells must be exactly {(t, d): t + d <= T}")
    if T <= K - 1:
        raise ValueError("need T > D")
    counts = np.where(mask, arr, 0).astype(np.int64)
    return ReportingTriangle(counts, mask, unit, start, as_of, overflow, regions)


@dataclass(frozen=True)
class MarginalTotals:
    """Observed partial sums per ``(t, s)`` and whether the row is complete."""

    observed: np.ndarray
    fully_observed: np.ndarray

    def __getitem__(self, key):
        return int(self.observed[key]), bool(self.fully_observed[key])


def marginal_totals(tri: ReportingTriangle) -> MarginalTotals:
    observed = np.where(tri.mask, tri.counts, 0).sum(axis=1)
    return MarginalTotals(observed, tri.mask.all(axis=1))


def records_per_period(
    records: Iterable[LineListRecord], origin: dt.date, T: int, unit: str = "week",
    regions: RegionMap | None = None, as_of: dt.date | None = None,
) -> np.ndarray:
    """Raw record counts per event period and region (ingestion audit)."""
    S = 1 if regions is None else regions.S
    out = np.zeros((T, S), dtype=np.int64)
    for r in records:
        if as_of is not None and r.report_time > as_of:
            continue
        s = 0 if regions is None else regions.index(r.region)
        out[period_index(r.event_time, origin, unit), s] += 1
    return out



def censor(full: ReportingTriangle, as_of) -> ReportingTriangle:
    """The triangle as it would be seen at period ``as_of``.

    ``as_of`` is a 1-based period count (or a date when ``full.start`` is
    set).  Rows after ``as_of`` are dropped and cells with ``t + d`` beyond it
    are masked; an ``as_of`` past the last row only masks what is still
    unreported by then.
    """
    if isinstance(as_of, dt.date):
        if full.start is None:
            raise ValueError("date as_of needs a triangle with a start date")
        as_of = period_index(as_of, full.start, full.unit) + 1
    as_of = int(as_of)
    if as_of < 1:
        raise ValueError("as_of must be >= 1")
    T = min(as_of, full.T)
    if T <= full.D and as_of <= full.T:
        raise ValueError(f"need T > D, got T={T}, D={full.D}")
    mask = full.mask[:T] & censoring_mask(T, full.D, full.S, as_of=as_of - 1)
    as_of_date = None
    if full.start is not None:
        step = 7 if full.unit == "week" else 1
        as_of_date = full.start + dt.timedelta(days=step * (as_of - 1))
    return ReportingTriangle(
        counts=np.where(mask, full.counts[:T], 0),
        mask=mask,
        unit=full.unit,
        start=full.start,
        as_of=as_of_date,
        overflow=full.overflow[:T],
        regions=full.regions,
    )
