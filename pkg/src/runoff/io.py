"""File formats: line-list CSV, triangle JSON, adjacency CSV, posterior samples.

Files use 1-based ``t`` and ``s`` and 0-based delays ``d``.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
from pathlib import Path

import numpy as np
import pandas as pd

from .inference import PosteriorSamples, SamplerConfig
from .model import PRECISIONS, Layout, ModelSpec
from .triangle import LineListRecord, RegionMap, ReportingTriangle

FORMAT_VERSION = 1


def _version() -> str:
    from . import __version__

    return __version__


class FormatError(ValueError):
    pass


def read_line_list(path) -> list[LineListRecord]:
    """Parse ``event_date,report_date[,region]``; errors carry the file line number."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        missing = {"event_date", "report_date"} - set(cols)
        if missing:
            raise FormatError(f"line 1: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                ev = dt.date.fromisoformat(row["event_date"].strip())
                rep = dt.date.fromisoformat(row["report_date"].strip())
            except (ValueError, AttributeError) as exc:
                raise FormatError(f"line {lineno}: {exc}") from None
            region = (row.get("region") or "").strip() or None
            records.append(LineListRecord(ev, rep, region))
    return records


def write_line_list(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["event_date", "report_date", "region"])
        for r in records:
            w.writerow([r.event_time.isoformat(), r.report_time.isoformat(), r.region or ""])


def triangle_to_dict(tri: ReportingTriangle) -> dict:
    counts = [[[int(tri.counts[t, d, s]) if tri.mask[t, d, s] else None for s in range(tri.S)]
               for d in range(tri.D + 1)] for t in range(tri.T)]
    if tri.S == 1:
        counts = [[row[0] for row in rows] for rows in counts]
    return {
        "format": "runoff-triangle",
        "format_version": FORMAT_VERSION,
        "version": _version(),
        "T": tri.T,
        "D": tri.D,
        "S": tri.S,
        "unit": tri.unit,
        "start": tri.start.isoformat() if tri.start else None,
        "as_of": tri.as_of.isoformat() if tri.as_of else None,
        "regions": list(tri.regions),
        "counts": counts,
        "overflow": tri.overflow.tolist() if tri.S > 1 else tri.overflow[:, 0].tolist(),
    }


def triangle_from_dict(d: dict) -> ReportingTriangle:
    try:
        T, D, S = int(d["T"]), int(d["D"]), int(d.get("S", 1))
        raw = d["counts"]
    except KeyError as exc:
        raise FormatError(f"triangle file lacks field {exc}") from None
    arr = np.array(
        [[[np.nan if v is None else v for v in (c if isinstance(c, list) else [c])] for c in row] for row in raw],
        dtype=float,
    )
    if arr.shape != (T, D + 1, S):
        raise FormatError(f"counts have shape {arr.shape}, header says {(T, D + 1, S)}")
    mask = ~np.isnan(arr)
    date = lambda k: dt.date.fromisoformat(d[k]) if d.get(k) else None  # noqa: E731
    return ReportingTriangle(
        counts=np.where(mask, arr, 0).astype(np.int64),
        mask=mask,
        unit=d.get("unit", "week"),
        start=date("start"),
        as_of=date("as_of"),
        overflow=np.asarray(d.get("overflow", np.zeros((T, S))), dtype=np.int64).reshape(T, S),
        regions=tuple(d["regions"]) if d.get("regions") else None,
    )


def write_triangle(tri: ReportingTriangle, path) -> None:
    Path(path).write_text(json.dumps(triangle_to_dict(tri), indent=1) + "\n")


def read_triangle(path) -> ReportingTriangle:
    return triangle_from_dict(json.loads(Path(path).read_text()))


def read_adjacency(path) -> RegionMap:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise FormatError("empty adjacency file")
    header = [h.strip() for h in rows[0][1:]]
    names, W = [], []
    for lineno, r in enumerate(rows[1:], start=2):
        names.append(r[0].strip())
        try:
            W.append([int(x) for x in r[1:]])
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    if names != header:
        raise FormatError("row identifiers must match the header row")
    if any(len(w) != len(names) for w in W):
        raise FormatError("adjacency must be square")
    return RegionMap(tuple(names), np.array(W, dtype=np.int64))


def write_adjacency(rmap: RegionMap, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([""] + list(rmap.regions))
        for name, row in zip(rmap.regions, rmap.adjacency):
            w.writerow([name] + [int(x) for x in row])


def sample_columns(spec: ModelSpec) -> list[tuple[str, str, int]]:
    """``(column, kind, index)`` for every active scalar; kind is theta, tau or phi."""
    lay = Layout(spec)
    o = lay.offsets
    S = spec.S
    cols = [("mu", "theta", o["mu"][0])]
    cols += [(f"gamma[{j + 1}]", "theta", o["gamma"][0] + j) for j in range(spec.covariate_count)]
    cols += [(f"alpha[{t + 1}]", "theta", o["alpha"][0] + t) for t in range(spec.T)]
    cols += [(f"beta[{d}]", "theta", o["beta"][0] + d) for d in range(spec.K)]
    if spec.has_alpha_ts:
        cols += [(f"alpha_ts[{t + 1},{s + 1}]", "theta", o["alpha_ts"][0] + t * S + s)
                 for t in range(spec.T) for s in range(S)]
    if spec.has_beta_ds:
        cols += [(f"beta_ds[{d},{s + 1}]", "theta", o["beta_ds"][0] + d * S + s)
                 for d in range(spec.K) for s in range(S)]
    if spec.has_delta_ind:
        cols += [(f"delta_ind[{s + 1}]", "theta", o["delta_ind"][0] + s) for s in range(S)]
    if spec.has_iar:
        cols += [(f"delta_iar[{s + 1}]", "theta", o["delta_iar"][0] + s) for s in range(S)]
    cols += [(n, "tau", PRECISIONS.index(n)) for n in spec.active_precisions()]
    cols.append(("phi", "phi", 0))
    return cols


def samples_frame(samples: PosteriorSamples) -> pd.DataFrame:
    data = {"chain": samples.chain, "iteration": samples.iteration}
    for name, kind, i in sample_columns(samples.spec):
        if kind == "theta":
            data[name] = samples.theta[:, i]
        elif kind == "tau":
            data[name] = samples.tau[:, i]
        else:
            data[name] = samples.phi
    return pd.DataFrame(data)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        return None if not np.isfinite(x) else float(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_samples(samples: PosteriorSamples, prefix, diagnostics=None, extra=None) -> tuple[Path, Path]:
    """Write ``<prefix>.samples.csv`` and the ``<prefix>.samples.json`` sidecar."""
    prefix = Path(prefix)
    csv_path = prefix.with_name(prefix.name + ".samples.csv")
    json_path = prefix.with_name(prefix.name + ".samples.json")
    samples_frame(samples).to_csv(csv_path, index=False, float_format="%.17g")
    side = {
        "format": "runoff-samples",
        "format_version": FORMAT_VERSION,
        "version": _version(),
        "spec": samples.spec.to_dict(),
        "config": samples.config.to_dict(),
        "seed": samples.config.seed,
        "acceptance": samples.acceptance,
        "diagnostics": diagnostics.to_dict() if diagnostics is not None else None,
        "burn_in_batches": samples.burn_in_batches,
        "scale_history": samples.scale_history,
    }
    if extra:
        side.update(extra)
    json_path.write_text(json.dumps(_jsonable(side), indent=1) + "\n")
    return csv_path, json_path


def samples_paths(prefix) -> tuple[Path, Path]:
    p = Path(prefix)
    name = p.name
    for suffix in (".samples.csv", ".samples.json"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    base = p.with_name(name)
    return base.with_name(name + ".samples.csv"), base.with_name(name + ".samples.json")


def read_samples(prefix) -> PosteriorSamples:
    csv_path, json_path = samples_paths(prefix)
    side = json.loads(json_path.read_text())
    spec = ModelSpec.from_dict(side["spec"])
    cfg = SamplerConfig(**side["config"])
    df = pd.read_csv(csv_path, float_precision="round_trip")
    n = len(df)
    lay = Layout(spec)
    theta = np.zeros((n, lay.size))
    tau = np.ones((n, 6))
    phi = np.zeros(n)
    for name, kind, i in sample_columns(spec):
        if name not in df:
            raise FormatError(f"samples file lacks column {name}")
        col = df[name].to_numpy(dtype=float)
        if kind == "theta":
            theta[:, i] = col
        elif kind == "tau":
            tau[:, i] = col
        else:
            phi[:] = col
    hist = side.get("scale_history")
    return PosteriorSamples(
        spec=spec,
        config=cfg,
        chain=df["chain"].to_numpy(dtype=np.int64),
        iteration=df["iteration"].to_numpy(dtype=np.int64),
        theta=theta,
        tau=tau,
        phi=phi,
        acceptance=side.get("acceptance", {}),
        scale_history=None if hist is None else np.array(hist, dtype=float),
        burn_in_batches=side.get("burn_in_batches", 0),
    )


def write_nowcast(result, path) -> pd.DataFrame:
    df = result.summary()
    df.to_csv(path, index=False, float_format="%.17g")
    return df


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=1) + "\n")


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()
