import datetime as dt
import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from runoff import io as fio
from runoff.cli import main
from runoff.inference import SamplerConfig, run_mcmc
from runoff.model import ModelSpec
from runoff.nowcast import quantile_column
from runoff.triangle import LineListRecord, RegionMap, ReportingTriangle, censoring_mask

SUN = dt.date(2012, 1, 1)
FAST = ["--chains", "2", "--iters", "1000", "--burn", "500", "--thin", "2", "--seed", "4"]


def make_line_list(path, weeks=16, per_week=30, seed=0, regions=None):
    rng = np.random.default_rng(seed)
    recs = []
    for t in range(weeks):
        for _ in range(per_week):
            ev = SUN + dt.timedelta(days=7 * t + int(rng.integers(7)))
            rep = ev + dt.timedelta(days=7 * int(rng.geometric(0.45) - 1) + int(rng.integers(3)))
            reg = None if regions is None else regions[int(rng.integers(len(regions)))]
            recs.append(LineListRecord(ev, rep, reg))
    fio.write_line_list(recs, path)
    return recs


def run(args, code=0):
    res = CliRunner().invoke(main, [str(a) for a in args])
    assert res.exit_code == code, res.output
    return res


@pytest.fixture
def ingested(tmp_path):
    make_line_list(tmp_path / "ll.csv")
    run(["ingest", "--input", tmp_path / "ll.csv", "--max-delay", 4, "--out", tmp_path / "tri.json"])
    return tmp_path


def test_line_list_roundtrip(tmp_path):
    recs = make_line_list(tmp_path / "a.csv", weeks=3, regions=["x", "y"])
    assert fio.read_line_list(tmp_path / "a.csv") == recs


def test_line_list_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("event_date,report_date\n2012-01-01,2012-01-02\n2012-01-05,not-a-date\n")
    with pytest.raises(ValueError, match="line 3"):
        fio.read_line_list(p)
    res = run(["ingest", "--input", p, "--out", tmp_path / "t.json"], code=2)
    assert "line 3" in res.output
    p.write_text("event_date,report_date\n2012-01-01,2012-01-02\n2012-01-09,2012-01-03\n")
    res = run(["ingest", "--input", p, "--max-delay", 1, "--out", tmp_path / "t.json"], code=2)
    assert "line 3" in res.output and "precedes" in res.output


def test_triangle_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    tri = ReportingTriangle(rng.integers(0, 9, (6, 3, 2)), censoring_mask(6, 2, 2), start=SUN,
                            as_of=SUN + dt.timedelta(days=41), overflow=np.ones((6, 2), int), regions=("a", "b"))
    fio.write_triangle(tri, tmp_path / "t.json")
    back = fio.read_triangle(tmp_path / "t.json")
    for name in ("counts", "mask", "overflow"):
        assert np.array_equal(getattr(back, name), getattr(tri, name))
    assert (back.start, back.as_of, back.regions, back.unit) == (tri.start, tri.as_of, tri.regions, tri.unit)
    d = json.loads((tmp_path / "t.json").read_text())
    assert d["counts"][5][2] == [None, None] and "version" in d


def test_adjacency_roundtrip(tmp_path):
    rm = RegionMap.chain(4)
    fio.write_adjacency(rm, tmp_path / "w.csv")
    back = fio.read_adjacency(tmp_path / "w.csv")
    assert back.regions == rm.regions and np.array_equal(back.adjacency, rm.adjacency)


def test_samples_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    tri = ReportingTriangle(rng.integers(0, 9, (6, 3, 3)), censoring_mask(6, 2, 3))
    spec = ModelSpec.for_triangle("M7", tri)
    s = run_mcmc(tri, spec, None, RegionMap.chain(3), SamplerConfig(chains=2, iterations=60, burn_in=30, thin=3))
    fio.write_samples(s, tmp_path / "fit")
    back = fio.read_samples(tmp_path / "fit")
    for name in ("theta", "tau", "phi", "chain", "iteration"):
        assert np.array_equal(getattr(back, name), getattr(s, name)), name
    cols = pd.read_csv(tmp_path / "fit.samples.csv", nrows=0).columns.tolist()
    assert cols[:3] == ["chain", "iteration", "mu"]
    assert "beta_ds[2,3]" in cols and "alpha_ts[6,1]" in cols and "delta_iar[3]" in cols


def test_ingest_is_deterministic(ingested):
    tri = fio.read_triangle(ingested / "tri.json")
    assert tri.D == 4 and tri.T == 16
    first = (ingested / "tri.json").read_bytes()
    run(["ingest", "--input", ingested / "ll.csv", "--max-delay", 4, "--out", ingested / "tri.json"])
    assert (ingested / "tri.json").read_bytes() == first
    man = json.loads((ingested / "tri.json.manifest.json").read_text())
    assert man["command"] == "ingest" and man["input_sha256"]["input"] == fio.file_digest(ingested / "ll.csv")


def test_ingest_dengue_bound(tmp_path):
    make_line_list(tmp_path / "ll.csv", weeks=20, per_week=40)
    run(["ingest", "--input", tmp_path / "ll.csv", "--max-delay", 10, "--out", tmp_path / "t.json"])
    tri = fio.read_triangle(tmp_path / "t.json")
    assert tri.D == 10 and tri.counts.shape[1] == 11


def test_fit_nowcast_pipeline(ingested):
    p = ingested
    run(["fit", "--triangle", p / "tri.json", "--out-prefix", p / "base", "--no-strict", *FAST])
    first = (p / "base.samples.csv").read_bytes()
    res = run(["fit", "--triangle", p / "tri.json", "--out-prefix", p / "base", "--no-strict", *FAST])
    assert (p / "base.samples.csv").read_bytes() == first
    assert "Rhat mu" in res.output
    side = json.loads((p / "base.samples.json").read_text())
    assert side["diagnostics"]["rhat"]["mu"] < 1.1 and side["seed"] == 4

    run(["nowcast", "--samples", p / "base", "--triangle", p / "tri.json", "--threshold", 64.6,
         "--out", p / "nc.csv", "--draws-out", p / "draws.csv"])
    nc = pd.read_csv(p / "nc.csv")
    assert {"t", "s", "observed_partial", "mean", "median", "q2.5", "q97.5", "exceedance"} <= set(nc.columns)
    assert nc["t"].tolist() == [13, 14, 15, 16]
    # summaries recomputed from the persisted draws
    draws = pd.read_csv(p / "draws.csv")
    for _, row in nc.iterrows():
        x = draws[f"N[{row.t},{row.s}]"].to_numpy()
        assert row["mean"] == pytest.approx(x.mean(), rel=1e-12)
        assert row["q97.5"] == pytest.approx(np.quantile(x, 0.975), rel=1e-12)
        assert row["exceedance"] == pytest.approx((x > 64.6).mean())
        assert (x >= row.observed_partial).all()


def test_nowcast_fully_observed(tmp_path):
    tri = ReportingTriangle(np.full((5, 3), 4), np.ones((5, 3), bool))
    fio.write_triangle(tri, tmp_path / "t.json")
    run(["fit", "--triangle", tmp_path / "t.json", "--out-prefix", tmp_path / "f", "--no-strict", *FAST])
    res = run(["nowcast", "--samples", tmp_path / "f", "--triangle", tmp_path / "t.json", "--out", tmp_path / "n.csv"])
    assert "fully observed" in res.output
    nc = pd.read_csv(tmp_path / "n.csv")
    assert nc["t"].tolist() == [4, 5]
    assert (nc["mean"] == 12).all() and (nc[quantile_column(0.025)] == 12).all()


def test_nowcast_spec_mismatch(ingested, tmp_path):
    p = ingested
    run(["fit", "--triangle", p / "tri.json", "--out-prefix", p / "base", "--no-strict", *FAST])
    other = ReportingTriangle(np.full((9, 3), 4), censoring_mask(9, 2)[:, :, 0])
    fio.write_triangle(other, p / "other.json")
    res = run(["nowcast", "--samples", p / "base", "--triangle", p / "other.json", "--out", p / "x.csv"], code=2)
    assert "do not match" in res.output


def test_spatial_model_without_adjacency(ingested):
    res = run(["fit", "--triangle", ingested / "tri.json", "--model", "M4", "--out-prefix", ingested / "m4"], code=2)
    assert "adjacency" in res.output


def test_convergence_failure_exit_code(ingested):
    # a handful of iterations cannot converge
    args = ["fit", "--triangle", ingested / "tri.json", "--out-prefix", ingested / "short",
            "--chains", 3, "--iters", 12, "--burn", 2, "--thin", 1]
    res = run(args, code=3)
    assert "Rhat" in res.output
    run(args + ["--no-strict"], code=0)


def test_compare(tmp_path):
    regions = ["a", "b", "c"]
    make_line_list(tmp_path / "ll.csv", weeks=14, regions=regions)
    fio.write_adjacency(RegionMap(tuple(regions), RegionMap.chain(3).adjacency), tmp_path / "w.csv")
    run(["ingest", "--input", tmp_path / "ll.csv", "--max-delay", 3, "--adjacency", tmp_path / "w.csv",
         "--out", tmp_path / "tri.json"])
    res = run(["compare", "--triangle", tmp_path / "tri.json", "--models", "M0,M4,M0",
               "--adjacency", tmp_path / "w.csv", "--out", tmp_path / "cmp.csv", *FAST])
    assert "duplicate" in res.output
    df = pd.read_csv(tmp_path / "cmp.csv")
    assert list(df.columns) == ["model", "Dbar", "pD", "DIC", "WAIC"]
    assert df["model"].tolist() == ["M0", "M4"]
    np.testing.assert_allclose(df["DIC"], df["Dbar"] + df["pD"], rtol=1e-12)


def test_compare_reports_failures(ingested):
    res = run(["compare", "--triangle", ingested / "tri.json", "--models", "BASE,M1",
               "--out", ingested / "cmp.csv", *FAST])
    assert "M1 failed" in res.output
    assert pd.read_csv(ingested / "cmp.csv")["model"].tolist() == ["BASE"]


def test_simulate(tmp_path):
    sc = {"spec": {"variant": "BASE", "T": 14, "D": 3}, "seed": 2}
    (tmp_path / "sc.json").write_text(json.dumps(sc))
    run(["simulate", "--scenario", tmp_path / "sc.json", "--out-dir", tmp_path / "a"])
    assert sorted(f.name for f in (tmp_path / "a").iterdir()) == ["dataset_000.json", "run.manifest.json", "truth_000.json"]
    run(["simulate", "--scenario", tmp_path / "sc.json", "--out-dir", tmp_path / "b"])
    for name in ("dataset_000.json", "truth_000.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    truth = json.loads((tmp_path / "a" / "truth_000.json").read_text())
    full = fio.read_triangle(tmp_path / "a" / "dataset_000.json")
    assert np.array_equal(np.array(truth["totals"]), full.counts.sum(axis=1))


def test_simulate_invalid_scenario(tmp_path):
    (tmp_path / "sc.json").write_text(json.dumps({"spec": {"variant": "M9", "T": 5, "D": 2}}))
    res = run(["simulate", "--scenario", tmp_path / "sc.json", "--out-dir", tmp_path / "o"], code=2)
    assert "invalid scenario" in res.output


def test_simulate_coverage(tmp_path):
    sc = {"spec": {"variant": "BASE", "T": 14, "D": 3}, "seed": 2}
    (tmp_path / "sc.json").write_text(json.dumps(sc))
    run(["simulate", "--scenario", tmp_path / "sc.json", "--out-dir", tmp_path / "o", "--replicates", 2,
         "--coverage", *FAST])
    table = pd.read_csv(tmp_path / "o" / "coverage.csv")
    assert len(table) == 2 * 3 and table["covered"].dtype == bool


def test_replay_reproduces_outputs(ingested, monkeypatch):
    p = ingested
    monkeypatch.chdir(p)
    run(["fit", "--triangle", "tri.json", "--out-prefix", "r", "--no-strict", *FAST])
    first = (p / "r.samples.csv").read_bytes()
    (p / "r.samples.csv").unlink()
    run(["replay", "r.manifest.json"])
    assert (p / "r.samples.csv").read_bytes() == first


def test_help_documents_formats():
    res = run(["--help"])
    for word in ("line list", "triangle JSON", "adjacency", "samples", "nowcast CSV", "criteria"):
        assert word in res.output
