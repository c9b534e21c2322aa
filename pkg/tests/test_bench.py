import csv
import json

import numpy as np
import pytest

from pic_mma import bench
from pic_mma.cli import build_parser, main
from pic_mma.geometry import cell_indices


def small(**kw):
    base = dict(dims=(4, 4, 4), order=1, kind="scalar", ppc=4)
    base.update(kw)
    return bench.RunConfig(**base)


def test_synth_counts_and_determinism():
    cfg = small(ppc=5, kind="tensorial")
    a, b = bench.synth(cfg), bench.synth(cfg)
    assert len(a) == 5 * 64
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.omega, b.omega)
    cells = cell_indices(a, cfg.grid)
    np.testing.assert_array_equal(np.bincount(cells, minlength=64), 5)
    assert np.all(np.diff(cells) >= 0)
    assert np.all(np.abs(a.omega) <= 1)
    assert not np.array_equal(bench.synth(cfg.with_(seed=1)).positions, a.positions)


def test_synth_reference_sweep_size():
    cfg = bench.RunConfig(dims=(16, 16, 16), ppc=128)
    assert cfg.grid.n_cells * cfg.ppc == 524288


def test_synth_empty():
    assert len(bench.synth(small(ppc=0))) == 0


def test_synth_clustered_biases_lower_subcell():
    cfg = small(ppc=200, order=2, distribution="clustered")
    frac = bench.synth(cfg).positions % 1.0
    lower = np.all(frac < 0.5, axis=1).mean()
    # 0.75 clustered + 0.25 * (1/8) uniform in the lower corner
    assert lower == pytest.approx(0.75 + 0.25 / 8, abs=0.02)


@pytest.mark.parametrize("kw", [dict(ppc=-1), dict(repeats=0), dict(order=3), dict(profile="x"),
                                dict(distribution="gaussian"), dict(kind="vector"),
                                dict(threads=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        small(**kw)


def test_default_profile_follows_order():
    assert small(order=1).profile == "fp64-8x8x4"
    assert small(order=2).profile == "tf32-16x16x8"
    assert small(order=2, profile="fp64-8x8x4").profile == "fp64-8x8x4"


def test_run_fp64():
    rep = bench.run(small(repeats=3))
    assert len(rep.naive_ms) == len(rep.tiled_ms) == 3
    assert rep.max_rel_err <= 1e-13
    assert rep.checks_passed and rep.speedup is not None
    d = rep.to_dict()
    assert d["timings_ms"]["tiled"]["min"] == min(rep.tiled_ms)
    assert d["naive_arithmetic"] == "fp64"


def test_run_tf32():
    rep = bench.run(small(order=2, kind="tensorial", ppc=128, profile="tf32-16x16x8"))
    assert 1e-5 <= rep.frobenius_rel_err <= 5e-4
    assert rep.naive_arithmetic == "fp32"
    assert rep.checks_passed


def test_run_infeasible_grid():
    with pytest.raises(ValueError):
        bench.run(small(dims=(2, 2), order=2))


def test_run_withholds_speedup_on_failed_check(monkeypatch):
    monkeypatch.setattr(bench, "check_conservation", lambda *a, **k: False)
    rep = bench.run(small())
    assert not rep.checks_passed and rep.speedup is None


def test_report_determinism():
    strip = lambda d: {k: v for k, v in d.items() if k not in ("timings_ms", "speedup", "sort_ms")}  # noqa: E731
    a = bench.run(small(order=2, kind="tensorial")).to_dict()
    b = bench.run(small(order=2, kind="tensorial")).to_dict()
    assert json.dumps(strip(a)) == json.dumps(strip(b))


def test_sweep_rows_and_failures():
    reps = bench.sweep(small(order=2, profile="fp64-8x8x4"), "grid", [(3, 3), (2, 2), (4, 4)])
    assert len(reps) == 3
    assert [r.checks_passed for r in reps] == [True, False, True]
    assert "too small" in reps[1].error
    assert len(bench.sweep(small(), "ppc", [2])) == 1
    with pytest.raises(ValueError):
        bench.sweep(small(), "ppc", [])
    with pytest.raises(ValueError):
        bench.sweep(small(), "seed", [1])


def test_csv_json_agree(tmp_path):
    reps = bench.sweep(small(dims=(3, 3)), "ppc", [0, 3, 17])
    jpath, cpath = bench.write_outputs(reps, "ppc", tmp_path)
    with cpath.open() as fh:
        assert next(csv.reader(fh)) == bench.CSV_HEADER
    rows = bench.read_csv(cpath)
    runs = json.loads(jpath.read_text())["runs"]
    assert len(rows) == len(runs) == 3
    for row, run in zip(rows, runs):
        assert row["axis"] == str(run["config"]["ppc"])
        assert row["naive_ms"] == run["timings_ms"]["naive"]["median"]
        assert row["tiled_ms"] == run["timings_ms"]["tiled"]["median"]
        assert row["speedup"] == run["speedup"]
        assert row["max_rel_err"] == run["errors"]["max_rel"]
        assert row["checks_passed"] == run["checks_passed"]


def test_cli_single_run(tmp_path, capsys):
    rc = main(["--dims", "4x4", "--order", "2", "--kind", "tensorial", "--ppc", "6",
               "--repeats", "2", "--out", str(tmp_path)])
    assert rc == 0
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["runs"][0]["config"]["profile"] == "tf32-16x16x8"
    assert len(doc["runs"][0]["timings_ms"]["naive"]["samples"]) == 2
    assert "wrote" in capsys.readouterr().out


def test_cli_sweeps(tmp_path):
    assert main(["--dims", "3,3", "--sweep-ppc", "1,5", "--out", str(tmp_path / "a")]) == 0
    assert len(bench.read_csv(tmp_path / "a" / "sweep.csv")) == 2
    # a failing point makes the exit code nonzero but the sweep completes
    rc = main(["--order", "2", "--sweep-grid", "2x2,3x3", "--out", str(tmp_path / "b")])
    assert rc == 1
    rows = bench.read_csv(tmp_path / "b" / "sweep.csv")
    assert [r["axis"] for r in rows] == ["2x2", "3x3"]
    assert [r["checks_passed"] for r in rows] == [False, True]


def test_cli_rejects_bad_arguments(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--dims", "4x4x4x4"])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--sweep-ppc", "1", "--sweep-grid", "4x4"])
    assert main(["--ppc", "-2"]) == 2
