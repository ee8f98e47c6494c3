import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from efieschur import cli
from efieschur.config import ConfigError, ExperimentConfig, load_config, parse_geometry, parse_range


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_defaults_roundtrip():
    cfg = ExperimentConfig()
    assert ExperimentConfig.from_text(cfg.to_text()) == cfg
    assert cfg.wavelength == pytest.approx(0.9993, rel=1e-4)


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0.05, 10), st.integers(1, 500), st.one_of(st.none(), st.integers(0, 8)),
    st.floats(0, 0.5), st.sampled_from(["none", "cm", "rcm", "king", "sloan"]),
)
def test_text_roundtrip(freq, leaf, level, fill, order):
    cfg = ExperimentConfig(freq_ghz=freq, leaf_size=leaf, max_level=level, fill_tol=fill, ordering=order)
    assert ExperimentConfig.from_text(cfg.to_text()) == cfg


def test_flags_override_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\ngeometry = cube:1\neta = 2.0  # trailing\nleaf-size = 50\n")
    cfg = load_config(path, {"eta": 0.5, "leaf_size": None})
    assert cfg.geometry == "cube:1" and cfg.eta == 0.5 and cfg.leaf_size == 50


@pytest.mark.parametrize("text", [
    "eta = -1", "leaf_size = 0", "ordering = amd", "pc = ilu", "bogus = 1", "eta = fast",
    "geometry = torus:1", "sweep_phi_deg = 0:10", "ladder = 2,-3", "fill_tol = -0.1", "no equals sign",
])
def test_invalid_config(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text + "\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_geometry_and_range_parsing():
    assert parse_geometry("plate:2x3") == ("plate", (2.0, 3.0))
    assert parse_geometry("plate:2") == ("plate", (2.0, 2.0))
    assert parse_geometry("sphere:0.5") == ("sphere", (0.5, 3))
    assert parse_geometry("sphere:0.5:2") == ("sphere", (0.5, 2))
    assert parse_geometry("file:/tmp/m.txt") == ("file", ("/tmp/m.txt",))
    np.testing.assert_allclose(parse_range("0:180:7"), np.arange(0, 181, 30))
    np.testing.assert_allclose(parse_range("45"), [45.0])
    for bad in ("cube:-1", "sphere:x", "plate:", "file:"):
        with pytest.raises(ConfigError):
            parse_geometry(bad)
    with pytest.raises(ConfigError):
        parse_range("0:1:0")


def test_fit_slope():
    n = [1e3, 2e3, 4e3, 8e3]
    s, low = cli.fit_slope(n, [3 * v**1.25 for v in n])
    assert s == pytest.approx(1.25) and not low
    s, low = cli.fit_slope(n[:2], [1.0, 4.0])
    assert s == pytest.approx(2.0) and low
    s, low = cli.fit_slope([5.0], [1.0])
    assert np.isnan(s) and low


def test_total_time_formula():
    assert cli.total_time(1.0, 2.0, 10, 3, 0.1, 0.2, 0.3) == pytest.approx(1 + 2 + 10 * 3 * 0.6)


def test_generate_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["generate", "--geometry", "sphere:0.3:1", "--out-dir", str(d)]) == 0
    assert (a / "mesh.txt").read_bytes() == (b / "mesh.txt").read_bytes()
    cfg = ExperimentConfig.from_text((a / "config.txt").read_text())
    assert cfg.geometry == "sphere:0.3:1"


def test_exit_codes(tmp_path, capsys):
    out = str(tmp_path)
    assert cli.main(["solve", "--geometry", "cube:-1", "--out-dir", out]) == 1
    assert cli.main(["solve", "--geometry", "file:" + str(tmp_path / "missing.txt"), "--out-dir", out]) == 1
    assert "error" in capsys.readouterr().err
    # small far blocks hit the ACA rank cap
    assert cli.main(["solve", "--geometry", "plate:2", "--leaf-size", "40", "--out-dir", out]) == 2
    # GMRES stopped after two iterations
    code = cli.main(["solve", "--geometry", "plate:1.5", "--pc", "none", "--max-iter", "2",
                     "--sweep-phi-deg", "0", "--out-dir", out])
    assert code == 2
    with pytest.raises(SystemExit):
        cli.main(["solve", "--pc", "ilu"])


def test_solve_writes_outputs(tmp_path):
    out = tmp_path / "run"
    code = cli.main(["solve", "--geometry", "plate:1.5", "--sweep-phi-deg", "0:90:3",
                     "--dense-check", "1", "--out-dir", str(out)])
    assert code == 0
    rcs = _read(out / "rcs.csv")
    assert [float(r["phi_deg"]) for r in rcs] == [0.0, 45.0, 90.0]
    rep = _read(out / "solve_report.csv")
    assert all(r["converged"] == "1" for r in rep)
    assert float(rep[0]["dense_error"]) < 1e-3
    assert float(rep[0]["original_residual"]) <= 1e-6
    res = _read(out / "residuals.csv")
    assert {r["rhs"] for r in res} == {"0", "1", "2"}


def test_two_point_ladder_is_low_confidence(tmp_path):
    out = tmp_path / "ladder"
    code = cli.main(["scaling", "--ladder", "1.5,2", "--out-dir", str(out)])
    assert code == 0
    bench = _read(out / "bench.csv")
    assert [c for c in bench[0]] == cli.BENCH_COLUMNS
    assert int(bench[1]["N"]) > int(bench[0]["N"])
    for r in bench:
        t = cli.total_time(*(float(r[k]) for k in ("t_sm", "t_sp", "p", "n_rhs", "t_mm", "t_mpp", "t_mps")))
        assert float(r["t_total"]) == pytest.approx(t)
    slopes = _read(out / "slopes.csv")
    assert {r["quantity"] for r in slopes} == {"t_sp", "t_mps", "nnz_scaling", "memory_bytes"}
    assert all(r["low_confidence"] == "1" and r["points"] == "2" for r in slopes)


def test_ladder_without_solve(tmp_path):
    # a permissive eta gives the touching-neighbour near field; its far blocks are not needed here
    out = tmp_path / "ladder"
    assert cli.main(["scaling", "--ladder", "1,1.5", "--eta", "7", "--no-solve", "--out-dir", str(out)]) == 0
    bench = _read(out / "bench.csv")
    assert all(r["p"] == "nan" and float(r["nnz_scaling"]) > 0 for r in bench)


def test_compare_and_pattern(tmp_path):
    out = tmp_path / "cmp"
    assert cli.main(["compare", "--geometry", "plate:1.5", "--sweep-phi-deg", "0:60:2",
                     "--out-dir", str(out)]) == 0
    rows = {r["pc"]: r for r in _read(out / "compare.csv")}
    assert set(rows) == {"schur", "nullfield", "jacobi", "none"}
    assert float(rows["nullfield"]["speedup_total"]) == pytest.approx(1.0)
    assert max(float(r["max_solution_diff"]) for r in rows.values()) < 1e-3
    assert cli.main(["pattern", "--geometry", "plate:1.5", "--all-orderings", "--out-dir", str(out)]) == 0
    metrics = _read(out / "orderings.csv")
    assert [r["ordering"] for r in metrics] == ["none", "cm", "rcm", "king", "sloan"]
    assert (out / "pattern_sloan.txt").exists()


def test_eig_summary(tmp_path):
    out = tmp_path / "eig"
    assert cli.main(["eig", "--geometry", "plate:1", "--out-dir", str(out)]) == 0
    row = _read(out / "eig_summary.csv")[0]
    assert float(row["ratio"]) < 1.0
