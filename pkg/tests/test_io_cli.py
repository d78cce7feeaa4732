import csv
import json
import locale

import numpy as np
import pytest

from hilbertsphere import ValidationError, ingest_densities, read_density_table
from hilbertsphere.cli import main, parse_sim_config
from hilbertsphere.errors import FormatError


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def wide(tmp_path, rows, name="d.csv", labels=("a", "b", "c"), weights=None):
    weights = weights or [1 / len(labels)] * len(labels)
    lines = [",".join(labels), ",".join(map(str, weights))] + [",".join(map(str, r)) for r in rows]
    return write(tmp_path / name, "\n".join(lines) + "\n")


def read_values(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["abscissa", "value"]
    return [r[0] for r in rows[1:]], np.array([float(r[1]) for r in rows[1:]])


# --- ingest -------------------------------------------------------------------------


def test_ingest_equal_counts_give_constant_root(tmp_path):
    p = wide(tmp_path, [[2, 2]], labels=("x", "y"), weights=[0.5, 0.5])
    sample, table = ingest_densities(p)
    assert np.allclose(table.densities[0], [1.0, 1.0])
    assert np.allclose(sample[0].coef, [1.0, 1.0], atol=1e-12)


def test_ingest_unequal_counts(tmp_path):
    p = wide(tmp_path, [[3, 1]], labels=("x", "y"), weights=[0.5, 0.5])
    sample, _ = ingest_densities(p)
    assert np.allclose(sample[0].coef, [np.sqrt(1.5), np.sqrt(0.5)], atol=1e-4)
    assert np.allclose(sample[0].coef, [1.2247, 0.7071], atol=1e-4)


def test_square_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    p = wide(tmp_path, rng.uniform(0.1, 5.0, size=(6, 3)).tolist(), weights=[0.2, 0.5, 0.3])
    sample, table = ingest_densities(p)
    assert np.max(np.abs(sample.coef**2 - table.densities)) < 1e-12
    assert np.allclose(table.densities @ table.grid.weights, 1.0, atol=1e-14)


def test_comments_and_blank_lines_ignored(tmp_path):
    p = write(tmp_path / "c.csv", "# zones\na,b\n\n0.5,0.5\n# obs\n1,3\n")
    table = read_density_table(p)
    assert len(table) == 1 and table.grid.labels == ("a", "b")


def test_numeric_labels_build_interval_grid(tmp_path):
    p = wide(tmp_path, [[1, 2, 3]], labels=("0.0", "0.5", "1.0"), weights=[0.25, 0.5, 0.25])
    table = read_density_table(p)
    assert np.allclose(table.grid.points, [0.0, 0.5, 1.0])


def test_long_format_with_weights_and_missing_cells(tmp_path):
    p = write(
        tmp_path / "l.csv",
        "obs_id,zone,value,weight\n"
        "u,a,1,0.25\nu,b,3,0.75\n"
        "v,a,2,0.25\n",
    )
    table = read_density_table(p, "csv_long")
    assert table.obs_ids == ("u", "v")
    assert np.allclose(table.grid.weights, [0.25, 0.75])
    assert np.allclose(table.raw, [[1, 3], [2, 0]])
    assert np.allclose(table.densities @ table.grid.weights, 1.0)


def test_long_format_errors(tmp_path):
    dup = write(tmp_path / "dup.csv", "obs_id,zone,value\nu,a,1\nu,a,2\n")
    with pytest.raises(FormatError, match="line 3"):
        read_density_table(dup, "csv_long")
    wt = write(tmp_path / "wt.csv", "obs_id,zone,value,weight\nu,a,1,0.5\nv,a,1,0.4\n")
    with pytest.raises(FormatError, match="inconsistent weight"):
        read_density_table(wt, "csv_long")
    hdr = write(tmp_path / "hdr.csv", "id,zone,value\nu,a,1\n")
    with pytest.raises(FormatError, match="obs_id"):
        read_density_table(hdr, "csv_long")


def test_negative_entry_names_row_and_column(tmp_path):
    p = wide(tmp_path, [[1, 1, 1], [1, -2, 1]])
    with pytest.raises(ValidationError) as exc:
        read_density_table(p)
    assert exc.value.row == 2 and exc.value.column == "b"
    assert "row 2" in str(exc.value) and "column b" in str(exc.value)


def test_zero_row_rejected(tmp_path):
    with pytest.raises(ValidationError, match="no positive entry"):
        read_density_table(wide(tmp_path, [[1, 1, 1], [0, 0, 0]]))


def test_strict_positive(tmp_path):
    p = wide(tmp_path, [[1, 0, 1]])
    read_density_table(p)
    with pytest.raises(ValidationError, match="column b"):
        read_density_table(p, strict_positive=True)


def test_ragged_row_reports_line(tmp_path):
    p = write(tmp_path / "r.csv", "a,b,c\n1,1,1\n1,2,3\n4,5\n")
    with pytest.raises(FormatError, match="line 4"):
        read_density_table(p)


def test_non_numeric_reports_line(tmp_path):
    p = write(tmp_path / "n.csv", "a,b\n1,1\n1,x\n")
    with pytest.raises(FormatError, match="line 3"):
        read_density_table(p)


def test_unknown_format(tmp_path):
    with pytest.raises(ValidationError):
        read_density_table(wide(tmp_path, [[1, 1, 1]]), "json")


# --- CLI: mean ------------------------------------------------------------------------


def test_mean_of_single_row(tmp_path):
    p = wide(tmp_path, [[1, 2, 5]], weights=[0.2, 0.3, 0.5])
    assert main(["mean", str(p), "--out", str(tmp_path / "o")]) == 0
    labels, v = read_values(tmp_path / "o" / "mean.csv")
    dens = np.array([1, 2, 5]) / (np.array([1, 2, 5]) @ [0.2, 0.3, 0.5])
    assert labels == ["a", "b", "c"]
    assert np.max(np.abs(v - np.sqrt(dens))) < 1e-10
    diag = json.loads((tmp_path / "o" / "diagnostics.json").read_text())
    assert diag[0]["n"] == 1 and diag[0]["iterations"] == 0
    assert (tmp_path / "o" / "manifest.json").exists()


def test_mean_of_two_rows_is_midpoint(tmp_path):
    p = wide(tmp_path, [[1, 0.001], [0.001, 1]], labels=("x", "y"), weights=[0.5, 0.5])
    assert main(["mean", str(p), "--out", str(tmp_path / "o")]) == 0
    _, v = read_values(tmp_path / "o" / "mean.csv")
    assert abs(0.5 * (v**2).sum() - 1.0) < 1e-10
    assert v[0] == pytest.approx(v[1], abs=1e-10)


def test_mean_two_inputs_writes_difference(tmp_path):
    a = wide(tmp_path, [[1, 1, 2], [1, 2, 1]], name="a.csv")
    b = wide(tmp_path, [[2, 1, 1], [2, 1, 2]], name="b.csv")
    assert main(["mean", str(a), str(b), "--out", str(tmp_path / "o")]) == 0
    _, m1 = read_values(tmp_path / "o" / "mean_1.csv")
    _, m2 = read_values(tmp_path / "o" / "mean_2.csv")
    _, d = read_values(tmp_path / "o" / "difference.csv")
    assert np.allclose(d, m1**2 - m2**2, atol=1e-15)
    assert abs(d.mean()) < 1e-12  # both integrate to one on equal weights
    assert len(json.loads((tmp_path / "o" / "diagnostics.json").read_text())) == 2


# --- CLI: tests -----------------------------------------------------------------------


def _groups(tmp_path, seed=0):
    rng = np.random.default_rng(seed)
    a = wide(tmp_path, rng.uniform(0.5, 2.0, size=(15, 4)).tolist(), "g1.csv", labels=("a", "b", "c", "d"))
    b = wide(tmp_path, rng.uniform(0.5, 2.0, size=(12, 4)).tolist(), "g2.csv", labels=("a", "b", "c", "d"))
    return a, b


def test_test_two_identical_files(tmp_path):
    a, _ = _groups(tmp_path)
    for method in ("norm_asymptotic", "proj-bootstrap", "extrinsic", "flat"):
        out = tmp_path / method
        assert main(["test-two", str(a), str(a), "--method", method, "--boot", "99", "--out", str(out)]) == 0
        rep = json.loads((out / "report.json").read_text())
        assert rep["p_value"] == 1.0


def test_test_two_same_seed_is_byte_identical(tmp_path):
    a, b = _groups(tmp_path)
    args = ["test-two", str(a), str(b), "--method", "proj_bootstrap", "--fve", "0.9", "--boot", "99", "--seed", "11"]
    assert main(args + ["--out", str(tmp_path / "r1")]) == 0
    assert main(args + ["--out", str(tmp_path / "r2")]) == 0
    assert (tmp_path / "r1" / "report.json").read_bytes() == (tmp_path / "r2" / "report.json").read_bytes()
    m = json.loads((tmp_path / "r1" / "manifest.json").read_text())
    assert m["seed"] == 11 and m["command"] == "test-two"
    assert set(m["input_digests"]) == {str(a), str(b)}


def test_test_one_with_and_without_mu0(tmp_path):
    a, _ = _groups(tmp_path)
    assert main(["test-one", str(a), "--method", "norm_asymptotic", "--draws", "5000", "--out", str(tmp_path / "u")]) == 0
    mu0 = wide(tmp_path, [[1, 1, 1, 1]], "mu0.csv", labels=("a", "b", "c", "d"))
    assert main(["test-one", str(a), "--mu0", str(mu0), "--method", "norm_asymptotic", "--draws", "5000",
                 "--out", str(tmp_path / "m")]) == 0
    assert (tmp_path / "u" / "report.json").read_bytes() == (tmp_path / "m" / "report.json").read_bytes()
    two = wide(tmp_path, [[1, 1, 1, 1], [1, 2, 1, 1]], "two.csv", labels=("a", "b", "c", "d"))
    assert main(["test-one", str(a), "--mu0", str(two), "--method", "norm_asymptotic", "--out", str(tmp_path / "x")]) == 2


def test_malformed_input_exit_code(tmp_path, capsys):
    bad = write(tmp_path / "bad.csv", "a,b,c\n1,1,1\n1,2,3\n4,5\n")
    ok, _ = _groups(tmp_path)
    code = main(["test-two", str(bad), str(ok), "--method", "norm_asymptotic", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "line 4" in capsys.readouterr().err


def test_grid_mismatch_exit_code(tmp_path):
    a, _ = _groups(tmp_path)
    c = wide(tmp_path, [[1, 2, 3]], "c.csv")
    assert main(["test-two", str(a), str(c), "--method", "norm_asymptotic", "--out", str(tmp_path / "o")]) == 2


def test_missing_file_exit_code(tmp_path):
    assert main(["mean", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 2


def test_unknown_method_is_usage_error(tmp_path):
    a, b = _groups(tmp_path)
    with pytest.raises(SystemExit) as exc:
        main(["test-two", str(a), str(b), "--method", "magic", "--out", str(tmp_path / "o")])
    assert exc.value.code == 2


# --- CLI: simulate --------------------------------------------------------------------

MINIMAL = "delta = 0.0, 0.3\nn_g = 10\nK_X = 8\ngrid_size = 31\nruns = 4\nB = 99\nn_draws = 2000\nseed = 5\n"


def test_simulate_minimal_config_reproducible(tmp_path):
    cfg = write(tmp_path / "sim.cfg", MINIMAL + "methods = norm_asymptotic, proj_bootstrap:0.9\n")
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "s1")]) == 0
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "s2"), "--workers", "2"]) == 0
    for name in ("power.csv", "power.json"):
        assert (tmp_path / "s1" / name).read_bytes() == (tmp_path / "s2" / name).read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "s1" / "power.csv", newline="")))
    assert len(rows) == 4
    assert {r["delta"] for r in rows} == {"0.0", "0.3"}
    m1 = json.loads((tmp_path / "s1" / "manifest.json").read_text())
    m2 = json.loads((tmp_path / "s2" / "manifest.json").read_text())
    m1.pop("timings"), m2.pop("timings")
    assert m1 == m2


@pytest.mark.parametrize("extra", ["delta = 4.0\n", "colour = blue\n", "runs = 3\nruns = 4\n", "methods = magic\n"])
def test_simulate_bad_config_exit_code(tmp_path, extra):
    base = "n_g = 10\nruns = 2\n"
    cfg = write(tmp_path / "bad.cfg", base + extra)
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_parse_sim_config():
    cfg = parse_sim_config("# c\ndelta = 0, 0.1 # inline\nscore_dist = normal\nK_X = 50\nmethods = norm-bootstrap\n")
    assert cfg == {"delta": [0.0, 0.1], "score_dist": ["normal"], "K_X": 50, "methods": ["norm_bootstrap"]}
    with pytest.raises(ValidationError, match="single value"):
        parse_sim_config("K_X = 1, 2\n")


def test_csv_output_ignores_locale(tmp_path):
    p = wide(tmp_path, [[1, 2, 5]])
    for name in ("de_DE.UTF-8", "fr_FR.UTF-8"):
        try:
            locale.setlocale(locale.LC_NUMERIC, name)
            break
        except locale.Error:
            continue
    try:
        assert main(["mean", str(p), "--out", str(tmp_path / "o")]) == 0
    finally:
        locale.setlocale(locale.LC_NUMERIC, "C")
    text = (tmp_path / "o" / "mean.csv").read_text()
    assert "\r" not in text
    for line in text.splitlines()[1:]:
        float(line.split(",")[1])
