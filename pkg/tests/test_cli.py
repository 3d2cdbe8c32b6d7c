import io
import json
import subprocess
import sys

import numpy as np
import pytest

from npthresh.cli import main
from npthresh.data import DatasetSpec, load_csv, load_csv_rows, threshold_percentiles, write_csv
from npthresh.errors import DataError
from npthresh.montecarlo import dgp_three_thresholds, replication_rng

MAX_NORMAL_TEXT_ROWS = ["1.281552", "1.632219", "1.818281", "1.943196", "2.036469"]


def run(argv):
    buf = io.StringIO()
    code = main(argv, out=buf)
    return code, buf.getvalue()


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.fixture(scope="module")
def three_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "three.csv"
    write_csv(str(path), dgp_three_thresholds(3000, replication_rng(11, 0)))
    return str(path)


def test_load_small_file(tmp_path):
    path = write(tmp_path, "a.csv", "y,x,q\n1,0.5,0.1\n2,0.3,0.9\n3,-0.1,0.4\n")
    s = load_csv(DatasetSpec(path, "y", ("x",), "q"))
    assert s.n == 3 and s.p == 1
    np.testing.assert_array_equal(s.y, [1.0, 2.0, 3.0])


def test_blank_cell_drops_row(tmp_path, caplog):
    path = write(tmp_path, "b.csv", "y,x,q\n1,0.5,0.1\n,0.3,0.9\n3,-0.1,0.4\n")
    res = load_csv_rows(DatasetSpec(path, "y", ("x",), "q"))
    assert res.sample.n == 2 and res.dropped == 1 and res.rows_read == 3
    assert "dropped 1 row" in caplog.text


def test_missing_column_is_named(tmp_path):
    path = write(tmp_path, "c.csv", "y,x,z\n1,0.5,0.1\n")
    with pytest.raises(DataError, match="'q'"):
        load_csv(DatasetSpec(path, "y", ("x",), "q"))


def test_missing_file_and_empty_file(tmp_path):
    with pytest.raises(DataError, match="file not found"):
        load_csv(DatasetSpec(str(tmp_path / "nope.csv"), "y", ("x",), "q"))
    path = write(tmp_path, "d.csv", "y,x,q\n")
    with pytest.raises(DataError, match="no usable rows"):
        load_csv(DatasetSpec(path, "y", ("x",), "q"))


def test_headerless_positions(tmp_path):
    path = write(tmp_path, "e.csv", "0.1,1,0.5\n0.9,2,0.3\n")
    s = load_csv(DatasetSpec(path, "1", ("2",), "0", has_header=False))
    np.testing.assert_array_equal(s.y, [1.0, 2.0])
    np.testing.assert_array_equal(s.q, [0.1, 0.9])
    with pytest.raises(DataError):
        load_csv(DatasetSpec(path, "y", ("2",), "0", has_header=False))


def test_spec_rejects_duplicate_columns():
    with pytest.raises(DataError, match="distinct"):
        DatasetSpec("f.csv", "y", ("y",), "q")


def test_write_csv_round_trip(tmp_path):
    s = dgp_three_thresholds(40, replication_rng(2, 0))
    path = str(tmp_path / "rt.csv")
    write_csv(path, s)
    back = load_csv(DatasetSpec(path, "y", ("x",), "q"))
    np.testing.assert_array_equal(back.y, s.y)
    np.testing.assert_array_equal(back.x, s.x)
    np.testing.assert_array_equal(back.q, s.q)


def test_percentiles():
    assert threshold_percentiles(np.arange(10.0), [2.0, 7.5]) == [20.0, 80.0]


def test_critical_values_default_table():
    code, out = run(["critical-values"])
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 6
    for line, want in zip(lines[1:], MAX_NORMAL_TEXT_ROWS):
        assert line.split()[1] == want


def test_critical_values_json_and_median():
    code, out = run(["critical-values", "--k", "1", "--alpha", "0.5", "--json"])
    assert code == 0
    assert json.loads(out)["rows"][0]["values"][0] == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("argv", [
    ["critical-values", "--alpha", "1.5"],
    ["critical-values", "--k", "0"],
    ["simulate", "size", "--reps", "0"],
    ["simulate", "bogus"],
    ["detect", "--input", "x.csv"],
])
def test_usage_and_domain_errors_exit_2(argv, capsys):
    code, _ = run(argv)
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_status"] == 2


def test_data_error_exits_3(tmp_path, capsys):
    code, _ = run(["detect", "--input", str(tmp_path / "none.csv"), "--y", "y", "--x", "x", "--q", "q"])
    assert code == 3
    assert json.loads(capsys.readouterr().err)["error"] == "data_error"


def test_estimation_error_exits_4(tmp_path, capsys):
    rows = "\n".join(f"{i % 2},{i * 0.1},{i}" for i in range(12))
    path = write(tmp_path, "tiny.csv", "y,x,q\n" + rows + "\n")
    code, _ = run(["detect", "--input", path, "--y", "y", "--x", "x", "--q", "q"])
    assert code == 4
    assert "partial" not in json.loads(capsys.readouterr().err).get("context", {})


def test_detect_finds_three_thresholds(three_csv):
    code, out = run(["detect", "--input", three_csv, "--y", "y", "--x", "x", "--q", "q"])
    assert code == 0
    rep = json.loads(out)
    det = rep["detection"]
    assert det["s_hat"] == 3
    np.testing.assert_allclose(sorted(det["gammas"]), [-0.7, 0.15, 0.5], atol=0.05)
    assert len(rep["threshold_percentiles"]["values"]) == 3
    assert rep["schema_version"] == 1


def test_echoed_flags_reproduce_run(three_csv):
    _, first = run(["detect", "--input", three_csv, "--y", "y", "--x", "x", "--q", "q"])
    a = json.loads(first)
    _, second = run(a["config"]["flags"])
    b = json.loads(second)
    assert json.dumps(a["detection"], sort_keys=True) == json.dumps(b["detection"], sort_keys=True)
    assert a["config"]["flags"] == b["config"]["flags"]


def test_threads_flag_does_not_change_detection(three_csv):
    base = ["detect", "--input", three_csv, "--y", "y", "--x", "x", "--q", "q", "--max-thresholds", "1"]
    _, one = run(base + ["--threads", "1"])
    _, two = run(base + ["--threads", "2"])
    assert json.loads(one)["detection"] == json.loads(two)["detection"]


def test_detect_text_output(three_csv):
    code, out = run(["detect", "--input", three_csv, "--y", "y", "--x", "x", "--q", "q",
                     "--max-thresholds", "1", "--text"])
    assert code == 0
    assert "round 1" in out and "threshold added" in out


def test_simulate_size_json():
    code, out = run(["simulate", "size", "--n", "120", "--reps", "2", "--json"])
    assert code == 0
    obj = json.loads(out)
    assert obj["config"]["reps"] == 2 and "cells" in obj["table"]


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "npthresh.cli", "critical-values", "--k", "2"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and "1.954508" in res.stdout
