import csv
import json

import pytest

from oriperc.cli import CROSSING_COLUMNS, GROW_COLUMNS, TWOPOINT_COLUMNS, load_series, run_command


def run(argv, capsys):
    code = run_command(argv)
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(text):
    return list(csv.reader(text.splitlines()))


def test_grow_full_occupation(capsys):
    code, out, err = run(["grow", "--p", "1", "--d", "1", "--t-max", "2", "--n", "1", "--seed", "7"], capsys)
    assert code == 0
    rows = rows_of(out)
    assert tuple(rows[0]) == GROW_COLUMNS
    picked = [(r[0], r[1], r[3], r[5]) for r in rows[1:]]
    assert picked[:2] == [("0", "1", "1", "0"), ("1", "1", "2", "1")]
    assert picked[2][:3] == ("2", "1", "3") and float(picked[2][3]) == pytest.approx((8 / 3) ** 0.5)
    assert err.startswith("grow ") and err.count("\n") == 1


def test_oracle_theta_two(capsys):
    code, out, _ = run(["oracle", "--p", "0.5", "--t-max", "2"], capsys)
    assert code == 0
    data = json.loads(out)
    assert data["exact"]["theta"][2] == 0.609375
    assert data["command"] == "oracle" and data["config"]["t_max"] == 2


def test_oracle_exact_and_boxes(capsys):
    code, out, _ = run(["oracle", "--p", "0.5", "--t-max", "3", "--exact", "--reversibility", "--box", "2x2"],
                       capsys)
    data = json.loads(out)
    assert code == 0
    assert data["crossing"][0]["V"] == pytest.approx(9 / 16)
    assert all(r["equal"] for r in data["reversibility"])


def test_hyperscaling_on_oracle_output(tmp_path, capsys):
    stats = tmp_path / "stats.json"
    assert run(["oracle", "--p", "0.6447", "--t-max", "10", "--out", str(stats)], capsys)[0] == 0
    code, out, _ = run(["hyperscaling", "--input", str(stats), "--d", "1"], capsys)
    rep = json.loads(out)["report"]
    assert code == 0
    assert all(rep["upper_ok"]) and all(r <= 1 for r in rep["ratio"])


def test_grow_outputs_feed_fit_and_hyperscaling(tmp_path, capsys):
    base = ["grow", "--p", "0.6447", "--t-max", "256", "--n", "4000", "--seed", "3"]
    for fmt in ("csv", "json"):
        path = tmp_path / f"g.{fmt}"
        assert run(base + ["--format", fmt, "--out", str(path)], capsys)[0] == 0
        code, out, _ = run(["fit", "--input", str(path), "--window", "16:256"], capsys)
        assert code == 0
        fits = json.loads(out)["fits"]
        assert set(fits) == {"global", "local"}
        code, out, _ = run(["hyperscaling", "--input", str(path), "--window", "16:256"], capsys)
        assert code == 0 and json.loads(out)["report"]["relation"] is not None
    meta = json.loads((tmp_path / "g.csv.meta.json").read_text())
    assert meta["config"]["p"] == 0.6447


def test_csv_and_json_series_agree(tmp_path, capsys):
    base = ["grow", "--p", "0.6", "--t-max", "30", "--n", "500", "--seed", "1"]
    run(base + ["--out", str(tmp_path / "a.csv")], capsys)
    run(base + ["--format", "json", "--out", str(tmp_path / "a.json")], capsys)
    a = load_series(tmp_path / "a.csv")
    b = load_series(tmp_path / "a.json")
    for x, y in zip(a[:3], b[:3]):
        assert list(x.value[:5]) == pytest.approx(list(y.value[:5]))


def test_twopoint_feeds_lemma(tmp_path, capsys):
    path = tmp_path / "tp.json"
    code, _, _ = run(["twopoint", "--p", "0.6447", "--t-max", "64", "--n", "4000", "--format", "json",
                      "--out", str(path)], capsys)
    assert code == 0
    code, out, _ = run(["lemma", "--input", str(path), "--width", "8", "--eps", "0.1",
                        "--eps-grid", "0.05:0.5:0.05"], capsys)
    rep = json.loads(out)["report"]
    assert code == 0 and rep["blocks"] == [2, 3, 4, 5, 6, 7]


def test_twopoint_csv_columns_and_lemma_needs_theta(tmp_path, capsys):
    path = tmp_path / "tp.csv"
    run(["twopoint", "--p", "0.6", "--times", "4,8", "--n", "200", "--out", str(path)], capsys)
    rows = rows_of(path.read_text())
    assert tuple(rows[0]) == TWOPOINT_COLUMNS
    assert len(rows) == 1 + 9 + 17
    assert run(["lemma", "--input", str(path), "--width", "2"], capsys)[0] == 2
    assert run(["lemma", "--input", str(path), "--width", "2", "--theta", "0.5"], capsys)[0] == 0


def test_crossing_csv(capsys):
    code, out, _ = run(["crossing", "--p", "0.6", "--n", "1000", "--box", "2x2", "--box", "8x8"], capsys)
    rows = rows_of(out)
    assert code == 0 and tuple(rows[0]) == CROSSING_COLUMNS and len(rows) == 3


def test_findwidth_not_found_exit_code(capsys):
    code, out, err = run(["findwidth", "--p", "1", "--n", "200", "--times", "4"], capsys)
    assert code == 3
    assert "not found" in err
    assert [f["t"] for f in json.loads(out)["not_found"]] == [4]


def test_findpc_runs(capsys):
    code, out, _ = run(["findpc", "--t", "1", "--n", "2000", "--tol", "0.05"], capsys)
    assert code == 0 and abs(json.loads(out)["p_c"] - 0.5) < 0.1


def test_sweep_reports_fits(capsys):
    code, out, _ = run(["sweep", "--ps", "0.5,0.52,0.54,0.56,0.58", "--t-cut", "200", "--n", "500",
                        "--format", "json"], capsys)
    data = json.loads(out)
    assert code == 0 and len(data["points"]) == 5 and "gamma" in data["fits"]


def test_config_file_is_overridden_by_flags(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"p": 0.0, "t-max": 3, "n": 10}))
    code, out, _ = run(["grow", "--config", str(cfg), "--p", "1"], capsys)
    rows = rows_of(out)
    assert code == 0 and rows[-1][:2] == ["3", "1"]


@pytest.mark.parametrize("argv", [
    ["grow", "--p", "0.5"],
    ["grow", "--p", "0.5", "--t-max", "3", "--n", "10", "--bogus"],
    ["grow", "--p", "1.5", "--t-max", "3", "--n", "10"],
    ["nosuch"],
    ["grow", "--config", "/nonexistent.json"],
    ["crossing", "--p", "0.5", "--n", "10", "--box", "0x3"],
    ["oracle", "--p", "0.5", "--t-max", "11"],
])
def test_usage_errors(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2 and err


def test_fit_not_found_on_short_series(tmp_path, capsys):
    path = tmp_path / "s.json"
    run(["oracle", "--p", "0.5", "--t-max", "4", "--out", str(path)], capsys)
    assert run(["fit", "--input", str(path), "--window", "100:200"], capsys)[0] == 3


@pytest.mark.parametrize("cmd", [
    ["grow", "--p", "0.6447", "--t-max", "300", "--n", "5000", "--seed", "11"],
    ["twopoint", "--p", "0.6447", "--t-max", "100", "--n", "3000", "--seed", "11"],
    ["crossing", "--p", "0.6447", "--n", "3000", "--box", "20x40", "--seed", "11"],
])
def test_outputs_identical_across_thread_counts(cmd, tmp_path, capsys):
    paths = []
    for threads in ("1", "4"):
        path = tmp_path / f"out{threads}.csv"
        assert run(cmd + ["--threads", threads, "--out", str(path)], capsys)[0] == 0
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    meta = [(p.parent / (p.name + ".meta.json")).read_bytes() for p in paths]
    assert meta[0] == meta[1]


def test_findwidth_reports_every_time(capsys):
    code, out, _ = run(["findwidth", "--p", "0.6447", "--n", "4000", "--times", "4,8",
                        "--band", "0.02:0.98"], capsys)
    data = json.loads(out)
    assert code == 0 and [w["t"] for w in data["widths"]] == [4, 8] and data["not_found"] == []


def test_console_script_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "oriperc", "oracle", "--p", "1", "--t-max", "1"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["exact"]["theta"] == [1.0, 1.0]
