import json
import subprocess
import sys

import pytest

from mvcwm import cli
from mvcwm.io import load_dataset, load_model


@pytest.fixture(scope="module")
def a1_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("a1") / "a1.csv"
    assert cli.main(["simulate", "A1", "--n", "200", "--seed", "7", "--out", str(path)]) == 0
    return path


def test_simulate_writes_dataset_and_labels(a1_csv, tmp_path, capsys):
    data = load_dataset(a1_csv)
    assert (data.n, data.p, data.q, data.r) == (200, 3, 3, 3)
    assert set(data.labels) == {1, 2, 3, 4}
    spec = tmp_path / "spec.json"
    out = tmp_path / "again.csv"
    assert cli.main(["simulate", "A1", "--n", "200", "--seed", "7", "--out", str(out),
                     "--spec-out", str(spec)]) == 0
    assert out.read_bytes() == a1_csv.read_bytes()
    assert json.loads(spec.read_text())["N"] == 200
    other = tmp_path / "from_spec.csv"
    assert cli.main(["simulate", str(spec), "--seed", "7", "--out", str(other)]) == 0
    assert other.read_bytes() == a1_csv.read_bytes()
    assert "wrote 200 units" in capsys.readouterr().out


def test_fit_selects_four_components(a1_csv, tmp_path, capsys):
    report = tmp_path / "report"
    model = tmp_path / "model.json"
    code = cli.main(["fit", str(a1_csv), "--g-range", "1..5", "--seed", "7",
                     "--report", str(report), "--save-model", str(model)])
    assert code == 0
    out = capsys.readouterr().out
    assert "best_G = 4" in out
    summary = json.loads((report / "report.json").read_text())
    assert summary["best_G"] == 4 and summary["ari"] == 1.0
    assert [row["G"] for row in summary["per_G"]] == [1, 2, 3, 4, 5]
    assert sum(summary["cluster_sizes"]) == 200
    for name in ("selection.csv", "strategies.csv", "coefficients.csv", "clusters.csv"):
        assert (report / name).read_text().count("\n") > 1
    saved = load_model(model)
    assert saved.G == 4 and saved.bic == pytest.approx(summary["bic"])


def test_reports_are_byte_identical(a1_csv, tmp_path):
    args = ["select", str(a1_csv), "--g-range", "3,4", "--seed", "3", "--soft-repeats", "2",
            "--model", "mmn"]
    for k in (1, 2):
        assert cli.main(args + ["--report", str(tmp_path / f"r{k}")]) == 0
    for name in ("selection.csv", "strategies.csv", "coefficients.csv", "clusters.csv",
                 "report.json", "model.json"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_evaluate_identical(a1_csv, tmp_path, capsys):
    labels = a1_csv.with_name("a1.labels.csv")
    out = tmp_path / "m.json"
    assert cli.main(["evaluate", str(labels), str(labels), "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "ARI = 1" in text and "eta = 0.00%" in text
    assert json.loads(out.read_text()) == {"ari": 1.0, "eta_percent": 0.0, "n": 200}


def test_evaluate_length_mismatch(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("unit,label\n1,1\n2,2\n")
    b.write_text("unit,label\n1,1\n")
    assert cli.main(["evaluate", str(a), str(b)]) == 1


@pytest.mark.parametrize("argv", [
    ["frobnicate"],
    [],
    ["fit"],
    ["fit", "x.csv", "--g-range", "0..2"],
    ["fit", "x.csv", "--g-range", "a..b"],
    ["simulate", "NOPE", "--out", "x.csv"],
    ["benchmark", "sim2", "--sizes", "abc"],
    ["benchmark", "sim2", "--jobs", "0"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert cli.main(argv) == 1


def test_missing_file_exits_1(tmp_path):
    assert cli.main(["fit", str(tmp_path / "none.csv")]) == 1


def test_numerical_failure_exits_2(tmp_path, capsys):
    path = tmp_path / "tiny.csv"
    path.write_text("unit,role,row,col,value\n" + "".join(
        f"{u},x,1,1,{u * 0.37 % 1}\n{u},y,1,1,{u * 0.61 % 1}\n" for u in range(1, 5)))
    assert cli.main(["fit", str(path), "--g-range", "4..6"]) == 2
    assert "numerical failure" in capsys.readouterr().err


def test_parse_g_range():
    assert cli.parse_g_range("1..3") == (1, 2, 3)
    assert cli.parse_g_range("5,2,2") == (2, 5)
    assert cli.parse_g_range(" 4 ") == (4,)


def test_fmt_is_stable():
    assert cli.fmt(1.0) == "1"
    assert cli.fmt(-1234.56789) == "-1234.57"
    assert cli.fmt(None) == ""


def test_small_benchmark(tmp_path, capsys):
    code = cli.main(["benchmark", "sim1-a1", "--reps", "2", "--sizes", "200", "--seed", "1",
                     "--soft-repeats", "2", "--out", str(tmp_path)])
    assert code == 0
    rows = (tmp_path / "summary.csv").read_text().splitlines()
    assert rows[0].startswith("scenario,N,model,R,true_G")
    assert rows[1].startswith("A1,200,cwm,2,4,")
    assert (tmp_path / "bias_mse.csv").read_text().count("\n") == 1 + 4 * 3 * 4
    assert (tmp_path / "strategies.csv").exists()


def test_module_entry_point(a1_csv):
    labels = a1_csv.with_name("a1.labels.csv")
    proc = subprocess.run([sys.executable, "-m", "mvcwm.cli", "evaluate", str(labels),
                           str(labels)], capture_output=True, text=True)
    assert proc.returncode == 0 and "eta = 0.00%" in proc.stdout
