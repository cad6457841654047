import numpy as np
import pytest

from dynshot.cli import main, read_manifest
from dynshot.data import load_features


def _gen(tmp_path, name="d.csv", **kw):
    out = tmp_path / name
    args = ["gen-data", "--classes", str(kw.get("classes", 20)), "--per-class",
            str(kw.get("per_class", 12)), "--dim", str(kw.get("dim", 6)), "--seed", "1",
            "--out", str(out)]
    assert main(args) == 0
    return out


def _train(tmp_path, data, name, *extra):
    out = tmp_path / name
    args = ["train", "--data", str(data), "--steps", "12", "--batch-size", "8",
            "--g-hidden", "8", "--embed-dim", "4", "--f-hidden", "8", "--seed", "2",
            "--out-dir", str(out), *extra]
    assert main(args) == 0
    return out


def test_gen_data_rows_and_determinism(tmp_path, capsys):
    a = _gen(tmp_path, "a.csv")
    b = _gen(tmp_path, "b.csv")
    lines = a.read_text().splitlines()
    assert len(lines) == 1 + 240
    assert a.read_bytes() == b.read_bytes()
    ds = load_features(a)
    assert len(ds.class_ids("heldout")) == 6 and len(ds.class_ids("train")) == 14


def test_gen_data_missing_out_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen-data", "--classes", "4"])
    assert exc.value.code == 2


def test_train_fixed_shot_history(tmp_path):
    data = _gen(tmp_path)
    run = _train(tmp_path, data, "fixed", "--fixed-shot", "3")
    rows = (run / "history.csv").read_text().splitlines()
    assert rows[0] == "step,loss,n"
    assert {r.split(",")[2] for r in rows[1:]} == {"3"}
    m = read_manifest(run / "manifest.txt")
    assert m["shot_range"] == "3 3" and m["steps"] == "12"


def test_train_dynamic_covers_range_and_reruns_identically(tmp_path):
    data = _gen(tmp_path)
    run = tmp_path / "dyn"
    args = ["train", "--data", str(data), "--steps", "60", "--batch-size", "4",
            "--g-hidden", "8", "--embed-dim", "4", "--f-hidden", "8",
            "--shot-range", "2", "5", "--out-dir", str(run)]
    assert main(args) == 0
    sizes = {int(r.split(",")[2]) for r in (run / "history.csv").read_text().splitlines()[1:]}
    assert sizes == {2, 3, 4, 5}
    first = (run / "params.dynp").read_bytes()
    rerun = tmp_path / "rerun"
    assert main(["train", "--manifest", str(run / "manifest.txt"), "--out-dir", str(rerun)]) == 0
    assert (rerun / "params.dynp").read_bytes() == first
    assert (rerun / "history.csv").read_bytes() == (run / "history.csv").read_bytes()


def test_train_without_data_is_usage_error(tmp_path):
    assert main(["train", "--out-dir", str(tmp_path / "x")]) == 2


def test_train_missing_data_file(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none.csv"),
                 "--out-dir", str(tmp_path / "x")]) == 3




@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("runs")
    data = _gen(tmp)
    fixed = [_train(tmp, data, f"k{k}", "--fixed-shot", str(k)) for k in (2, 3, 4, 5)]
    dyn = _train(tmp, data, "dyn", "--shot-range", "2", "5")
    return tmp, data, fixed + [dyn]


def test_report_grid_text_and_csv_agree(runs, capsys):
    tmp, data, run_dirs = runs
    out_csv = tmp / "grid.csv"
    args = ["report", "--data", str(data), "--eval-sizes", "2", "3", "4", "5",
            "--episodes", "100", "--out-csv", str(out_csv)]
    for r in run_dirs:
        args += ["--run", str(r)]
    capsys.readouterr()
    assert main(args) == 0
    text = capsys.readouterr().out
    rows = out_csv.read_text().splitlines()
    assert rows[0] == "train_size,eval_size,mean,sd"
    assert len(rows) == 1 + 20
    body = [line for line in text.splitlines()[1:] if line.strip() and not line.startswith("-")]
    labels = ["2-shot Network", "3-shot Network", "4-shot Network", "5-shot Network",
              "Dynamic Input"]
    assert [line[:len(lab)] for line, lab in zip(body, labels)] == labels
    csv_cells = {}
    for row in rows[1:]:
        ts, es, mean, sd = row.split(",")
        csv_cells[(ts, int(es))] = (float(mean), float(sd))
    for line, lab, ts in zip(body, labels, ["2", "3", "4", "5", "dynamic"]):
        nums = [float(t) for t in line[len(lab):].replace("±", " ").split()]
        assert len(nums) == 8
        for c, es in enumerate([2, 3, 4, 5]):
            mean, sd = csv_cells[(ts, es)]
            assert abs(nums[2 * c] - mean) < 5e-4 and abs(nums[2 * c + 1] - sd) < 5e-4


def test_report_degenerate_single_cell(runs, capsys):
    tmp, data, run_dirs = runs
    out_csv = tmp / "one.csv"
    assert main(["report", "--data", str(data), "--run", str(run_dirs[1]), "--eval-sizes", "3",
                 "--episodes", "50", "--out-csv", str(out_csv)]) == 0
    rows = out_csv.read_text().splitlines()
    assert len(rows) == 2 and rows[1].startswith("3,3,")


def test_report_missing_checkpoint(runs, tmp_path):
    _, data, _ = runs
    (tmp_path / "empty").mkdir()
    assert main(["report", "--data", str(data), "--run", str(tmp_path / "empty")]) == 3


def test_report_reads_checkpoint(runs, capsys):
    tmp, data, run_dirs = runs
    args = ["report", "--data", str(data), "--run", str(run_dirs[0]), "--episodes", "50"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first


def test_verify_only_optimizer(capsys):
    assert main(["verify", "--only", "optimizer", "--only", "collapse"]) == 0
    out = capsys.readouterr().out
    assert "PASS  optimizer" in out and "PASS  collapse" in out and "2/2" in out


def test_verify_break_fails_collapse(capsys):
    assert main(["verify", "--only", "collapse", "--break", "mean-to-sum"]) == 1
    assert "FAIL  collapse" in capsys.readouterr().out


def test_verify_unknown_check(capsys):
    assert main(["verify", "--only", "nope"]) == 2


def test_bench_assembly(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench-assembly", "--min-n", "2", "--max-n", "6", "--dim", "4",
                 "--g-hidden", "4", "--embed-dim", "4", "--f-hidden", "4",
                 "--out", str(out)]) == 0
    rows = [r.split(",") for r in out.read_text().splitlines()]
    assert rows[0] == ["n", "g_instances", "node_count", "param_count", "assemble_micros"]
    assert [int(r[1]) for r in rows[1:]] == [1, 3, 6, 10, 15]
    assert len({r[3] for r in rows[1:]}) == 1
    nodes = [int(r[2]) for r in rows[1:]]
    assert nodes == sorted(nodes) and len(set(nodes)) == 5


def test_grid_command(tmp_path, capsys):
    data = _gen(tmp_path, classes=10, per_class=8, dim=4)
    out = tmp_path / "g"
    assert main(["grid", "--data", str(data), "--train-sizes", "2", "3", "--eval-sizes", "2", "3",
                 "--seeds", "0", "1", "--steps", "5", "--batch-size", "4", "--episodes", "40",
                 "--g-hidden", "4", "--embed-dim", "4", "--f-hidden", "4",
                 "--out-dir", str(out)]) == 0
    assert len((out / "grid.csv").read_text().splitlines()) == 1 + 6
    assert "Dynamic Input" in (out / "grid.txt").read_text()
    assert read_manifest(out / "manifest.txt")["seeds"] == "0 1"
