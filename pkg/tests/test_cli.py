import csv
import json

import pytest

from renn.cli import main
from renn.model import read_dataset, read_model


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def model_file(tmp_path, capsys):
    p = tmp_path / "m.txt"
    assert run(capsys, "gen", "--topology", "grid:2,3", "--gamma", "0.5", "--seed", "3",
               "--out", str(p))[0] == 0
    return p


def test_gen_writes_model(model_file):
    m = read_model(model_file)
    assert m.n == 6 and len(m.edges) == 7 and m.topology == ("grid", 2, 3)


@pytest.mark.parametrize("method", ["exact", "mf", "lbp", "dbp", "gbp", "renn", "renn-bethe"])
def test_infer_json_is_repeatable(capsys, model_file, method):
    args = ["infer", "--model", str(model_file), "--method", method, "--json",
            "--max-iters", "100"]
    code, a, _ = run(capsys, *args)
    assert code == 0
    _, b, _ = run(capsys, *args)
    assert a == b
    payload = json.loads(a)
    assert payload["method"] == method and len(payload["unary"]) == 6
    assert len(payload["pairwise"]) == 7


def test_infer_text(capsys, model_file):
    code, out, _ = run(capsys, "infer", "--model", str(model_file), "--method", "lbp")
    lines = out.splitlines()
    assert code == 0 and lines[0] == "method lbp"
    assert sum(l.startswith("marginal ") for l in lines) == 6
    assert sum(l.startswith("pairwise ") for l in lines) == 7


def test_infer_lambda_auto(capsys, model_file):
    code, out, _ = run(capsys, "infer", "--model", str(model_file), "--method", "renn",
                       "--lambda", "auto", "--max-iters", "30", "--json")
    assert code == 0 and json.loads(out)["method"] == "renn"


def test_errors_exit_2(capsys, tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("ising 2\nnode 9 1.0\n")
    code, _, err = run(capsys, "infer", "--model", str(bad), "--method", "mf")
    assert code == 2 and err.startswith("error: line 2")
    code, _, err = run(capsys, "infer", "--model", str(tmp_path / "missing"), "--method", "mf")
    assert code == 2 and err.startswith("error:")


def test_sample_and_learn_repeatable(capsys, tmp_path, model_file):
    tr, te = tmp_path / "tr.txt", tmp_path / "te.txt"
    assert run(capsys, "sample", "--model", str(model_file), "--count", "200", "--seed", "1",
               "--out", str(tr))[0] == 0
    assert run(capsys, "sample", "--model", str(model_file), "--count", "100", "--seed", "2",
               "--out", str(te), "--gibbs")[0] == 0
    assert read_dataset(tr).shape == (200, 6)
    outs = []
    for k in range(2):
        o = tmp_path / f"learned{k}.txt"
        code, _, _ = run(capsys, "learn", "--structure", str(model_file), "--train", str(tr),
                         "--test", str(te), "--backend", "exact", "--epochs", "5",
                         "--out", str(o))
        assert code == 0
        outs.append(o.read_text())
    assert outs[0] == outs[1]
    assert outs[0].count("# epoch ") == 5


def test_bench_repeatable(capsys, tmp_path):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text("topologies = grid:2,2\ngammas = 0.1\nseeds = 0..1\nmethods = mf lbp gbp\n")
    texts = []
    for k in range(2):
        out = tmp_path / f"b{k}.csv"
        code, msg, _ = run(capsys, "bench", "--config", str(cfg), "--out", str(out))
        assert code == 0 and "0 errors" in msg
        rows = list(csv.reader(out.read_text().splitlines()))
        k_rt = rows[0].index("runtime_ms")
        texts.append([r[:k_rt] + r[k_rt + 1:] for r in rows])
    assert texts[0] == texts[1]
    assert len(texts[0]) == 1 + 6 + 6


def test_bench_bad_config(capsys, tmp_path):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text("methods = nope\n")
    code, _, err = run(capsys, "bench", "--config", str(cfg), "--out", str(tmp_path / "o.csv"))
    assert code == 2 and "line 1" in err
