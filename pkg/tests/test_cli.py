import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from gsos import cli
from gsos.cli import config_hash, main
from gsos.exact import TruncationWindow, transfer_matrix
from gsos.lattice import square
from gsos.model import HeightField, ModelParams, save_field, staircase_bc
from gsos.verify import SuiteResult


def run(args, out):
    return main(list(args) + ["--out", str(out)])


def only_dir(out):
    (d,) = [p for p in Path(out).iterdir() if p.is_dir()]
    return d


def test_exact_example(tmp_path, capsys):
    assert run(["exact", "--L", "1", "--M", "3", "--p", "1", "--beta", "2", "--bc", "staircase:0/0"], tmp_path) == 0
    d = only_dir(tmp_path)
    (rec,) = [json.loads(x) for x in (d / "results.jsonl").read_text().splitlines()]
    ref = transfer_matrix(1, 3, staircase_bc(1, [0], [0], 1, 3), ModelParams(1, 2),
                          TruncationWindow.for_staircase(1)).logZ
    assert rec["logZ"] == ref and rec["method"] == "transfer" and rec["window"] == [-4, 5]
    assert rec["manifest"] == json.loads((d / "manifest.json").read_text())["hash"]
    assert "logZ" in capsys.readouterr().out


def test_exact_both_methods_agree(tmp_path):
    assert run(["exact", "--L", "1", "--M", "1", "--p", "inf", "--beta", "1", "--window", "-1,2",
                "--method", "both"], tmp_path) == 0
    recs = [json.loads(x) for x in (only_dir(tmp_path) / "results.jsonl").read_text().splitlines()]
    assert len(recs) == 2 and abs(recs[0]["logZ"] - recs[1]["logZ"]) < 1e-12
    assert recs[0]["params"]["p"] == "inf"


def test_usage_errors(tmp_path, capsys):
    assert run(["exact", "--M", "3", "--p", "1", "--beta", "2"], tmp_path) == 1
    assert "--L" in capsys.readouterr().err
    assert run(["exact", "--L", "1", "--p", "1", "--beta", "2", "--nonsense"], tmp_path) == 1
    assert main([]) == 1
    assert main(["verify", "everything"]) == 1


def test_validation_errors(tmp_path):
    assert run(["exact", "--L", "1", "--p", "0.5", "--beta", "2"], tmp_path) == 2
    assert run(["exact", "--L", "1", "--p", "1", "--beta", "2", "--window", "1,3"], tmp_path) == 2
    assert run(["simulate", "--L", "1", "--p", "1", "--beta", "1", "--burn-in", "1.5"], tmp_path) == 2
    assert not any(Path(tmp_path).iterdir())


def test_cap_error_names_cap(tmp_path, capsys):
    assert run(["exact", "--L", "6", "--M", "6", "--p", "1", "--beta", "1", "--method", "transfer"], tmp_path) == 3
    assert "transfer cap" in capsys.readouterr().err
    assert not any(Path(tmp_path).iterdir())


def test_contours(tmp_path):
    flat = tmp_path / "flat.txt"
    save_field(HeightField(square(2), 0), ModelParams(1, 1), flat)
    assert run(["contours", "--load", str(flat), "--h", "1"], tmp_path / "a") == 0
    (rec,) = [json.loads(x) for x in (only_dir(tmp_path / "a") / "contours.jsonl").read_text().splitlines()]
    assert rec["contours"] == []
    bump = tmp_path / "bump.txt"
    f = HeightField(square(2), 0)
    f[(0, 0)] = 1
    save_field(f, ModelParams(1, 1), bump)
    assert run(["contours", "--load", str(bump), "--h", "1"], tmp_path / "b") == 0
    (rec,) = [json.loads(x) for x in (only_dir(tmp_path / "b") / "contours.jsonl").read_text().splitlines()]
    (c,) = rec["contours"]
    assert c["length"] == 4 and c["interior_size"] == 1
    assert run(["contours", "--load", str(tmp_path / "missing.txt"), "--h", "1"], tmp_path / "c") == 2


def test_contours_open(tmp_path):
    L = M = 1
    bc = staircase_bc(1, [0], [0], L, M)
    h = np.array([[0, 0, 0], [1, 1, 1], [1, 1, 1]])
    path = tmp_path / "stair.txt"
    save_field(HeightField(square(1), h, bc), ModelParams(2, 1), path)
    assert run(["contours", "--load", str(path), "--h", "1", "--open"], tmp_path / "o") == 0
    recs = [json.loads(x) for x in (only_dir(tmp_path / "o") / "contours.jsonl").read_text().splitlines()]
    assert recs[1]["open_contour"]["length"] == 3


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if not p.name.startswith("manifest")}


def test_bit_identical_outputs(tmp_path):
    args = ["simulate", "--L", "2", "--p", "2", "--beta", "0.8", "--sweeps", "640", "--seed", "7"]
    assert run(args, tmp_path / "x") == 0
    assert run(args, tmp_path / "y") == 0
    a, b = only_dir(tmp_path / "x"), only_dir(tmp_path / "y")
    assert a.name == b.name and _files(a) == _files(b) and len(_files(a)) == 3
    assert run(args[:-1] + ["8"], tmp_path / "z") == 0
    assert only_dir(tmp_path / "z").name != a.name


def test_manifest_hash_rehash(tmp_path):
    assert run(["tension", "--L", "2,3", "--p", "1", "--beta", "3", "--window", "0,1"], tmp_path) == 0
    d = only_dir(tmp_path)
    man = json.loads((d / "manifest.json").read_text())
    assert config_hash(man["config"]) == man["hash"] and d.name.endswith(man["hash"][:12])
    assert {o["file"] for o in man["outputs"]} == {"tension.csv", "tension.jsonl"}
    rows = list(csv.reader((d / "tension.csv").open()))
    assert rows[0][-1] == "manifest" and all(r[-1] == man["hash"] for r in rows[1:])


def test_append_only(tmp_path):
    args = ["tension", "--L", "2,3", "--p", "1", "--beta", "3", "--window", "0,1"]
    assert run(args, tmp_path) == 0
    d = only_dir(tmp_path)
    before = (d / "tension.csv").read_bytes()
    assert run(args, tmp_path) == 0
    names = sorted(p.name for p in d.iterdir())
    assert names == ["manifest.1.json", "manifest.json", "tension.csv", "tension.jsonl"]
    assert (d / "tension.csv").read_bytes() == before
    # a differing file for the same run directory is written alongside, never over
    (d / "tension.csv").write_text("tampered\n")
    assert run(args, tmp_path) == 0
    assert (d / "tension.csv").read_text() == "tampered\n" and (d / "tension.1.csv").exists()


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# exact run\np = 1\nbeta=2\nL = 1\nM = 1\nwindow = -1,1\n")
    assert run(["exact", "--config", str(cfg)], tmp_path / "a") == 0
    ra = json.loads((only_dir(tmp_path / "a") / "results.jsonl").read_text())
    assert run(["exact", "--config", str(cfg), "--beta", "3"], tmp_path / "b") == 0
    rb = json.loads((only_dir(tmp_path / "b") / "results.jsonl").read_text())
    assert ra["params"]["beta"] == 2 and rb["params"]["beta"] == 3
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert run(["exact", "--config", str(bad)], tmp_path / "c") == 1


def test_repulsion_example(tmp_path):
    assert run(["repulsion", "--p", "1", "--beta", "1", "--L", "8,16,32", "--sweeps", "640"], tmp_path) == 0
    d = only_dir(tmp_path)
    rows = list(csv.reader((d / "repulsion_curve.csv").open()))
    assert rows[0] == ["L", "h", "P", "err", "manifest"]
    assert {r[0] for r in rows[1:]} == {"8", "16", "32"}
    hs = list(csv.reader((d / "repulsion_height.csv").open()))
    assert [r[0] for r in hs[1:]] == ["8", "16", "32"]


def test_rate_example(tmp_path):
    assert run(["rate", "--p", "2", "--beta", "1", "--L", "4,6,8", "--levels", "3", "--sweeps", "640"], tmp_path) == 0
    rows = list(csv.reader((only_dir(tmp_path) / "rate.csv").open()))
    assert rows[0][:5] == ["L", "beta", "logP", "logP_err", "H"]
    logp = [float(r[2]) for r in rows[1:]]
    assert all(v < 0 for v in logp)


def test_verify_fkg(capsys):
    assert main(["verify", "fkg"]) == 0
    assert "fkg: PASS" in capsys.readouterr().out


def test_verify_failure_exit_code(monkeypatch, capsys):
    monkeypatch.setitem(cli.SUITES, "fkg", lambda: SuiteResult("fkg", False, ["broken"], (1, 2, 3)))
    assert main(["verify", "fkg"]) == 4
    assert "counterexample" in capsys.readouterr().out


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "gsos", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "gsos" in r.stdout
