import json
import subprocess
import sys

import numpy as np
import pytest

from slhnet import example_network
from slhnet.cli import main
from slhnet.ensembles import random_well_defined_block_matrix
from slhnet.schur import BlockMatrix
from slhnet.serialize import dumps

LOOP = str(example_network("beam_splitter_loop"))
PROBE = str(example_network("beam_splitter_probe"))


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_reduce_json(capsys):
    code, out, _ = run(["reduce", LOOP], capsys)
    assert code == 0
    data = json.loads(out)
    assert data["schema"] == "slhnet/1" and data["command"] == "reduce"
    assert data["model"]["kind"] == "oscillator"


def test_eliminate_and_check_commute(capsys):
    code, out, _ = run(["eliminate", LOOP], capsys)
    assert code == 0
    limit = json.loads(out)["limit"]
    S = limit["S"][0][0]
    assert abs(S[0] - (-1.0)) < 1e-12 and abs(S[1]) < 1e-12
    code, out, _ = run(["check-commute", LOOP], capsys)
    assert code == 0
    assert json.loads(out)["verdict"] == "pass"


def test_table_format(capsys):
    code, out, _ = run(["check-commute", LOOP, "--format", "table"], capsys)
    assert code == 0
    assert out.rstrip().endswith("verdict: pass")


def test_output_is_byte_deterministic(tmp_path, capsys):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["check-commute", LOOP, "--out", str(first)]) == 0
    assert main(["check-commute", LOOP, "--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()


def test_validate(capsys):
    code, out, _ = run(["validate", LOOP], capsys)
    assert code == 0
    data = json.loads(out)
    assert data["verdict"] == "hypotheses met"
    assert "max_block_diff" not in data


def test_converge_probe(tmp_path, capsys):
    csv_path = tmp_path / "traces.csv"
    code, out, _ = run(["converge", PROBE, "--k", "2,4,8", "--cutoff", "5", "--t", "0:2:0.5",
                        "--csv", str(csv_path)], capsys)
    data = json.loads(out)
    assert data["ks"] == [2.0, 4.0, 8.0]
    assert code == (0 if data["pass"] else 4)
    assert csv_path.read_text().startswith("k,t,observable,value")


def test_parse_error_exit(tmp_path, capsys):
    bad = write(tmp_path, "bad.slh", "component a {\n  S = [[1, 0];\n}\n")
    code, _, err = run(["reduce", bad], capsys)
    assert code == 1
    assert "bad.slh:2:" in err


def test_missing_file_exit(tmp_path, capsys):
    code, _, _ = run(["reduce", str(tmp_path / "nope.slh")], capsys)
    assert code == 1


def test_bad_arguments_exit(capsys):
    assert run(["converge", LOOP, "--k", "4,2"], capsys)[0] == 1
    assert run(["converge", LOOP, "--cutoff", "1"], capsys)[0] == 1
    assert run(["frobnicate"], capsys)[0] == 1


def test_ill_posed_exit(tmp_path, capsys):
    src = "component a { inputs = 2; S = [[1, 0], [0, 1]]; }\nconnect a.out[1] -> a.in[1];\n"
    code, _, err = run(["reduce", write(tmp_path, "ill.slh", src)], capsys)
    assert code == 2
    assert "ill-posed" in err


def test_precondition_exit(tmp_path, capsys):
    src = ("component a { inputs = 2; S = [[1, 0], [0, 1]]; }\n"
           "component c { oscillators = 1; C = 1; Omega = 0; }\n"
           "connect a.out[1] -> a.in[1];\n")
    code, out, _ = run(["check-commute", write(tmp_path, "pre.slh", src)], capsys)
    assert code == 3
    assert json.loads(out)["verdict"] == "hypotheses not met"


def test_eliminate_without_oscillators(tmp_path, capsys):
    src = "component a { S = 1; L = 0.5; }\n"
    assert run(["eliminate", write(tmp_path, "static.slh", src)], capsys)[0] == 3


def test_schur_subcommand(tmp_path, rng, capsys):
    M = random_well_defined_block_matrix(rng, [2, 2], rank=2)
    path = write(tmp_path, "m.json", dumps(M.to_json()))
    code, out, _ = run(["schur", path, "--eliminate", "0"], capsys)
    assert code == 0
    red = BlockMatrix.from_json(json.loads(out)["complement"])
    E = M.entries
    expected = E[2:, 2:] - E[2:, :2] @ np.linalg.pinv(E[:2, :2]) @ E[:2, 2:]
    assert np.max(np.abs(red.entries - expected)) < 1e-9 * (1 + np.abs(E).max()) ** 2
    bad = BlockMatrix.square(["0", "1"], [1, 1], np.array([[0, 1], [0, 1]], dtype=complex))
    path = write(tmp_path, "bad.json", dumps(bad.to_json()))
    assert run(["schur", path, "--eliminate", "0"], capsys)[0] == 3
    assert run(["schur", write(tmp_path, "junk.json", "{}"), "--eliminate", "0"], capsys)[0] == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "slhnet", "reduce", LOOP, "--format", "table"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stdout.startswith("S =")
