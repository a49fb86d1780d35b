import io
import json
import subprocess
import sys

import pytest

from custats.cli import format_json, main, resolve_config, build_parser, run


def run_cli(*argv, cwd=None):
    proc = subprocess.run([sys.executable, "-m", "custats.cli", *argv], capture_output=True,
                          text=True, cwd=cwd)
    return proc.returncode, proc.stdout, proc.stderr


def test_count_word_from_file(tmp_path):
    (tmp_path / "t.txt").write_text("1010101\n")
    code, out, _ = run_cli("count", "--word", "101", "--gaps", "1,inf", "--text-file",
                           str(tmp_path / "t.txt"))
    assert code == 0
    doc = json.loads(out)
    # 1 at positions 1,3,5,7 and 0 at 2,4,6: the 1-0 pair must be adjacent
    assert doc["result"]["count"] == 3 + 2 + 1


def test_count_big_integer_is_exact(tmp_path):
    (tmp_path / "t.txt").write_text("1" * 200_000)
    code, out, _ = run_cli("count", "--word", "11", "--text-file", str(tmp_path / "t.txt"))
    assert code == 0
    assert json.loads(out)["result"]["count"] == 200_000 * 199_999 // 2


def test_moments_inversions():
    code, out, _ = run_cli("moments", "--perm", "21", "--gaps", "inf")
    assert code == 0
    res = json.loads(out)["result"]
    assert res["mu"]["exact"] == "1/2"
    assert res["sigma2"]["exact"] == "1/36"
    assert res["sigma2"]["value"] == pytest.approx(1 / 36, abs=1e-15)


def test_degeneracy_e0():
    code, out, _ = run_cli("degeneracy", "--example", "e0")
    assert code == 0
    res = json.loads(out)["result"]
    assert res["verdict"] == "degenerate"
    assert max(abs(v) for row in res["B"] for v in row) < 1e-12


def test_unknown_config_field_exits_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"command": "moments", "perm": "21", "colour": "red"}))
    code, _, err = run_cli("--config", str(cfg))
    assert code == 2 and "colour" in err


def test_invalid_input_exits_2():
    assert run_cli("count", "--word", "101", "--perm", "21", "--text", "1")[0] == 2
    assert run_cli("count", "--word", "11", "--gaps", "0", "--text", "11")[0] == 2
    assert run_cli("moments")[0] == 2
    assert run_cli()[0] == 2


def test_budget_failure_exits_3():
    code, _, err = run_cli("count", "--perm", "123", "--text", "", "--perm-values",
                           " ".join(str(i) for i in range(60)), "--budget", "10")
    assert code == 3 and "Budget" in err


def test_degenerate_clt_exits_3():
    code, _, err = run_cli("simulate", "--example", "e0", "--mode", "clt", "--reps", "10",
                           "--n-grid", "20")
    assert code == 3


def test_csv_round_trip_is_byte_identical(tmp_path):
    base = tmp_path / "a"
    code, digest, _ = run_cli("simulate", "--word", "11", "--reps", "50", "--n-grid", "32,64",
                              "--seed", "7", "--out", str(base))
    assert code == 0 and digest.startswith("custats simulate")
    first = (tmp_path / "a.csv").read_bytes()
    assert first.startswith(b"# config ")
    code, _, _ = run_cli("--config", str(tmp_path / "a.json"), "--out", str(tmp_path / "b"))
    assert code == 0
    assert (tmp_path / "b.csv").read_bytes() == first


def test_config_flags_override_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"command": "moments", "perm": "21", "seed": 3}))
    args = build_parser().parse_args(["--config", str(cfg), "--seed", "9"])
    resolved = resolve_config(args)
    assert resolved["seed"] == 9 and resolved["perm"] == "21"


def test_run_embeds_config():
    args = build_parser().parse_args(["moments", "--word", "01"])
    buf = io.StringIO()
    assert run(resolve_config(args), stdout=buf) == 0
    doc = json.loads(buf.getvalue())
    assert doc["config"]["word"] == "01" and doc["command"] == "moments"


def test_reals_use_17_significant_digits():
    assert format_json(0.1) == "0.10000000000000001"
    assert format_json(1 / 3) == "0.33333333333333331"
    assert format_json(2**70) == str(2**70)
    assert format_json(float("nan")) == "null"
    assert json.loads(format_json({"x": [1.5, float("inf")]})) == {"x": [1.5, "inf"]}


def test_main_returns_exit_code():
    assert main(["moments", "--perm", "21"]) == 0
