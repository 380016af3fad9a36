import json
import logging
import shutil
from pathlib import Path

import pytest

from gexpect import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, obj, name="problem.json"):
    f = tmp_path / name
    f.write_text(json.dumps(obj))
    return str(f)


BASE = {"version": 1, "sigma_set": [0.25, 1.0], "times": [1.0], "payoff": "x1^2", "mc": {"seed": 0, "paths": 4096}}


def run_json(argv, capsys):
    code = cli.run(argv)
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == 0 and out else None)


def test_g_eval(tmp_path, capsys):
    code, rec = run_json(["g-eval", write(tmp_path, dict(BASE, matrix=[[-2.0]]))], capsys)
    assert code == 0
    assert rec["result"]["value"] == pytest.approx(-0.25)
    meta = rec["metadata"]
    assert {"schema_version", "version", "config_hash", "payload_sha256", "seed", "tolerances"} <= set(meta)


def test_moment(tmp_path, capsys):
    code, rec = run_json(["moment", write(tmp_path, dict(BASE, p=4, a=[1.0]))], capsys)
    assert code == 0 and rec["result"]["value"] == pytest.approx(3.0, rel=1e-10)


def test_expect_and_gap(tmp_path, capsys):
    f = write(tmp_path, BASE)
    code, rec = run_json(["expect", f], capsys)
    assert code == 0 and rec["result"]["value"] == pytest.approx(1.0, rel=1e-4)
    code, rec = run_json(["gap", f], capsys)
    assert code == 0
    assert rec["result"]["gap"] <= 5e-3


def test_scenario_capacity_norm(tmp_path, capsys):
    code, rec = run_json(["scenario-sup", write(tmp_path, BASE)], capsys)
    assert code == 0 and rec["result"]["argmax_label"].startswith("const[1]")
    cap = dict(BASE, event={"kind": "max_abs_exceeds", "level": 2.0}, family={"kind": "constant"})
    code, rec = run_json(["capacity", write(tmp_path, cap)], capsys)
    assert code == 0 and 0 < rec["result"]["value"] < 0.2
    code, rec = run_json(["norm", write(tmp_path, dict(BASE, payoff="x1", p=2))], capsys)
    assert code == 0 and rec["result"]["value"] == pytest.approx(1.0, abs=0.05)


def test_check_commands(capsys):
    code, rec = run_json(["check-axioms", str(CONFIGS / "axioms.json")], capsys)
    assert code == 0 and rec["result"]["ok"]
    code, rec = run_json(["check-scaling", str(CONFIGS / "x4.json")], capsys)
    assert code == 0 and rec["result"]["ok"]


def test_mollify_config(tmp_path, capsys):
    for name in ("mollify.json", "omega.csv"):
        shutil.copy(CONFIGS / name, tmp_path / name)
    code, rec = run_json(["mollify", str(tmp_path / "mollify.json")], capsys)
    assert code == 0
    assert 0.0 <= rec["result"]["value"] <= rec["result"]["x_omega"]


def test_pipeline_constant(tmp_path, capsys):
    prob = dict(BASE, functional={"kind": "constant", "c": 0.5}, eps=0.01)
    code, rec = run_json(["approx-pipeline", write(tmp_path, prob)], capsys)
    assert code == 0 and rec["result"]["success"]


def test_budget_exit(tmp_path):
    prob = dict(BASE, functional={"kind": "sup_indicator", "level": 1.0}, eps=1e-3,
                pipeline={"mu_schedule": [1, 2], "steps": 32, "n_paths": 256, "n_validate": 256, "bank_size": 8})
    out = tmp_path / "out.json"
    assert cli.run(["approx-pipeline", write(tmp_path, prob), "-o", str(out)]) == 3
    assert not out.exists()


def test_capability_exit(tmp_path):
    prob = dict(BASE, sigma_set={"d": 3, "matrices": [[[1, 0, 0], [0, 1, 0], [0, 0, 1]]]}, payoff="x1_1")
    out = tmp_path / "out.json"
    assert cli.run(["expect", write(tmp_path, prob), "-o", str(out)]) == 4
    assert not out.exists()


@pytest.mark.parametrize("problem", [
    dict(BASE, payoff="x0 + 1"),
    dict(BASE, payoff="x1 +"),
    dict(BASE, times=[2.0, 1.0]),
    dict(BASE, sigma_set=[-1.0]),
    dict(BASE, version="one"),
    {k: v for k, v in BASE.items() if k != "sigma_set"},
])
def test_input_errors(tmp_path, problem, caplog):
    out = tmp_path / "out.json"
    assert cli.run(["expect", write(tmp_path, problem), "-o", str(out)]) == 2
    assert not out.exists()
    assert any(r.levelno >= logging.ERROR for r in caplog.records)


def test_missing_and_malformed_file(tmp_path):
    assert cli.run(["expect", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.run(["expect", str(bad)]) == 2


def test_byte_identical(tmp_path):
    f = write(tmp_path, BASE)
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.run(["gap", f, "-o", str(a)]) == 0
    assert cli.run(["gap", f, "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_seed_changes_hash(tmp_path, capsys):
    f = write(tmp_path, BASE)
    _, r0 = run_json(["scenario-sup", f, "--seed", "1"], capsys)
    _, r1 = run_json(["scenario-sup", f, "--seed", "2"], capsys)
    assert r0["metadata"]["seed"] == 1 and r1["metadata"]["seed"] == 2
    assert r0["metadata"]["config_hash"] != r1["metadata"]["config_hash"]


def test_seed_notice(tmp_path, caplog):
    prob = {k: v for k, v in BASE.items() if k != "mc"}
    with caplog.at_level(logging.INFO, logger="gexpect"):
        assert cli.run(["expect", write(tmp_path, prob), "-o", str(tmp_path / "o.json")]) == 0
    assert any("seed 0" in r.getMessage() for r in caplog.records)


def test_csv_output_with_sidecar(tmp_path):
    prob = dict(BASE, family={"kind": "piecewise", "level": 1})
    out = tmp_path / "rows.csv"
    assert cli.run(["scenario-sup", write(tmp_path, prob), "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("scenario") and len(lines) == 1 + 4
    meta = json.loads((tmp_path / "rows.csv.meta.json").read_text())
    assert meta["command"] == "scenario-sup" and "payload_sha256" in meta["metadata"]
    flat = tmp_path / "flat.csv"
    assert cli.run(["expect", write(tmp_path, BASE), "-o", str(flat)]) == 0
    assert flat.read_text().splitlines()[0] == "key,value"


def test_overrides(tmp_path, capsys):
    f = write(tmp_path, BASE)
    code, rec = run_json(["expect", f, "--set", "payoff=\"x1^4\""], capsys)
    assert code == 0 and rec["result"]["value"] == pytest.approx(3.0, rel=1e-3)
    code, rec = run_json(["expect", f, "--set", "sigma_set=[1.0]", "--set", "payoff=\"-x1^2\""], capsys)
    assert rec["result"]["value"] == pytest.approx(-1.0, rel=1e-3)
    assert cli.run(["expect", f, "--set", "novalue"]) == 2


def test_main_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr("sys.argv", ["gexpect", "expect", str(tmp_path / "missing.json")])
    with pytest.raises(SystemExit) as exc:
        cli.main()
    assert exc.value.code == 2
