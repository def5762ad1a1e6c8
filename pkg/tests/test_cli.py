import json
import os

import pytest

from homlab.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main

BLOCK = """
[model]
kind = IndependentBlockLogNormal
block_side = 1
log_variance = 0.5
[grid]
d = 2
L = 8
[experiment]
N = 2
tol = 1e-10
"""


def _cfg(tmp_path, text=BLOCK):
    p = tmp_path / "cfg.ini"
    p.write_text(text)
    return str(p)


def _manifest(out, exp):
    (m,) = [f for f in os.listdir(out) if f.startswith(f"manifest-{exp}-")]
    return json.loads((out / m).read_text())


@pytest.mark.parametrize("exp", ["gen", "corrector", "radii", "sgcheck"])
def test_experiments_run(tmp_path, exp):
    out = tmp_path / "out"
    code = main([exp, "--config", _cfg(tmp_path), "--out", str(out), "--threads", "1"])
    assert code == EXIT_OK
    man = _manifest(out, exp)
    assert man["status"] == "ok" and man["files"]
    assert all(f.startswith(f"{exp}-{man['config_hash']}") for f in man["files"])


def test_twoscale_and_tails(tmp_path):
    text = ("[model]\nkind = Laminate\nvalues = 1,4\nperiod = 4\nrandom_phase = true\n[grid]\nd = 2\nL = 16\n"
            "[experiment]\nN = 1\nmacro_length = 2\ndeltas = 1/4, 1/8\n")
    out = tmp_path / "o"
    assert main(["twoscale", "--config", _cfg(tmp_path, text), "--out", str(out)]) == EXIT_OK
    out2 = tmp_path / "o2"
    with pytest.warns(UserWarning):
        assert main(["tails", "--config", _cfg(tmp_path), "--out", str(out2), "--threads", "1"]) == EXIT_OK


def test_deterministic_outputs_identical(tmp_path):
    cfg = _cfg(tmp_path)
    for d in ("a", "b"):
        assert main(["corrector", "--config", cfg, "--out", str(tmp_path / d), "--deterministic"]) == EXIT_OK
    files = sorted(f for f in os.listdir(tmp_path / "a") if not f.startswith("manifest"))
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_validation_error_exit(tmp_path, capsys):
    bad = BLOCK.replace("log_variance = 0.5", "log_variance = 0.5\np = 2\nq = 2")
    assert main(["corrector", "--config", _cfg(tmp_path, bad), "--out", str(tmp_path / "x")]) == EXIT_VALIDATION
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["class"] == "validation" and "moment" in rec["message"]


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["gen", "--config", _cfg(tmp_path), "--out", str(blocker / "sub")]) == EXIT_VALIDATION


def test_verify_and_fault_injection(tmp_path):
    assert main(["verify", "--out", str(tmp_path / "v")]) == EXIT_OK
    out = tmp_path / "f"
    assert main(["verify", "--inject-sigma-fault", "--out", str(out)]) == EXIT_NUMERICAL
    err = json.loads((out / "error.json").read_text())
    assert err["class"] == "numerical" and "sigma" in err["message"]
    assert _manifest(out, "verify")["exit_code"] == EXIT_NUMERICAL


def test_twoscale_rejects_smooth_model(tmp_path):
    text = "[model]\nkind = SmoothLogNormal\ncorrelation_length = 2\nlog_variance = 0.5\n[experiment]\ndeltas = 1/8\n"
    assert main(["twoscale", "--config", _cfg(tmp_path, text), "--out", str(tmp_path / "s")]) == EXIT_VALIDATION
