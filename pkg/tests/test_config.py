import pytest
from hypothesis import given, strategies as st

from homlab.config import ConfigError, load_config, parse_config

LAM = """
[model]
kind = Laminate
values = 1, 4
period = 4
random_phase = true
p = 4
q = 4
[grid]
d = 2
L = 32
[experiment]
kind = twoscale
N = 3
deltas = 1/8, 1/16
"""


def test_parse_laminate():
    cfg = parse_config(LAM)
    assert cfg.model.kind == "Laminate" and cfg.model.params["values"] == (1.0, 4.0)
    assert cfg.model.params["period"] == 4 and cfg.model.params["random_phase"] is True
    assert cfg.deltas == (0.125, 0.0625) and cfg.N == 3 and cfg.grid.L == 32


def test_overrides_and_hash():
    a = parse_config(LAM)
    b = parse_config(LAM, overrides={"out": "elsewhere", "threads": "4"})
    c = parse_config(LAM, overrides={"seed": "5"})
    assert a.hash() == b.hash() != c.hash()
    assert parse_config(LAM, experiment="corrector").experiment == "corrector"
    assert c.echo()["experiment"]["seed"] == 5


@pytest.mark.parametrize("patch,msg", [
    ("p = 2\nq = 2", "moment"),
    ("", None),
])
def test_moment_condition(patch, msg):
    text = f"[model]\nkind = IndependentBlockLogNormal\nblock_side = 1\nlog_variance = 1\n{patch}\n"
    if msg:
        with pytest.raises(ConfigError, match=msg):
            parse_config(text)
    else:
        assert parse_config(text).model.p == 4.0


@pytest.mark.parametrize("exp", ["beta = 1.0", "tol = -1", "N = 0", "C0 = 0", "M0 = 0.5", "K = soon",
                                 "deltas = 2", "kind = dance", "N = lots"])
def test_rejects_invalid_experiment_values(exp):
    with pytest.raises(ConfigError):
        parse_config(f"[experiment]\n{exp}\n")


def test_rejects_bad_model_and_grid():
    with pytest.raises(ConfigError):
        parse_config("[model]\nkind = Mystery\n")
    with pytest.raises(ConfigError):
        parse_config("[grid]\nL = 12\n")
    with pytest.raises(ConfigError):
        parse_config("not an ini file")
    with pytest.raises(ConfigError):
        load_config("/nonexistent/cfg.ini")


@given(st.floats(2.05, 40), st.floats(2.05, 40))
def test_valid_exponents_accepted(p, q):
    text = f"[model]\nkind = ConstantIdentity\np = {p!r}\nq = {q!r}\n"
    assert parse_config(text).model.p == p


def test_shipped_configs_parse():
    import glob
    import os
    here = os.path.join(os.path.dirname(__file__), "..", "configs")
    paths = sorted(glob.glob(os.path.join(here, "*.ini")))
    assert paths
    for p in paths:
        load_config(p)
