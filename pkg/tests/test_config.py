import math

import pytest
import yaml

from netmrac.config import (
    ConfigError,
    Scenario,
    apply_overrides,
    dump_scenario,
    load_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from netmrac.scenarios import CATALOG, get_scenario


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_catalog_round_trip(tmp_path, name):
    sc = get_scenario(name, seed=7)
    path = tmp_path / "sc.yaml"
    dump_scenario(sc, path)
    assert load_scenario(path) == sc


def test_round_trip_keeps_infinity(tmp_path):
    sc = apply_overrides(get_scenario("time_varying"), ["horizon=inf"])
    assert math.isinf(sc.horizon)
    path = tmp_path / "sc.yaml"
    dump_scenario(sc, path)
    assert load_scenario(path).horizon == math.inf


def test_minimal_document_uses_defaults():
    sc = scenario_from_dict({"name": "x", "kind": "baseline"})
    assert sc == Scenario(name="x", kind="baseline")
    assert sc.dt == 1e-3 and sc.adaptive.w_scale == 10.0


def test_exponent_string_is_a_number(tmp_path):
    path = tmp_path / "sc.yaml"
    path.write_text("name: x\nkind: baseline\ndt: 1e-3\nsliding: {delta: 5e-4}\n")
    # PyYAML reads these literals as strings
    assert yaml.safe_load(path.read_text())["dt"] == "1e-3"
    sc = load_scenario(path)
    assert sc.dt == 1e-3 and isinstance(sc.dt, float)
    assert sc.sliding.delta == 5e-4


def test_unknown_keys_are_listed():
    with pytest.raises(ConfigError) as info:
        scenario_from_dict({"name": "x", "kind": "baseline", "horizn": 5, "adaptive": {"gamma": 1}})
    assert set(info.value.errors) == {"horizn: unknown key", "adaptive.gamma: unknown key"}


@pytest.mark.parametrize("doc,needle", [
    ({"seed": 1.5}, "seed: expected an integer"),
    ({"seed": True}, "seed: expected an integer"),
    ({"horizon": "long"}, "horizon: expected a number"),
    ({"dt": float("nan")}, "dt: NaN"),
    ({"sliding": {"enabled": "yes"}}, "sliding.enabled: expected a boolean"),
    ({"plant": [1, 2]}, "plant: expected a mapping"),
    ({"metrics": {"link": 3}}, "metrics.link: expected a list"),
    ({"name": None}, "name: must not be null"),
])
def test_type_errors(doc, needle):
    base = {"name": "x", "kind": "baseline"}
    with pytest.raises(ConfigError) as info:
        scenario_from_dict({**base, **doc})
    assert any(needle in e for e in info.value.errors)


def test_missing_required_keys():
    with pytest.raises(ConfigError) as info:
        scenario_from_dict({"seed": 1})
    assert "name: required key missing" in info.value.errors
    assert "kind: required key missing" in info.value.errors


@pytest.mark.parametrize("override,needle", [
    ("kind=other", "unknown scenario kind"),
    ("n=1", "two nodes"),
    ("horizon=0", "horizon"),
    ("dt=-1e-3", "dt"),
    ("adaptive.w_scale=0", "w_scale"),
    ("sliding.delta=0", "sliding.delta"),
    ("sliding.rho=-1", "sliding.rho"),
    ("reference.signal=chirp", "unknown signal"),
    ("disturbance.kind=cauchy", "disturbance.kind"),
    ("metrics.link=[0, 9]", "metrics.link"),
    ("metrics.steady_fraction=1.5", "steady_fraction"),
    ("plant.events=[[1.0, 0, 7, 0.0]]", "out of range"),
])
def test_semantic_errors(override, needle):
    with pytest.raises(ConfigError) as info:
        apply_overrides(get_scenario("baseline"), [override])
    assert any(needle in e for e in info.value.errors)


def test_overrides_parse_values():
    sc = apply_overrides(get_scenario("disturbance_robust"),
                         ["sliding.delta=1e-2", "adaptive.w_scale=5", "seed=3", "sliding.rho=null"])
    assert sc.sliding.delta == 0.01 and sc.adaptive.w_scale == 5.0 and sc.seed == 3
    assert sc.sliding.rho is None


def test_overrides_do_not_mutate_input():
    sc = get_scenario("baseline")
    before = scenario_to_dict(sc)
    apply_overrides(sc, ["horizon=10", "metrics.threshold=0.3"])
    assert scenario_to_dict(sc) == before


@pytest.mark.parametrize("bad", ["horizon", "nosuch=1", "plant.nosuch=1", "nosection.key=1"])
def test_bad_override_syntax(bad):
    with pytest.raises(ConfigError):
        apply_overrides(get_scenario("baseline"), [bad])


def test_invalid_yaml(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("name: [unclosed\n")
    with pytest.raises(ConfigError, match="not valid YAML"):
        load_scenario(path)
