"""Declarative scenario schema and its YAML round trip.

A scenario document is a mapping with scalar top-level keys (``name``,
``kind``, ``seed``, ``n``, ``horizon``, ``dt``, ``log_every``) and nested
sections ``plant``, ``reference``, ``adaptive``, ``sliding``, ``disturbance``,
``initial`` and ``metrics``. Unknown keys and wrongly typed values are
rejected before anything is simulated. See ``docs/config.md`` for the field
reference.
"""

from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

__all__ = [
    "ConfigError",
    "Scenario",
    "apply_overrides",
    "dump_scenario",
    "load_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
]

SCENARIO_KINDS = ("baseline", "link_failure", "time_varying", "disturbance", "tracking", "synchronization")


class ConfigError(ValueError):
    """Scenario document failed schema or invariant validation.

    ``errors`` lists every problem found as ``"path: message"`` strings.
    """

    def __init__(self, errors):
        self.errors = list(errors) if not isinstance(errors, str) else [errors]
        super().__init__("; ".join(self.errors))


@dataclass
class PlantSpec:
    undirected: bool = True
    # explicit adjacency; random U(0,1) weights when omitted
    adjacency: list | None = None
    # [time, i, j, weight]; mirrored to (j, i) when undirected
    events: list = field(default_factory=list)
    # {i, j, kind, amplitude, period, phase, offset}; mirrored like events
    overrides: list = field(default_factory=list)
    # pins a_ij (and a_ji) before any event; used to reproduce the 0.56 link
    pinned: list = field(default_factory=list)


@dataclass
class ReferenceSpec:
    # pe_bank | harmonic | common_sinusoid | unit_step | zero
    signal: str = "pe_bank"
    omega0: float = 1.0
    # identity (A_m = -I) | consensus (A_m = -L of ``graph``)
    model: str = "identity"
    # ring | path | complete | explicit adjacency (list of lists)
    graph: typing.Any = "ring"
    pole: float = -1.0


@dataclass
class AdaptiveSpec:
    w_scale: float = 10.0
    # zero | matched (K(0) = K*, only meaningful in tests)
    k0: str = "zero"


@dataclass
class SlidingSpec:
    enabled: bool = False
    epsilon: float = 0.1
    delta: float = 1e-3
    # None selects rho = |P_s Gamma B| sqrt(m) d_max + epsilon
    rho: float | None = None


@dataclass
class DisturbanceSpec:
    # none | truncated_gauss | uniform
    kind: str = "none"
    sigma: float = 1.0
    bound: float | None = None
    lo: float = -1.0
    hi: float = 1.0
    hold: float | None = None


@dataclass
class InitialSpec:
    # gauss (x0 ~ N(0, I)) | reference (x0 = x_m0) | explicit list
    x0: typing.Any = "gauss"
    xm0: typing.Any = "zero"


@dataclass
class MetricSpec:
    link: list = field(default_factory=lambda: [0, 1])
    threshold: float = 0.2
    dwell: int = 50
    # trailing median window of the change detector, in logged samples
    window: int = 20000
    steady_fraction: float = 0.2
    # PE check window in time units; alpha = pe_alpha_rel * pe_window
    pe_window: float = 100.0
    pe_alpha_rel: float = 1e-6
    # thin exported tables to every k-th logged row
    csv_every: int = 10


@dataclass
class Scenario:
    name: str
    kind: str
    seed: int = 1
    n: int = 5
    horizon: float = 500.0
    dt: float = 1e-3
    log_every: int = 10
    description: str = ""
    figures: list = field(default_factory=list)
    plant: PlantSpec = field(default_factory=PlantSpec)
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    adaptive: AdaptiveSpec = field(default_factory=AdaptiveSpec)
    sliding: SlidingSpec = field(default_factory=SlidingSpec)
    disturbance: DisturbanceSpec = field(default_factory=DisturbanceSpec)
    initial: InitialSpec = field(default_factory=InitialSpec)
    metrics: MetricSpec = field(default_factory=MetricSpec)


_SECTIONS = {
    "plant": PlantSpec,
    "reference": ReferenceSpec,
    "adaptive": AdaptiveSpec,
    "sliding": SlidingSpec,
    "disturbance": DisturbanceSpec,
    "initial": InitialSpec,
    "metrics": MetricSpec,
}


def _check_type(path: str, value, annotation: str):
    """Loose runtime check against the (string) dataclass annotation."""
    ann = annotation.replace(" ", "")
    optional = ann.endswith("|None")
    base = ann[: -len("|None")] if optional else ann
    if value is None:
        return None if optional else f"{path}: must not be null"
    if base == "typing.Any":
        return None
    if base == "bool":
        return None if isinstance(value, bool) else f"{path}: expected a boolean"
    if base == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
        return None if ok else f"{path}: expected an integer"
    if base == "float":
        if isinstance(value, str):
            # YAML 1.1 reads exponent literals such as 1e-3 as strings
            try:
                value = float(value)
            except ValueError:
                return f"{path}: expected a number"
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok and math.isnan(float(value)):
            return f"{path}: NaN is not allowed"
        return None if ok else f"{path}: expected a number"
    if base == "str":
        return None if isinstance(value, str) else f"{path}: expected a string"
    if base == "list":
        return None if isinstance(value, list) else f"{path}: expected a list"
    return None


def _coerce(value, annotation: str):
    if value is not None and annotation.replace(" ", "").split("|")[0] == "float":
        return float(value)
    return value


def _build_section(cls, data, path, errors):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        errors.append(f"{path}: expected a mapping")
        return cls()
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            errors.append(f"{path}.{key}: unknown key")
            continue
        problem = _check_type(f"{path}.{key}", value, fields[key].type)
        if problem:
            errors.append(problem)
            continue
        kwargs[key] = _coerce(value, fields[key].type)
    return cls(**kwargs)


def scenario_from_dict(data: dict) -> Scenario:
    """Build a :class:`Scenario` from a plain mapping, validating the schema.

    Raises :class:`ConfigError` listing every problem.
    """
    if not isinstance(data, dict):
        raise ConfigError("scenario document must be a mapping")
    errors: list[str] = []
    top = {f.name: f for f in dataclasses.fields(Scenario)}
    kwargs = {}
    for key, value in data.items():
        if key not in top:
            errors.append(f"{key}: unknown key")
        elif key in _SECTIONS:
            kwargs[key] = _build_section(_SECTIONS[key], value, key, errors)
        else:
            problem = _check_type(key, value, top[key].type)
            if problem:
                errors.append(problem)
            else:
                kwargs[key] = _coerce(value, top[key].type)
    for required in ("name", "kind"):
        if required not in data:
            errors.append(f"{required}: required key missing")
    if errors:
        raise ConfigError(errors)
    sc = Scenario(**kwargs)
    errors.extend(_semantic_errors(sc))
    if errors:
        raise ConfigError(errors)
    return sc


def _semantic_errors(sc: Scenario) -> list[str]:
    errs = []
    if sc.kind not in SCENARIO_KINDS:
        errs.append(f"kind: unknown scenario kind {sc.kind!r}")
    if sc.n < 2:
        errs.append("n: need at least two nodes")
    if not sc.horizon > 0:
        errs.append("horizon: must be positive")
    if not sc.dt > 0:
        errs.append("dt: must be positive")
    if sc.log_every < 1:
        errs.append("log_every: must be at least 1")
    if sc.reference.signal not in ("pe_bank", "harmonic", "common_sinusoid", "unit_step", "zero"):
        errs.append(f"reference.signal: unknown signal {sc.reference.signal!r}")
    if sc.reference.model not in ("identity", "consensus"):
        errs.append(f"reference.model: unknown model {sc.reference.model!r}")
    if sc.adaptive.k0 not in ("zero", "matched"):
        errs.append(f"adaptive.k0: unknown initial gain {sc.adaptive.k0!r}")
    if not sc.adaptive.w_scale > 0:
        errs.append("adaptive.w_scale: must be positive (W = w_scale * I)")
    if sc.disturbance.kind not in ("none", "truncated_gauss", "uniform"):
        errs.append(f"disturbance.kind: unknown kind {sc.disturbance.kind!r}")
    if not sc.sliding.epsilon > 0:
        errs.append("sliding.epsilon: must be positive")
    if not sc.sliding.delta > 0:
        errs.append("sliding.delta: must be positive")
    if sc.sliding.rho is not None and not sc.sliding.rho > 0:
        errs.append("sliding.rho: must be positive or null for automatic selection")
    for k, ev in enumerate(sc.plant.events):
        if not (isinstance(ev, list) and len(ev) == 4):
            errs.append(f"plant.events[{k}]: expected [time, i, j, weight]")
        elif not all(0 <= int(v) < sc.n for v in ev[1:3]):
            errs.append(f"plant.events[{k}]: node index out of range")
    for k, ov in enumerate(sc.plant.overrides):
        if not isinstance(ov, dict) or not {"i", "j"} <= set(ov):
            errs.append(f"plant.overrides[{k}]: expected a mapping with i and j")
    ms = sc.metrics
    if len(ms.link) != 2 or not all(0 <= int(v) < sc.n for v in ms.link):
        errs.append("metrics.link: expected two node indices")
    if not ms.threshold > 0:
        errs.append("metrics.threshold: must be positive")
    if ms.dwell < 1 or ms.window < 1 or ms.csv_every < 1:
        errs.append("metrics: dwell, window and csv_every must be at least 1")
    if not 0 < ms.steady_fraction <= 1:
        errs.append("metrics.steady_fraction: must lie in (0, 1]")
    return errs


def scenario_to_dict(sc: Scenario) -> dict:
    return dataclasses.asdict(sc)


def dump_scenario(sc: Scenario, path=None) -> str:
    text = yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None)
    if path is not None:
        Path(path).write_text(text)
    return text


def load_scenario(path) -> Scenario:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    return scenario_from_dict(data)


def apply_overrides(sc: Scenario, overrides) -> Scenario:
    """Apply ``key=value`` strings (dotted keys, YAML-typed values).

    The result is re-validated as a whole, so a bad value surfaces as a
    :class:`ConfigError` before any computation.
    """
    data = scenario_to_dict(sc)
    errors = []
    for item in overrides:
        if "=" not in item:
            errors.append(f"{item}: expected key=value")
            continue
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                errors.append(f"{key}: unknown section {p!r}")
                node = None
                break
            node = node[p]
        if node is None:
            continue
        if parts[-1] not in node:
            errors.append(f"{key}: unknown key")
            continue
        node[parts[-1]] = value
    if errors:
        raise ConfigError(errors)
    return scenario_from_dict(data)
