"""Seeded experiment catalog, metrics and change detection.

Each catalog entry returns a :class:`~netmrac.config.Scenario`; :func:`build`
turns it into concrete plant/reference/controller objects and
:func:`run_and_report` integrates it and computes its metrics. Random inputs
come from independent child streams of the scenario seed (network 1,
reference 2, reference graph 3, run 4), so e.g. swapping the reference keeps
the network and the disturbance realization unchanged.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .adaptive import (
    AdaptiveConfig,
    LyapunovDiagnostics,
    SlidingConfig,
    TrajectoryLog,
    lyapunov_diagnostics,
    make_sliding_config,
    matched_gain,
    matched_gain_series,
    run_closed_loop,
)
from .config import ConfigError, Scenario
from .network import (
    DisturbanceModel,
    NetworkSystem,
    ReferenceModel,
    ReferenceSignal,
    Waveform,
    WeightSchedule,
    check_pe,
    design_reference,
    gen_random_network,
    is_connected,
    laplacian,
    pe_sinusoid_bank,
    structured_sinusoid_bank,
)
from .numerics import DesignError, RngStream

__all__ = [
    "CATALOG",
    "BuiltScenario",
    "DetectionEvent",
    "MetricReport",
    "build",
    "detect_changes",
    "get_scenario",
    "run_and_report",
    "scenario_baseline",
    "scenario_disturbance",
    "scenario_link_failure",
    "scenario_synchronization",
    "scenario_time_varying",
    "scenario_tracking",
    "simulate",
    "compute_metrics",
    "validate",
]

PAPER_LINK_WEIGHT = 0.56


# --------------------------------------------------------------------------
# catalog
# --------------------------------------------------------------------------


def scenario_baseline(seed: int = 1) -> Scenario:
    return Scenario(
        name="baseline", kind="baseline", seed=seed, horizon=500.0,
        description="identify a random 5-node undirected network under a PE sinusoid bank",
        figures=["fig1"],
    )


def scenario_link_failure(seed: int = 1, t_fail: float = 250.0, link=(0, 1),
                          pre_weight: float | None = PAPER_LINK_WEIGHT) -> Scenario:
    """Baseline network whose ``link`` weight steps to zero at ``t_fail``.

    ``pre_weight`` pins the link before the failure (0.56 reproduces the
    step size of the published run); ``None`` keeps the random weight.
    """
    i, j = map(int, link)
    sc = scenario_baseline(seed)
    sc.name, sc.kind, sc.figures = "link_failure", "link_failure", ["fig3"]
    sc.description = f"link ({i},{j}) fails at t={t_fail:g}; detect it from the estimate"
    sc.plant.events = [[float(t_fail), i, j, 0.0]]
    if pre_weight is not None:
        sc.plant.pinned = [[i, j, float(pre_weight)]]
    sc.metrics.link = [i, j]
    return sc


def scenario_time_varying(seed: int = 1, amplitude: float = PAPER_LINK_WEIGHT,
                          period: float = 800.0, link=(0, 1)) -> Scenario:
    """Link weight ``amplitude * cos^2(2 pi t / period)``."""
    i, j = map(int, link)
    sc = scenario_baseline(seed)
    sc.name, sc.kind, sc.figures = "time_varying", "time_varying", ["fig4"]
    sc.horizon = 1600.0
    sc.description = f"track a_{i}{j}(t) = {amplitude:g} cos^2(2 pi t / {period:g})"
    sc.plant.overrides = [{"i": i, "j": j, "kind": "cos2", "amplitude": float(amplitude),
                           "period": float(period), "phase": 0.0, "offset": 0.0}]
    sc.metrics.link = [i, j]
    return sc


def scenario_disturbance(seed: int = 1, robust: bool = True) -> Scenario:
    sc = scenario_baseline(seed)
    sc.name = "disturbance_robust" if robust else "disturbance_plain"
    sc.kind = "disturbance"
    sc.figures = ["fig6"] if robust else ["fig5"]
    sc.description = (
        "truncated N(0,1) input disturbance, "
        + ("sliding-mode rejection" if robust else "plain adaptive law")
    )
    sc.disturbance.kind = "truncated_gauss"
    sc.sliding.enabled = bool(robust)
    return sc


def scenario_tracking(seed: int = 1) -> Scenario:
    sc = scenario_baseline(seed)
    sc.name, sc.kind, sc.figures = "tracking", "tracking", ["fig7"]
    sc.horizon = 100.0
    sc.description = "track a common (not PE) sinusoid under disturbance with sliding mode"
    sc.reference.signal = "common_sinusoid"
    sc.disturbance.kind = "truncated_gauss"
    sc.sliding.enabled = True
    sc.metrics.pe_window = 20.0
    return sc


def scenario_synchronization(seed: int = 1) -> Scenario:
    sc = scenario_baseline(seed)
    sc.name, sc.kind, sc.figures = "synchronization", "synchronization", ["fig8"]
    sc.horizon = 50.0
    sc.description = "consensus-filter reference with unit-step input: nodes agree on the unit ramp"
    sc.reference.model = "consensus"
    sc.reference.graph = "ring"
    sc.reference.signal = "unit_step"
    sc.metrics.pe_window = 10.0
    return sc


CATALOG = {
    "baseline": (scenario_baseline, "fig1", "estimate all weights of a random network"),
    "link_failure": (scenario_link_failure, "fig3", "detect an abrupt failure of link (1,2)"),
    "time_varying": (scenario_time_varying, "fig4", "track a slowly varying link weight"),
    "disturbance_plain": (lambda seed=1: scenario_disturbance(seed, robust=False), "fig5",
                          "identification under input disturbance, no rejection"),
    "disturbance_robust": (lambda seed=1: scenario_disturbance(seed, robust=True), "fig6",
                           "identification under input disturbance with sliding mode"),
    "tracking": (scenario_tracking, "fig7", "node tracking with disturbance rejection"),
    "synchronization": (scenario_synchronization, "fig8", "dynamic synchronization to a ramp"),
}


def get_scenario(name: str, seed: int = 1) -> Scenario:
    try:
        factory = CATALOG[name][0]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {', '.join(CATALOG)}") from None
    return factory(seed)


# --------------------------------------------------------------------------
# build
# --------------------------------------------------------------------------


@dataclass
class BuiltScenario:
    scenario: Scenario
    plant: NetworkSystem
    ref: ReferenceModel
    cfg: AdaptiveConfig
    scfg: SlidingConfig | None
    rng: RngStream
    x0: np.ndarray | None
    xm0: np.ndarray | None


def _reference_graph(spec, n: int, rng: RngStream) -> np.ndarray:
    g = spec.graph
    if isinstance(g, list):
        adj = np.array(g, dtype=float)
        if adj.shape != (n, n):
            raise DesignError(f"reference graph must be {n}x{n}")
        return adj
    adj = np.zeros((n, n))
    if g == "ring":
        pairs = [(i, (i + 1) % n) for i in range(n)]
    elif g == "path":
        pairs = [(i, i + 1) for i in range(n - 1)]
    elif g == "complete":
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    else:
        raise DesignError(f"unknown reference graph {g!r}")
    w = rng.uniforms(len(pairs))
    for (i, j), wij in zip(pairs, w):
        adj[i, j] = adj[j, i] = wij
    return adj


def _signal(spec, n: int, rng: RngStream) -> ReferenceSignal:
    kind = spec.signal
    if kind == "pe_bank":
        return pe_sinusoid_bank(n, rng)
    if kind == "harmonic":
        return structured_sinusoid_bank(n, spec.omega0)
    if kind == "common_sinusoid":
        amp, freq = rng.uniform(1.0, 2.0), rng.uniform(1.0, 2.0)
        return ReferenceSignal("sinusoid", amplitudes=np.full(n, amp), frequencies=np.full(n, freq))
    if kind == "unit_step":
        return ReferenceSignal("step", levels=np.ones(n))
    return ReferenceSignal("step", levels=np.zeros(n))


def _plant(sc: Scenario, rng: RngStream) -> NetworkSystem:
    ps = sc.plant
    if ps.adjacency is not None:
        a = np.array(ps.adjacency, dtype=float)
        if a.shape != (sc.n, sc.n):
            raise DesignError(f"plant.adjacency must be {sc.n}x{sc.n}")
    else:
        a = gen_random_network(sc.n, rng, undirected=ps.undirected).a.copy()
    mirror = ps.undirected

    def both(i, j):
        return [(i, j), (j, i)] if mirror and i != j else [(i, j)]

    for i, j, w in ps.pinned:
        for p, q in both(int(i), int(j)):
            a[p, q] = float(w)
    events = []
    for t, i, j, w in sorted(ps.events, key=lambda ev: float(ev[0])):
        events += [(float(t), p, q, float(w)) for p, q in both(int(i), int(j))]
    overrides = []
    for ov in ps.overrides:
        wf = Waveform(
            kind=ov.get("kind", "cos2"), amplitude=float(ov.get("amplitude", 0.0)),
            period=float(ov.get("period", 1.0)), phase=float(ov.get("phase", 0.0)),
            offset=float(ov.get("offset", 0.0)),
        )
        overrides += [(p, q, wf) for p, q in both(int(ov["i"]), int(ov["j"]))]
    ds = sc.disturbance
    dist = DisturbanceModel(kind=ds.kind, sigma=ds.sigma, bound=ds.bound, lo=ds.lo, hi=ds.hi, hold=ds.hold)
    return NetworkSystem(WeightSchedule(a, tuple(events), tuple(overrides)), np.eye(sc.n), dist)


def build(sc: Scenario) -> BuiltScenario:
    """Instantiate a scenario; raises ``DesignError`` on invalid designs."""
    root = RngStream(sc.seed)
    n = sc.n
    plant = _plant(sc, root.spawn(1))
    signal = _signal(sc.reference, n, root.spawn(2))
    if sc.reference.model == "consensus":
        adj = _reference_graph(sc.reference, n, root.spawn(3))
        if not is_connected(adj):
            raise DesignError("consensus reference graph must be connected")
        a_m = -laplacian(adj)
    else:
        a_m = -np.eye(n)
    ref = design_reference(n, signal, a_m=a_m, pole=sc.reference.pole, b=plant.b)
    k0 = None
    if sc.adaptive.k0 == "matched":
        k0 = matched_gain(plant.a, ref.a_m, plant.b)
        if k0 is None:
            raise DesignError("matching condition infeasible; cannot start at K*")
    cfg = AdaptiveConfig(sc.adaptive.w_scale * np.eye(n), k0=k0,
                         mode="sliding" if sc.sliding.enabled else "plain")
    scfg = None
    if sc.sliding.enabled:
        scfg = make_sliding_config(plant.b, d_max=plant.disturbance.d_max, epsilon=sc.sliding.epsilon,
                                   delta=sc.sliding.delta, rho=sc.sliding.rho)

    def vec(v, name):
        if isinstance(v, list):
            arr = np.array(v, dtype=float)
            if arr.shape != (n,):
                raise DesignError(f"initial.{name} must have length {n}")
            return arr
        return None

    xm0 = vec(sc.initial.xm0, "xm0")
    x0 = vec(sc.initial.x0, "x0")
    if sc.initial.x0 == "reference":
        x0 = np.zeros(n) if xm0 is None else xm0.copy()
    return BuiltScenario(sc, plant, ref, cfg, scfg, root.spawn(4), x0, xm0)


def validate(sc: Scenario) -> list[str]:
    """Every build-time problem of ``sc`` as a list (empty when valid)."""
    try:
        build(sc)
    except (DesignError, ValueError) as exc:
        return getattr(exc, "errors", None) or [str(exc)]
    return []


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


@dataclass
class DetectionEvent:
    link: tuple
    time: float
    new_weight: float
    pre_weight: float
    true_time: float | None = None

    @property
    def latency(self) -> float | None:
        return None if self.true_time is None else self.time - self.true_time

    def as_dict(self) -> dict:
        return {
            "link": list(self.link), "time": self.time, "new_weight": self.new_weight,
            "pre_weight": self.pre_weight, "true_time": self.true_time, "latency": self.latency,
        }


def detect_changes(times, series, threshold: float = 0.2, dwell: int = 50, window: int = 20000,
                   link=(0, 1), true_time: float | None = None) -> list[DetectionEvent]:
    """Flag abrupt changes in a per-link estimate.

    The reference level is the median of the trailing ``window`` samples; the
    detector arms once that window is full. An event fires when the estimate
    stays more than ``threshold`` away from the reference for ``dwell``
    consecutive samples, and the detector re-arms only after the deviation
    has stayed below ``threshold / 2`` for ``dwell`` samples. The reported
    new weight is the reference level the next event departs from, or the
    final estimate for the last event.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if dwell < 1 or window < 1:
        raise ValueError("dwell and window must be at least 1")
    times = np.asarray(times, dtype=float)
    x = np.asarray(series, dtype=float)
    med = pd.Series(x).rolling(window, min_periods=window).median().to_numpy()
    dev = np.abs(x - med)
    hits = []
    armed = True
    above = below = 0
    for k in range(window - 1, x.size):
        if armed:
            above = above + 1 if dev[k] > threshold else 0
            if above >= dwell:
                hits.append((k, med[k - dwell + 1]))
                armed, above, below = False, 0, 0
        else:
            below = below + 1 if dev[k] < 0.5 * threshold else 0
            if below >= dwell:
                armed, below = True, 0
    events = []
    for n, (k, pre) in enumerate(hits):
        new = hits[n + 1][1] if n + 1 < len(hits) else x[-1]
        events.append(DetectionEvent(tuple(int(v) for v in link), float(times[k]),
                                     float(new), float(pre), true_time))
    return events


@dataclass
class MetricReport:
    """Metric series on the log's time grid plus windowed scalar summaries.

    ``scalars`` maps a name to ``{"value": ..., "window": [t0, t1]}``.
    """

    scenario: str
    seed: int
    times: np.ndarray
    series: dict = field(default_factory=dict)
    scalars: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    status: str = "ok"
    diverged_at: float | None = None
    log: TrajectoryLog | None = None
    diagnostics: LyapunovDiagnostics | None = None
    a_hat: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def scalar(self, name: str):
        return self.scalars[name]["value"]

    def summary(self) -> dict:
        return {
            "scenario": self.scenario, "seed": self.seed, "status": self.status,
            "diverged_at": self.diverged_at, "scalars": self.scalars,
            "events": [ev.as_dict() for ev in self.events], "meta": self.meta,
        }


def _steady_mask(times, fraction):
    t0 = times[0] + (1.0 - fraction) * (times[-1] - times[0])
    return times >= t0 - 1e-9, [float(t0), float(times[-1])]


def compute_metrics(bs: BuiltScenario, log: TrajectoryLog) -> MetricReport:
    sc = bs.scenario
    ms = sc.metrics
    ref, plant = bs.ref, bs.plant
    times = log.times
    i, j = map(int, ms.link)
    a_true = plant.schedule.a_many(times)
    a_hat = log.a_hat(ref.a_m, ref.b)
    a_norm = np.linalg.norm(a_true, axis=(1, 2))
    topo = np.linalg.norm(a_hat - a_true, axis=(1, 2)) / np.where(a_norm > 0, a_norm, np.nan)
    track = np.linalg.norm(log.e, axis=1)
    disp = log.x.max(axis=1) - log.x.min(axis=1)
    series = {
        "topology_error": topo, "tracking_error": track, "dispersion": disp,
        "link_estimate": a_hat[:, i, j], "link_true": a_true[:, i, j],
    }
    k_star = matched_gain_series(a_true, ref.a_m, ref.b)
    diag = lyapunov_diagnostics(log, ref, bs.cfg, bs.scfg, k_star=k_star)
    series["V"] = diag.v
    series["V_dot_fd"] = diag.v_dot_fd
    series["V_dot_model"] = diag.v_dot_model
    if diag.s_norm is not None:
        series["s_norm"] = diag.s_norm
        series["reaching_bound"] = diag.reaching_bound

    steady, win = _steady_mask(times, ms.steady_fraction)
    full = [float(times[0]), float(times[-1])]
    final = [float(times[-1]), float(times[-1])]
    sc_ = {}

    def put(name, value, window):
        sc_[name] = {"value": None if value is None else float(value), "window": window}

    put("final_topology_error", topo[-1], final)
    put("final_tracking_error", track[-1], final)
    put("steady_max_tracking_error", track[steady].max(), win)
    put("steady_link_std", a_hat[steady, i, j].std(), win)
    put("steady_link_sup_error", np.abs(a_hat[steady, i, j] - a_true[steady, i, j]).max(), win)
    put("steady_max_dispersion", disp[steady].max(), win)
    put("max_v_increase", np.max(np.diff(diag.v), initial=0.0), full)
    if diag.reaching_bound is not None:
        out = diag.outside_layer
        frac = float((diag.reaching_bound[out] <= 0).mean()) if out.any() else 1.0
        put("reaching_fraction", frac, full)
        put("outside_layer_samples", int(out.sum()), full)

    pe_window = min(ms.pe_window, times[-1] - times[0])
    try:
        pe = check_pe(times, log.x_m, pe_window, ms.pe_alpha_rel * pe_window)
    except ValueError:
        # a partial log too short for one window cannot show excitation
        pe = None
    put("pe_min_eig", None if pe is None else pe.min_eig_over_windows, full)
    sc_["pe_satisfied"] = {"value": pe is not None and bool(pe.satisfied), "window": full}

    true_time = None
    evs = sorted({ev[0] for ev in plant.schedule.events if (ev[1], ev[2]) == (i, j)})
    if evs:
        true_time = evs[0]
    events = detect_changes(times, a_hat[:, i, j], ms.threshold, ms.dwell, ms.window, (i, j), true_time)
    if true_time is not None:
        before = times < true_time
        put("pre_change_estimate", a_hat[before, i, j][-1] if before.any() else None, [full[0], true_time])
        put("pre_change_true", a_true[before, i, j][-1] if before.any() else None, [full[0], true_time])
        put("post_change_estimate", a_hat[-1, i, j], final)
        put("post_change_true", a_true[-1, i, j], final)
    if sc.kind == "synchronization":
        ramp = np.abs(log.x - times[:, None]).max(axis=1)
        series["ramp_deviation"] = ramp
        put("steady_max_ramp_deviation", ramp[steady].max(), win)
        d_s = disp[steady]
        put("steady_dispersion_max_rise", np.max(np.diff(d_s), initial=0.0), win)

    return MetricReport(
        scenario=sc.name, seed=sc.seed, times=times, series=series, scalars=sc_, events=events,
        status="diverged" if log.diverged else "ok", diverged_at=log.diverged_at,
        log=log, diagnostics=diag, a_hat=a_hat,
        meta={"kind": sc.kind, "figures": list(sc.figures), "run": log.meta,
              "true_adjacency": plant.a.tolist(), "reference": ref.r.describe()},
    )


def simulate(sc: Scenario) -> tuple[BuiltScenario, TrajectoryLog]:
    bs = build(sc)
    log = run_closed_loop(
        bs.plant, bs.ref, bs.cfg, sc.horizon, dt=sc.dt, rng=bs.rng, scfg=bs.scfg,
        x0=bs.x0, xm0=bs.xm0, log_every=sc.log_every,
    )
    return bs, log


def run_and_report(sc: Scenario, out_dir=None, formats=("csv", "summary"), figures: bool = True) -> MetricReport:
    """Simulate ``sc``, compute its metrics and (optionally) write exports.

    A diverged run still yields a report, with ``status == "diverged"`` and
    metrics over the partial log.
    """
    from . import export

    if not isinstance(sc, Scenario):
        raise ConfigError("run_and_report expects a Scenario")
    bs, log = simulate(sc)
    report = compute_metrics(bs, log)
    if out_dir is not None:
        report.meta["files"] = export.write_all(report, sc, out_dir, formats=formats, figures=figures)
    return report


def with_changes(sc: Scenario, **top) -> Scenario:
    """Deep copy of ``sc`` with top-level fields replaced."""
    out = copy.deepcopy(sc)
    for k, v in top.items():
        setattr(out, k, v)
    return out


def horizon_steps(sc: Scenario) -> int:
    return int(math.ceil(sc.horizon / sc.dt))
