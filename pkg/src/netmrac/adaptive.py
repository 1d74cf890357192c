"""Adaptive identifier/controller and its sliding-mode robustification.

The controller drives the plant ``x' = A x + B (u + d)`` toward the reference
``x_m' = A_m x_m + B r`` with

    u = K x + L* e + r                         (plain)
    u = K x + L* e + r - rho M sat(s)          (sliding)

and adapts ``K`` with ``K' = -W^-1 B^T P e x^T`` (plain) or
``K' = -W^-1 B^T Gamma^T P_s s x^T`` (sliding), where ``e = x - x_m`` and
``s = Gamma e - z`` with ``z' = Gamma (A_m + B L*) e``. Once ``K`` settles
the topology estimate is ``A_m - B K``.

The controller never reads ``A``: the plant enters only through the state
derivative. ``A`` is used by the test harness for ground truth (``K*``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernel
from .network import DisturbanceSignal, NetworkSystem, ReferenceModel, sample_disturbance
from .numerics import DesignError, IntegrationDiverged, RngStream, rk4_step, step_grid

__all__ = [
    "AdaptiveConfig",
    "ClosedLoopState",
    "LyapunovDiagnostics",
    "SlidingConfig",
    "TopologyEstimate",
    "TrajectoryLog",
    "lyapunov_diagnostics",
    "make_sliding_config",
    "matched_gain",
    "matched_gain_series",
    "plain_rhs",
    "recover_topology",
    "run_closed_loop",
    "sat",
    "sliding_rhs",
    "sliding_surface",
]


def _is_spd(a) -> bool:
    a = np.asarray(a, dtype=float)
    return (
        a.ndim == 2
        and a.shape[0] == a.shape[1]
        and np.array_equal(a, a.T)
        and np.linalg.eigvalsh(a).min() > 0
    )


@dataclass(frozen=True)
class AdaptiveConfig:
    """Adaptation weight ``W`` (m x m, SPD) and initial gain ``K(0)`` (m x n)."""

    w: np.ndarray
    k0: np.ndarray | None = None
    mode: str = "plain"

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if not _is_spd(w):
            raise DesignError("W must be symmetric positive definite")
        if self.mode not in ("plain", "sliding"):
            raise ValueError(f"unknown adaptation mode {self.mode!r}")
        object.__setattr__(self, "w", w)
        if self.k0 is not None:
            object.__setattr__(self, "k0", np.array(self.k0, dtype=float))

    def initial_gain(self, n: int) -> np.ndarray:
        m = self.w.shape[0]
        if self.k0 is None:
            return np.zeros((m, n))
        if self.k0.shape != (m, n):
            raise ValueError(f"K(0) must be {m}x{n}")
        return self.k0.copy()


@dataclass(frozen=True)
class SlidingConfig:
    """Sliding-surface parameters; build with :func:`make_sliding_config`."""

    gamma: np.ndarray
    p_s: np.ndarray
    rho: float
    epsilon: float
    delta: float
    m_mat: np.ndarray
    rho_auto: bool = True
    d_max: float = 0.0

    @property
    def gain_norm(self) -> float:
        """Spectral norm of ``P_s Gamma B`` (= inverse of M)."""
        return float(np.linalg.norm(np.linalg.inv(self.m_mat), 2))


def make_sliding_config(
    b,
    d_max: float = 0.0,
    gamma=None,
    p_s=None,
    epsilon: float = 0.1,
    delta: float = 1e-3,
    rho: float | None = None,
) -> SlidingConfig:
    """Validate sliding-mode parameters and derive ``M`` and ``rho``.

    ``gamma`` defaults to ``I`` when ``B`` is the identity and to ``B^T``
    otherwise; ``p_s`` defaults to ``I``. With ``rho=None`` the switching gain
    is ``|P_s Gamma B|_2 * sqrt(m) * d_max + epsilon``, i.e. the worst case of
    the per-channel bound ``d_max`` measured in the 2-norm.
    """
    b = np.asarray(b, dtype=float)
    n, m = b.shape
    if gamma is None:
        gamma = np.eye(n) if np.array_equal(b, np.eye(n)) else b.T
    gamma = np.array(gamma, dtype=float)
    p_s = np.eye(m) if p_s is None else np.array(p_s, dtype=float)
    if gamma.shape != (m, n):
        raise ValueError(f"Gamma must be {m}x{n}")
    if np.linalg.matrix_rank(gamma) < min(m, n):
        raise DesignError("Gamma must have full rank")
    if p_s.shape != (m, m) or not _is_spd(p_s):
        raise DesignError("P_s must be an m x m symmetric positive definite matrix")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not delta > 0:
        raise ValueError("boundary-layer width must be positive")
    if d_max < 0:
        raise ValueError("d_max must be nonnegative")
    pgb = p_s @ gamma @ b
    if np.linalg.matrix_rank(pgb) < m:
        raise DesignError("P_s Gamma B is singular")
    m_mat = np.linalg.inv(pgb)
    if np.abs(pgb @ m_mat - np.eye(m)).max() > 1e-12:
        raise DesignError("M = (P_s Gamma B)^-1 is ill-conditioned")
    auto = rho is None
    if auto:
        rho = np.linalg.norm(pgb, 2) * math.sqrt(m) * d_max + epsilon
    elif not rho > 0:
        raise ValueError("rho must be positive")
    return SlidingConfig(gamma, p_s, float(rho), float(epsilon), float(delta), m_mat, auto, float(d_max))


@dataclass
class ClosedLoopState:
    """Plant state, reference state, gain and (sliding mode) surface integral."""

    x: np.ndarray
    x_m: np.ndarray
    k: np.ndarray
    z: np.ndarray | None = None

    @property
    def e(self) -> np.ndarray:
        return self.x - self.x_m

    def pack(self) -> np.ndarray:
        parts = [self.x, self.x_m, self.k.ravel()]
        if self.z is not None:
            parts.append(self.z)
        return np.concatenate(parts).astype(float)

    @classmethod
    def unpack(cls, y, n: int, m: int, sliding: bool) -> "ClosedLoopState":
        y = np.asarray(y, dtype=float)
        k = y[2 * n: 2 * n + m * n].reshape(m, n)
        z = y[2 * n + m * n:].copy() if sliding else None
        return cls(y[:n].copy(), y[n: 2 * n].copy(), k.copy(), z)


@dataclass(frozen=True)
class TopologyEstimate:
    a_hat: np.ndarray
    recoverable_mask: np.ndarray
    residual_norm: float


def matched_gain(a, a_m, b, tol: float = 1e-9) -> np.ndarray | None:
    """Least-squares solution of ``B K = A_m - A``; ``None`` if it is inexact.

    Ground truth for tests and diagnostics only; the controller never uses it.
    """
    a = np.asarray(a, dtype=float)
    a_m = np.asarray(a_m, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != a_m.shape or b.shape[0] != a.shape[0]:
        raise ValueError("inconsistent dimensions")
    target = a_m - a
    k, *_ = np.linalg.lstsq(b, target, rcond=None)
    if np.linalg.norm(b @ k - target) > tol:
        return None
    return k


def matched_gain_series(a_series, a_m, b) -> np.ndarray:
    """``matched_gain`` at each time of an ``(L, n, n)`` adjacency series.

    Raises ``DesignError`` if matching fails anywhere.
    """
    a_series = np.asarray(a_series, dtype=float)
    b = np.asarray(b, dtype=float)
    pinv = np.linalg.pinv(b)
    target = np.asarray(a_m, dtype=float)[None] - a_series
    k = np.einsum("mn,lnj->lmj", pinv, target)
    resid = np.linalg.norm(np.einsum("nm,lmj->lnj", b, k) - target, axis=(1, 2))
    if resid.max(initial=0.0) > 1e-9:
        raise DesignError("matching condition A + B K* = A_m is infeasible")
    return k


def recover_topology(k, a_m, b) -> TopologyEstimate:
    """Topology estimate ``A_m - B K``.

    Row ``i`` is recoverable only if the unit vector ``e_i`` lies in the range
    of ``B``; entries of other rows are set to NaN and masked out.
    """
    k = np.asarray(k, dtype=float)
    a_m = np.asarray(a_m, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a_m.shape[0]
    if b.shape[0] != n or k.shape != (b.shape[1], n):
        raise ValueError("inconsistent dimensions")
    proj = b @ np.linalg.pinv(b)
    row_ok = np.linalg.norm(np.eye(n) - proj, axis=0) < 1e-9
    mask = np.repeat(row_ok[:, None], n, axis=1)
    a_hat = a_m - b @ k
    resid = float(np.linalg.norm((b @ k - (a_m - a_hat))[row_ok]))
    a_hat = np.where(mask, a_hat, np.nan)
    return TopologyEstimate(a_hat, mask, resid)


def sat(s, delta: float) -> np.ndarray:
    """Boundary-layer replacement for ``s/|s|``."""
    s = np.asarray(s, dtype=float)
    ns = float(np.linalg.norm(s))
    return s / ns if ns > delta else s / delta


def sliding_surface(state: ClosedLoopState, scfg: SlidingConfig) -> np.ndarray:
    """``s = Gamma e - z`` where ``z`` integrates ``Gamma (A_m + B L*) e``."""
    z = np.zeros(scfg.gamma.shape[0]) if state.z is None else state.z
    return scfg.gamma @ state.e - z


def _gains(ref: ReferenceModel, cfg: AdaptiveConfig, scfg: SlidingConfig | None):
    """Precomputed products handed to the compiled derivative."""
    b = np.ascontiguousarray(ref.b, dtype=float)
    n, m = b.shape
    w_inv = np.linalg.inv(cfg.w)
    g_plain = w_inv @ b.T @ ref.p
    if scfg is None:
        zeros_mn = np.zeros((m, n))
        zeros_mm = np.zeros((m, m))
        return dict(
            b=b, a_m=ref.a_m, l_star=ref.l_star, g_plain=g_plain, sliding=False,
            gamma=zeros_mn, gamma_acl=zeros_mn, g_slide=zeros_mm, rho_m=zeros_mm, delta=1.0,
        )
    return dict(
        b=b, a_m=ref.a_m, l_star=ref.l_star, g_plain=g_plain, sliding=True,
        gamma=scfg.gamma, gamma_acl=scfg.gamma @ ref.a_cl,
        g_slide=w_inv @ b.T @ scfg.gamma.T @ scfg.p_s,
        rho_m=scfg.rho * scfg.m_mat, delta=scfg.delta,
    )


def _contig(g: dict) -> dict:
    return {k: (np.ascontiguousarray(v, dtype=float) if isinstance(v, np.ndarray) else v) for k, v in g.items()}


def _derivative(y, a, r, d, g):
    m = g["b"].shape[1]
    dy = np.empty_like(y)
    u = np.empty(m)
    s = np.empty(m)
    _kernel.deriv(
        y, np.ascontiguousarray(a, dtype=float), np.ascontiguousarray(r, dtype=float),
        np.ascontiguousarray(d, dtype=float), g["b"], g["a_m"], g["l_star"], g["g_plain"],
        g["sliding"], g["gamma"], g["gamma_acl"], g["g_slide"], g["rho_m"], g["delta"], dy, u, s,
    )
    if not np.all(np.isfinite(dy)):
        raise IntegrationDiverged(float("nan"), "closed-loop derivative is not finite")
    return dy, u, s


def _check_dims(state, plant, ref, cfg, sliding):
    n, m = plant.n, plant.m
    if ref.n != n or ref.m != m or cfg.w.shape != (m, m):
        raise ValueError("plant, reference and adaptive config dimensions disagree")
    if state.x.shape != (n,) or state.x_m.shape != (n,) or state.k.shape != (m, n):
        raise ValueError("closed-loop state has the wrong shape")
    if sliding and (state.z is None or state.z.shape != (m,)):
        raise ValueError("sliding mode needs the surface integral z of length m")


def plain_rhs(state: ClosedLoopState, t: float, plant: NetworkSystem, ref: ReferenceModel,
              cfg: AdaptiveConfig, d=None) -> np.ndarray:
    """Derivative of the packed state under the plain adaptive law.

    ``d`` is the (held) input disturbance at ``t``; zero if omitted.
    """
    _check_dims(state, plant, ref, cfg, sliding=False)
    d = np.zeros(plant.m) if d is None else np.asarray(d, dtype=float)
    g = _contig(_gains(ref, cfg, None))
    dy, _, _ = _derivative(state.pack(), plant.a_at(t), ref.r(t), d, g)
    return dy


def sliding_rhs(state: ClosedLoopState, t: float, plant: NetworkSystem, ref: ReferenceModel,
                cfg: AdaptiveConfig, scfg: SlidingConfig, d=None) -> np.ndarray:
    """Derivative of the packed state under the sliding-mode law."""
    _check_dims(state, plant, ref, cfg, sliding=True)
    d = np.zeros(plant.m) if d is None else np.asarray(d, dtype=float)
    g = _contig(_gains(ref, cfg, scfg))
    dy, _, _ = _derivative(state.pack(), plant.a_at(t), ref.r(t), d, g)
    return dy


@dataclass
class TrajectoryLog:
    """Decimated record of a closed-loop run.

    Arrays share the first axis (logged times). ``k`` has shape (L, m, n);
    ``z`` and ``s`` are present in sliding mode only. ``d`` and ``u`` are the
    held disturbance and control at the logged instant.
    """

    times: np.ndarray
    x: np.ndarray
    x_m: np.ndarray
    k: np.ndarray
    u: np.ndarray
    d: np.ndarray
    z: np.ndarray | None = None
    s: np.ndarray | None = None
    mode: str = "plain"
    diverged_at: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def e(self) -> np.ndarray:
        return self.x - self.x_m

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    def a_hat(self, a_m, b) -> np.ndarray:
        """Topology estimate ``A_m - B K(t)`` at every logged time."""
        return np.asarray(a_m)[None] - np.einsum("nm,lmj->lnj", np.asarray(b), self.k)


def _kernel_inputs(plant: NetworkSystem, ref: ReferenceModel, dist: DisturbanceSignal):
    sched = plant.schedule
    seg_start, seg_a = sched.segments()
    ov = sched.overrides
    ov_idx = np.array([[i, j] for i, j, _ in ov], dtype=np.int64).reshape(-1, 2)
    ov_par = np.array(
        [[wf.code, wf.amplitude, wf.period, wf.phase, wf.offset] for _, _, wf in ov], dtype=float
    ).reshape(-1, 5)
    sig = ref.r
    m = ref.m
    knots = np.zeros(1)
    table = np.zeros((1, m))
    par = np.zeros((m, 3))
    if sig.kind == "sinusoid":
        kind = 0
        par[:, 0], par[:, 1], par[:, 2] = sig.amplitudes, sig.frequencies, sig.phases
    elif sig.kind == "step":
        kind = 1
        par[:, 0] = sig.levels
    else:
        kind = 2
        knots, table = sig.knots, sig.values
    return dict(
        seg_start=np.ascontiguousarray(seg_start), seg_a=np.ascontiguousarray(seg_a),
        ov_idx=ov_idx, ov_par=ov_par, ref_kind=kind, ref_par=par, onset=float(sig.onset),
        knots=np.ascontiguousarray(knots, dtype=float), table=np.ascontiguousarray(table, dtype=float),
        dist_h=float(dist.hold), dist_v=np.ascontiguousarray(dist.values, dtype=float),
    )


def run_closed_loop(
    plant: NetworkSystem,
    ref: ReferenceModel,
    cfg: AdaptiveConfig,
    t_end: float,
    dt: float = 1e-3,
    rng: RngStream | None = None,
    scfg: SlidingConfig | None = None,
    x0=None,
    xm0=None,
    log_every: int = 10,
    disturbance: DisturbanceSignal | None = None,
    engine: str = "compiled",
) -> TrajectoryLog:
    """Integrate plant, reference, gain and (optionally) sliding integral.

    Steps are fixed RK4 of size ``dt``, with the grid forced through every
    weight-schedule event. Defaults: ``x(0) ~ N(0, I)`` drawn from
    ``rng.spawn(0)``, ``x_m(0) = 0``, ``K(0)`` from ``cfg``; the disturbance
    is drawn from ``rng.spawn(1)`` with one held value per step unless a
    realization is passed. A diverging run returns the partial log with
    ``diverged_at`` set.

    ``engine="python"`` steps through :func:`numerics.rk4_step` instead of
    the compiled loop; it is slow and meant for cross-checks.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    if log_every < 1:
        raise ValueError("log_every must be at least 1")
    sliding = scfg is not None
    if sliding != (cfg.mode == "sliding"):
        raise ValueError("sliding config must be given exactly when cfg.mode == 'sliding'")
    n, m = plant.n, plant.m
    if ref.n != n or ref.m != m or not np.array_equal(ref.b, plant.b):
        raise ValueError("reference model must share the plant's B")
    rng = rng if rng is not None else RngStream(0)
    x0 = rng.spawn(0).gaussians(n) if x0 is None else np.array(x0, dtype=float)
    xm0 = np.zeros(n) if xm0 is None else np.array(xm0, dtype=float)
    state = ClosedLoopState(x0, xm0, cfg.initial_gain(n), np.zeros(m) if sliding else None)
    _check_dims(state, plant, ref, cfg, sliding)
    if disturbance is None:
        model = plant.disturbance
        disturbance = sample_disturbance(model, rng.spawn(1), t_end, m, hold=model.hold or dt)
    elif disturbance.channels != m:
        raise ValueError("disturbance channel count must equal the number of inputs")

    grid = step_grid(0.0, t_end, dt, plant.schedule.event_times() + ref.r.breakpoints())
    g = _contig(_gains(ref, cfg, scfg))
    y0 = state.pack()

    if engine == "compiled":
        kin = _kernel_inputs(plant, ref, disturbance)
        idx, y_log, u_log, d_log, s_log, count, div_at = _kernel.integrate(
            y0, grid, int(log_every), kin["seg_start"], kin["seg_a"], kin["ov_idx"], kin["ov_par"],
            kin["ref_kind"], kin["ref_par"], kin["onset"], kin["knots"], kin["table"],
            kin["dist_h"], kin["dist_v"], g["b"], g["a_m"], g["l_star"], g["g_plain"], g["sliding"],
            g["gamma"], g["gamma_acl"], g["g_slide"], g["rho_m"], g["delta"],
        )
        times = grid[idx[:count]]
        y_log, u_log, d_log, s_log = y_log[:count], u_log[:count], d_log[:count], s_log[:count]
        diverged_at = None if math.isnan(div_at) else float(div_at)
    elif engine == "python":
        times, y_log, u_log, d_log, s_log, diverged_at = _integrate_python(
            plant, ref, disturbance, grid, y0, g, log_every
        )
    else:
        raise ValueError(f"unknown engine {engine!r}")

    k = y_log[:, 2 * n: 2 * n + m * n].reshape(-1, m, n)
    meta = {
        "n": n, "m": m, "dt": float(dt), "log_every": int(log_every), "t_end": float(t_end),
        "mode": cfg.mode, "disturbance": plant.disturbance.describe(),
        "d_max_realized": disturbance.d_max_realized, "engine": engine,
    }
    if sliding:
        meta.update(rho=scfg.rho, epsilon=scfg.epsilon, delta=scfg.delta, rho_auto=scfg.rho_auto)
    return TrajectoryLog(
        times=times, x=y_log[:, :n], x_m=y_log[:, n: 2 * n], k=k, u=u_log, d=d_log,
        z=y_log[:, 2 * n + m * n:] if sliding else None, s=s_log if sliding else None,
        mode=cfg.mode, diverged_at=diverged_at, meta=meta,
    )


def _integrate_python(plant, ref, dist, grid, y0, g, log_every):
    sched = plant.schedule
    starts, mats = sched.segments()
    rows, times = [], []
    y = y0.copy()
    diverged_at = None
    for i, t in enumerate(grid):
        seg = mats[np.searchsorted(starts, t, side="right") - 1]
        d = dist(t)

        def rhs(tt, yy, seg=seg, d=d):
            a = seg.copy()
            for oi, oj, wf in sched.overrides:
                a[oi, oj] = wf(tt)
            return _derivative(yy, a, ref.r(tt), d, g)[0]

        if i % log_every == 0 or i == grid.size - 1:
            a = seg.copy()
            for oi, oj, wf in sched.overrides:
                a[oi, oj] = wf(t)
            _, u, s = _derivative(y, a, ref.r(t), d, g)
            times.append(t)
            rows.append((y.copy(), u, d.copy(), s))
        if i == grid.size - 1:
            break
        y = rk4_step(rhs, t, y, grid[i + 1] - t)
        if not np.all(np.isfinite(y)):
            diverged_at = float(grid[i + 1])
            break
    y_log = np.array([r[0] for r in rows])
    u_log = np.array([r[1] for r in rows])
    d_log = np.array([r[2] for r in rows])
    s_log = np.array([r[3] for r in rows])
    return np.array(times), y_log, u_log, d_log, s_log, diverged_at


@dataclass
class LyapunovDiagnostics:
    """Lyapunov function and its rates along a logged run.

    ``v_dot_fd`` is the central difference of ``v`` (one-sided at the ends).
    ``v_dot_model`` is the closed-form rate: ``-1/2 e^T Q e + e^T P B d`` in
    plain mode, ``s^T P_s Gamma B (d - rho M sat(s))`` in sliding mode.
    ``reaching_bound`` (sliding only) is ``s^T P_s Gamma B d - rho|s| +
    epsilon|s|``, nonpositive whenever the switching gain dominates the
    disturbance; ``outside_layer`` marks samples with ``|s| > delta``.
    """

    times: np.ndarray
    v: np.ndarray
    v_dot_fd: np.ndarray
    v_dot_model: np.ndarray
    has_k_tilde: bool
    reaching_bound: np.ndarray | None = None
    outside_layer: np.ndarray | None = None
    s_norm: np.ndarray | None = None


def lyapunov_diagnostics(
    log: TrajectoryLog,
    ref: ReferenceModel,
    cfg: AdaptiveConfig,
    scfg: SlidingConfig | None = None,
    k_star=None,
) -> LyapunovDiagnostics:
    """Evaluate the Lyapunov function along ``log``.

    ``k_star`` is the ground-truth matched gain, either constant ``(m, n)`` or
    per logged time ``(L, m, n)``. Without it the gain-error term is dropped
    and ``has_k_tilde`` is False.
    """
    e = log.e
    if k_star is not None:
        k_star = np.asarray(k_star, dtype=float)
        kt = log.k - (k_star if k_star.ndim == 3 else k_star[None])
        v_gain = 0.5 * np.einsum("lmj,mq,lqj->l", kt, cfg.w, kt)
    else:
        v_gain = np.zeros(log.times.size)
    if scfg is None:
        v = 0.5 * np.einsum("li,ij,lj->l", e, ref.p, e) + v_gain
        pb = ref.p @ ref.b
        v_dot = -0.5 * np.einsum("li,ij,lj->l", e, ref.q, e) + np.einsum("li,ip,lp->l", e, pb, log.d)
        reach = outside = s_norm = None
    else:
        s = log.s
        v = 0.5 * np.einsum("lp,pq,lq->l", s, scfg.p_s, s) + v_gain
        pgb = scfg.p_s @ scfg.gamma @ ref.b
        s_norm = np.linalg.norm(s, axis=1)
        outside = s_norm > scfg.delta
        scale = np.where(outside, 1.0 / np.where(s_norm > 0, s_norm, 1.0), 1.0 / scfg.delta)
        sat_s = s * scale[:, None]
        drive = log.d - scfg.rho * sat_s @ scfg.m_mat.T
        v_dot = np.einsum("lp,pq,lq->l", s, pgb, drive)
        reach = np.einsum("lp,pq,lq->l", s, pgb, log.d) - scfg.rho * s_norm + scfg.epsilon * s_norm
    v_dot_fd = np.gradient(v, log.times) if v.size > 1 else np.zeros_like(v)
    return LyapunovDiagnostics(log.times, v, v_dot_fd, v_dot, k_star is not None, reach, outside, s_norm)
