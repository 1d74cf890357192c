"""Plants, reference models, reference signals and input disturbances."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .numerics import DesignError, RngStream, is_hurwitz, solve_lyapunov

__all__ = [
    "DisturbanceModel",
    "DisturbanceSignal",
    "NetworkSystem",
    "PECheck",
    "ReferenceModel",
    "ReferenceSignal",
    "Waveform",
    "WeightSchedule",
    "check_pe",
    "design_reference",
    "gen_random_network",
    "is_connected",
    "laplacian",
    "pe_sinusoid_bank",
    "sample_disturbance",
    "structured_sinusoid_bank",
]

WAVEFORM_KINDS = ("cos2", "sin", "const")


@dataclass(frozen=True)
class Waveform:
    """Smooth scalar signal used to override one adjacency entry.

    ``cos2``:  offset + amplitude * cos(2*pi*t/period + phase)**2
    ``sin``:   offset + amplitude * sin(2*pi*t/period + phase)
    ``const``: offset + amplitude
    """

    kind: str = "cos2"
    amplitude: float = 0.0
    period: float = 1.0
    phase: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in WAVEFORM_KINDS:
            raise ValueError(f"unknown waveform kind {self.kind!r}")
        # an infinite period is the zero-frequency limit, a constant weight
        if self.kind != "const" and not self.period > 0:
            raise ValueError("waveform period must be positive")

    @property
    def code(self) -> int:
        return WAVEFORM_KINDS.index(self.kind)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "cos2":
            out = self.offset + self.amplitude * np.cos(2 * np.pi * t / self.period + self.phase) ** 2
        elif self.kind == "sin":
            out = self.offset + self.amplitude * np.sin(2 * np.pi * t / self.period + self.phase)
        else:
            out = np.full(t.shape, self.offset + self.amplitude)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class WeightSchedule:
    """Adjacency matrix with step events and smooth per-entry overrides.

    Events are ``(time, i, j, weight)`` and are right-continuous: ``a_at(t)``
    already reflects every event with ``time <= t``. An entry with a smooth
    override ignores the base value and any events.
    """

    base: np.ndarray
    events: tuple = ()
    overrides: tuple = ()

    def __post_init__(self):
        base = np.array(self.base, dtype=float)
        if base.ndim != 2 or base.shape[0] != base.shape[1]:
            raise ValueError("schedule base must be square")
        if not np.all(np.isfinite(base)):
            raise ValueError("schedule base must be finite")
        n = base.shape[0]
        events = tuple((float(t), int(i), int(j), float(w)) for t, i, j, w in self.events)
        times = [ev[0] for ev in events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("event times must be non-decreasing")
        overrides = tuple((int(i), int(j), wf) for i, j, wf in self.overrides)
        seen = set()
        for _, i, j, w in events:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"event index ({i}, {j}) out of range")
            if not math.isfinite(w):
                raise ValueError("event weight must be finite")
        for i, j, wf in overrides:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"override index ({i}, {j}) out of range")
            if (i, j) in seen:
                raise ValueError(f"more than one smooth override for entry ({i}, {j})")
            if not isinstance(wf, Waveform):
                raise TypeError("overrides must carry Waveform instances")
            seen.add((i, j))
        base.setflags(write=False)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "events", events)
        object.__setattr__(self, "overrides", overrides)

    @property
    def n(self) -> int:
        return self.base.shape[0]

    @property
    def is_constant(self) -> bool:
        return not self.events and not self.overrides

    def event_times(self) -> list[float]:
        return sorted({ev[0] for ev in self.events})

    def segments(self):
        """Piecewise-constant part as ``(start_times, matrices)``.

        The first segment starts at ``-inf``; segment ``k`` holds for
        ``start_times[k] <= t < start_times[k+1]``.
        """
        starts = [-math.inf]
        mats = [self.base.copy()]
        cur = self.base.copy()
        for t in self.event_times():
            for te, i, j, w in self.events:
                if te == t:
                    cur[i, j] = w
            starts.append(t)
            mats.append(cur.copy())
        return np.array(starts), np.array(mats)

    def a_at(self, t: float) -> np.ndarray:
        a = self.base.copy()
        for te, i, j, w in self.events:
            if te <= t:
                a[i, j] = w
        for i, j, wf in self.overrides:
            a[i, j] = wf(t)
        return a

    def a_many(self, times) -> np.ndarray:
        """``a_at`` evaluated on an array of times, shape (k, n, n)."""
        times = np.asarray(times, dtype=float)
        out = np.broadcast_to(self.base, (times.size, self.n, self.n)).copy()
        for te, i, j, w in self.events:
            out[times >= te, i, j] = w
        for i, j, wf in self.overrides:
            out[:, i, j] = wf(times)
        return out


@dataclass(frozen=True)
class PECheck:
    satisfied: bool
    min_eig_over_windows: float
    window: float
    stride: float
    n_windows: int


@dataclass(frozen=True)
class DisturbanceModel:
    """Bounded additive input disturbance, realized sample-and-hold.

    kind is one of ``none``, ``truncated_gauss`` (N(0, sigma^2) clipped to
    +-bound), ``uniform`` (U[lo, hi)) or ``table`` (explicit held values).
    ``hold`` is the hold period; ``None`` means one draw per integrator step.
    """

    kind: str = "none"
    sigma: float = 1.0
    bound: float | None = None
    lo: float = -1.0
    hi: float = 1.0
    hold: float | None = None
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("none", "truncated_gauss", "uniform", "table"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == "truncated_gauss":
            if self.sigma < 0:
                raise ValueError("sigma must be nonnegative")
            if self.bound is None:
                object.__setattr__(self, "bound", 3.0 * self.sigma)
            if self.bound < 0:
                raise ValueError("bound must be nonnegative")
        if self.kind == "uniform" and not self.hi > self.lo:
            raise ValueError("uniform disturbance needs lo < hi")
        if self.kind == "table":
            if self.table is None:
                raise ValueError("table disturbance needs a table")
            tab = np.atleast_2d(np.array(self.table, dtype=float))
            if not np.all(np.isfinite(tab)):
                raise ValueError("disturbance table must be finite")
            object.__setattr__(self, "table", tab)
        if self.hold is not None and not self.hold > 0:
            raise ValueError("hold period must be positive")

    @property
    def d_max(self) -> float:
        """Declared sup-norm bound on every channel."""
        if self.kind == "none":
            return 0.0
        if self.kind == "truncated_gauss":
            return float(self.bound)
        if self.kind == "uniform":
            return float(max(abs(self.lo), abs(self.hi)))
        return float(np.abs(self.table).max())

    def describe(self) -> dict:
        out = {"kind": self.kind, "d_max": self.d_max}
        if self.kind == "truncated_gauss":
            out.update(sigma=self.sigma, bound=self.bound, note="gaussian draws clipped to +-bound")
        elif self.kind == "uniform":
            out.update(lo=self.lo, hi=self.hi)
        return out


@dataclass(frozen=True)
class DisturbanceSignal:
    """Piecewise-constant realization: ``values[k]`` holds on ``[k*hold, (k+1)*hold)``."""

    hold: float
    values: np.ndarray
    d_max_realized: float

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def index(self, t):
        k = np.floor(np.asarray(t, dtype=float) / self.hold + 1e-9).astype(np.int64)
        return np.clip(k, 0, self.values.shape[0] - 1)

    def __call__(self, t):
        return self.values[self.index(t)]


@dataclass(frozen=True)
class NetworkSystem:
    """Plant ``x' = A(t) x + B (u + d)`` on ``n`` scalar nodes."""

    schedule: WeightSchedule
    b: np.ndarray
    disturbance: DisturbanceModel = field(default_factory=DisturbanceModel)

    def __post_init__(self):
        if not isinstance(self.schedule, WeightSchedule):
            object.__setattr__(self, "schedule", WeightSchedule(self.schedule))
        b = np.array(self.b, dtype=float)
        if b.ndim != 2 or b.shape[0] != self.schedule.n:
            raise ValueError(f"B must have {self.schedule.n} rows")
        if not np.all((b == 0) | (b == 1)):
            raise ValueError("B entries must be 0 or 1")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.schedule.n

    @property
    def m(self) -> int:
        return self.b.shape[1]

    @property
    def a(self) -> np.ndarray:
        return self.schedule.base

    def a_at(self, t: float) -> np.ndarray:
        return self.schedule.a_at(t)


REFERENCE_KINDS = ("sinusoid", "step", "table")


@dataclass(frozen=True)
class ReferenceSignal:
    """Reference input ``r(t)``.

    sinusoid: ``r_i = amplitudes[i] * sin(frequencies[i] * t + phases[i])``
    step:     ``r_i = levels[i]`` for ``t >= onset``, zero before
    table:    piecewise-linear interpolation of ``values`` at ``knots``,
              held constant outside the knot range
    """

    kind: str
    amplitudes: np.ndarray | None = None
    frequencies: np.ndarray | None = None
    phases: np.ndarray | None = None
    levels: np.ndarray | None = None
    onset: float = 0.0
    knots: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in REFERENCE_KINDS:
            raise ValueError(f"unknown reference kind {self.kind!r}")
        arr = lambda v: None if v is None else np.array(v, dtype=float)  # noqa: E731
        for name in ("amplitudes", "frequencies", "phases", "levels", "knots"):
            object.__setattr__(self, name, arr(getattr(self, name)))
        if self.values is not None:
            object.__setattr__(self, "values", np.atleast_2d(np.array(self.values, dtype=float)))
        if self.kind == "sinusoid":
            if self.amplitudes is None or self.frequencies is None:
                raise ValueError("sinusoid reference needs amplitudes and frequencies")
            if self.amplitudes.shape != self.frequencies.shape:
                raise ValueError("amplitudes and frequencies differ in length")
            if self.phases is None:
                object.__setattr__(self, "phases", np.zeros_like(self.amplitudes))
            for v in (self.amplitudes, self.frequencies, self.phases):
                if not np.all(np.isfinite(v)):
                    raise ValueError("sinusoid parameters must be finite")
        elif self.kind == "step":
            if self.levels is None:
                raise ValueError("step reference needs levels")
        else:
            if self.knots is None or self.values is None:
                raise ValueError("table reference needs knots and values")
            if self.values.shape[0] != self.knots.size:
                raise ValueError("table values must have one row per knot")
            if np.any(np.diff(self.knots) <= 0):
                raise ValueError("table knots must be strictly increasing")

    @property
    def channels(self) -> int:
        if self.kind == "sinusoid":
            return self.amplitudes.size
        if self.kind == "step":
            return self.levels.size
        return self.values.shape[1]

    def breakpoints(self) -> list[float]:
        if self.kind == "step" and self.onset > 0:
            return [float(self.onset)]
        return []

    def __call__(self, t: float) -> np.ndarray:
        return self.many(np.array([t], dtype=float))[0]

    def many(self, times) -> np.ndarray:
        """Evaluate at an array of times, shape (k, channels)."""
        t = np.asarray(times, dtype=float)[:, None]
        if self.kind == "sinusoid":
            return self.amplitudes * np.sin(self.frequencies * t + self.phases)
        if self.kind == "step":
            return np.where(t >= self.onset, self.levels, 0.0)
        return np.stack([np.interp(t[:, 0], self.knots, col) for col in self.values.T], axis=1)

    def describe(self) -> dict:
        out = {"kind": self.kind}
        for name in ("amplitudes", "frequencies", "phases", "levels"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v.tolist()
        if self.kind == "step":
            out["onset"] = self.onset
        return out


@dataclass(frozen=True)
class ReferenceModel:
    """Reference network ``x_m' = A_m x_m + B r`` with stabilizer and Lyapunov pair."""

    a_m: np.ndarray
    b: np.ndarray
    l_star: np.ndarray
    p: np.ndarray
    q: np.ndarray
    r: ReferenceSignal

    @property
    def a_cl(self) -> np.ndarray:
        return self.a_m + self.b @ self.l_star

    @property
    def n(self) -> int:
        return self.a_m.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]


# --------------------------------------------------------------------------
# constructors
# --------------------------------------------------------------------------


def gen_random_network(
    n: int,
    rng: RngStream,
    undirected: bool = True,
    b=None,
    disturbance: DisturbanceModel | None = None,
) -> NetworkSystem:
    """Random weighted network with ``a_ij ~ U(0,1)`` off the diagonal.

    A full ``n x n`` block of uniforms is drawn in row-major order and the
    diagonal zeroed; the undirected variant then copies the upper triangle
    onto the lower one, so both variants share the upper triangle for a seed.
    """
    if n < 2:
        raise ValueError("a network needs at least two nodes")
    a = rng.uniforms(n * n).reshape(n, n)
    np.fill_diagonal(a, 0.0)
    if undirected:
        iu = np.triu_indices(n, 1)
        a.T[iu] = a[iu]
    b = np.eye(n) if b is None else b
    return NetworkSystem(WeightSchedule(a), b, disturbance or DisturbanceModel())


def laplacian(adjacency) -> np.ndarray:
    """Graph Laplacian ``D - A`` of a symmetric nonnegative adjacency matrix."""
    a = np.asarray(adjacency, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.array_equal(a, a.T):
        raise ValueError("adjacency must be symmetric")
    off = a - np.diag(np.diag(a))
    if np.any(off < 0):
        raise ValueError("adjacency must be nonnegative off the diagonal")
    lap = -off
    np.fill_diagonal(lap, off.sum(axis=1))
    return lap


def is_connected(adjacency) -> bool:
    a = np.asarray(adjacency, dtype=float)
    off = (a - np.diag(np.diag(a))) != 0
    n_comp, _ = connected_components(off, directed=False)
    return n_comp == 1


def design_reference(
    n: int,
    signal: ReferenceSignal,
    a_m=None,
    pole: float = -1.0,
    b=None,
    l_star=None,
    q=None,
) -> ReferenceModel:
    """Build a reference model whose error dynamics ``A_m + B L*`` are Hurwitz.

    Without an explicit ``l_star`` the stabilizer is chosen so the closed loop
    equals ``pole * I``; this needs a square invertible ``B`` (``L* = B^-1
    (pole I - A_m)``). ``Q`` defaults to ``2I`` when the closed loop is ``-I``
    (so that ``P = I``) and to ``I`` otherwise.
    """
    a_m = -np.eye(n) if a_m is None else np.array(a_m, dtype=float)
    b = np.eye(n) if b is None else np.array(b, dtype=float)
    if a_m.shape != (n, n):
        raise ValueError(f"A_m must be {n}x{n}")
    if b.shape[0] != n:
        raise ValueError(f"B must have {n} rows")
    if signal.channels != b.shape[1]:
        raise ValueError("reference signal channel count does not match B")
    if l_star is None:
        if not pole < 0:
            raise DesignError("closed-loop pole must be negative")
        if b.shape[0] != b.shape[1] or np.linalg.matrix_rank(b) < n:
            raise DesignError(
                "B is not square and invertible; the default stabilizer cannot be "
                "constructed, pass l_star explicitly"
            )
        l_star = np.linalg.solve(b, pole * np.eye(n) - a_m)
    l_star = np.array(l_star, dtype=float)
    if l_star.shape != (b.shape[1], n):
        raise ValueError(f"L* must be {b.shape[1]}x{n}")
    a_cl = a_m + b @ l_star
    if not is_hurwitz(a_cl):
        raise DesignError("A_m + B L* is not Hurwitz")
    if q is None:
        q = 2.0 * np.eye(n) if np.array_equal(a_cl, -np.eye(n)) else np.eye(n)
    q = np.array(q, dtype=float)
    p = solve_lyapunov(a_cl, q)
    resid = np.linalg.norm(a_cl.T @ p + p @ a_cl + q)
    if resid > 1e-10 * np.linalg.norm(q):
        raise DesignError(f"Lyapunov residual too large ({resid:.3e})")
    return ReferenceModel(a_m=a_m, b=b, l_star=l_star, p=p, q=q, r=signal)


def pe_sinusoid_bank(n: int, rng: RngStream) -> ReferenceSignal:
    """Sinusoid per channel with amplitude and frequency drawn from U(1, 2).

    All ``n`` amplitudes are drawn before the ``n`` frequencies.
    """
    if n < 1:
        raise ValueError("need at least one channel")
    amps = rng.uniforms(n, 1.0, 2.0)
    freqs = rng.uniforms(n, 1.0, 2.0)
    return ReferenceSignal("sinusoid", amplitudes=amps, frequencies=freqs)


def structured_sinusoid_bank(n: int, omega0: float = 1.0, amplitude: float = 1.0) -> ReferenceSignal:
    """Harmonic bank ``amplitude * sin(i * omega0 * t)``, ``i = 1..n``."""
    if n < 1:
        raise ValueError("need at least one channel")
    freqs = omega0 * np.arange(1, n + 1, dtype=float)
    return ReferenceSignal("sinusoid", amplitudes=np.full(n, float(amplitude)), frequencies=freqs)


def _window_gramians(times, samples, starts, ends):
    """Trapezoidal Gramians over ``[times[s], times[e]]`` from a cumulative sum."""
    x = samples
    outer = x[:, :, None] * x[:, None, :]
    h = np.diff(times)[:, None, None]
    cum = np.zeros_like(outer)
    cum[1:] = np.cumsum(0.5 * h * (outer[1:] + outer[:-1]), axis=0)
    g = cum[ends] - cum[starts]
    return 0.5 * (g + np.swapaxes(g, 1, 2))


def check_pe(times, samples, window: float, alpha: float, stride: float | None = None) -> PECheck:
    """Sliding-window persistent-excitation check.

    Windows of length ``window`` start every ``stride`` (default
    ``window / 10``) from the first sample until the window no longer fits.
    Window edges snap to the nearest sample. Returns the minimum over windows
    of the smallest Gramian eigenvalue; the condition holds iff it is at
    least ``alpha``.
    """
    times = np.asarray(times, dtype=float)
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if not window > 0:
        raise ValueError("window must be positive")
    if times[-1] - times[0] < window * (1 - 1e-9):
        raise ValueError("trajectory is shorter than the PE window")
    stride = window / 10.0 if stride is None else float(stride)
    n_win = int(math.floor((times[-1] - times[0] - window) / stride + 1e-9)) + 1
    t_start = times[0] + stride * np.arange(n_win)
    snap = lambda t: np.clip(np.searchsorted(times, t - 1e-9 * max(1.0, abs(times[-1]))), 0, times.size - 1)  # noqa: E731
    s_idx = snap(t_start)
    e_idx = snap(t_start + window)
    # searchsorted returns the first sample >= target; step back if the previous is closer
    for idx, target in ((s_idx, t_start), (e_idx, t_start + window)):
        prev = np.maximum(idx - 1, 0)
        closer = np.abs(times[prev] - target) < np.abs(times[idx] - target)
        idx[closer] = prev[closer]
    grams = _window_gramians(times, samples, s_idx, e_idx)
    min_eig = float(np.linalg.eigvalsh(grams)[:, 0].min())
    return PECheck(min_eig >= alpha, min_eig, float(window), stride, n_win)


def sample_disturbance(
    model: DisturbanceModel,
    rng: RngStream,
    horizon: float,
    channels: int = 1,
    hold: float | None = None,
) -> DisturbanceSignal:
    """Draw a held disturbance realization covering ``[0, horizon]``.

    ``hold`` overrides ``model.hold``; one of the two must be given unless the
    model is ``none`` or ``table``.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    h = model.hold if hold is None else hold
    if model.kind == "table":
        tab = model.table
        if tab.shape[1] != channels:
            raise ValueError("disturbance table channel count mismatch")
        h = h or horizon / tab.shape[0]
        return DisturbanceSignal(float(h), tab, float(np.abs(tab).max()))
    if model.kind == "none":
        return DisturbanceSignal(float(h or horizon), np.zeros((1, channels)), 0.0)
    if h is None:
        raise ValueError("a hold period is required for random disturbances")
    k = int(math.floor(horizon / h + 1e-9)) + 1
    if model.kind == "truncated_gauss":
        vals = rng.gaussians(k * channels, 0.0, model.sigma).reshape(k, channels)
        vals = np.clip(vals, -model.bound, model.bound)
    else:
        vals = rng.uniforms(k * channels, model.lo, model.hi).reshape(k, channels)
    return DisturbanceSignal(float(h), vals, float(np.abs(vals).max()))
