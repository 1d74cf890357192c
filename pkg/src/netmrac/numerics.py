"""Small dense numerics shared by the rest of the package.

Matrices and vectors are plain ``numpy`` float64 arrays. Everything here is
deterministic: the integrator is fixed-step and the random stream is a
counter-based Philox generator with an explicit uniform/normal transform, so
identical seeds reproduce identical draws on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "TOL_HURWITZ",
    "DesignError",
    "IntegrationDiverged",
    "NumericalError",
    "OdeSystem",
    "RngStream",
    "gramian",
    "is_hurwitz",
    "rk4_integrate",
    "rand_gauss",
    "rand_uniform",
    "rk4_step",
    "solve_lyapunov",
    "step_grid",
]

TOL_HURWITZ = 1e-9


class NumericalError(ArithmeticError):
    """A linear-algebra routine failed or produced a non-finite result."""


class DesignError(ValueError):
    """A controller or reference design violates a stability requirement."""


class IntegrationDiverged(ArithmeticError):
    """Raised when the integrated state stops being finite."""

    def __init__(self, t: float, message: str | None = None):
        self.t = float(t)
        super().__init__(message or f"integration diverged at t={self.t:.17g}")


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise ValueError(f"{name} must be a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def _as_square(a, name: str) -> np.ndarray:
    a = _as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    return a


# --------------------------------------------------------------------------
# integration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OdeSystem:
    """Autonomous or time-varying ODE ``y' = rhs(t, y)`` on a flat state."""

    state_dim: int
    rhs: Callable[[float, np.ndarray], np.ndarray]


def step_grid(t0: float, t1: float, dt: float, breakpoints=()) -> np.ndarray:
    """Return the fixed-step time grid from ``t0`` to ``t1``.

    Steps are of length ``dt`` except the last one of each segment, which is
    shortened so that every breakpoint inside ``(t0, t1)`` and ``t1`` itself
    are hit exactly. Grid points are computed as ``start + k*dt`` rather than
    by accumulation.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t1 > t0:
        raise ValueError("t1 must be greater than t0")
    cuts = sorted({float(b) for b in breakpoints if t0 < b < t1})
    edges = [float(t0), *cuts, float(t1)]
    pieces = []
    for a, b in zip(edges[:-1], edges[1:]):
        k = int(math.floor((b - a) / dt + 1e-9))
        seg = a + dt * np.arange(k + 1)
        # drop a final step that would be a rounding sliver
        if b - seg[-1] <= 1e-9 * dt:
            seg = seg[:-1]
        pieces.append(seg)
    pieces.append(np.array([edges[-1]]))
    return np.concatenate(pieces)


def rk4_step(rhs, t: float, y: np.ndarray, h: float) -> np.ndarray:
    """One classical Runge-Kutta step of size ``h``."""
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_integrate(sys: OdeSystem, x0, t0: float, t1: float, dt: float, breakpoints=()):
    """Integrate ``sys`` with fixed-step RK4.

    Parameters
    ----------
    sys : OdeSystem
    x0 : array_like
        Initial state of length ``sys.state_dim``.
    t0, t1 : float
        Integration interval, ``t1 > t0``.
    dt : float
        Nominal step. The final step (and the step before each breakpoint)
        is shortened to land exactly on the grid edge.
    breakpoints : iterable of float, optional
        Times the grid must contain, e.g. discontinuities of the rhs.

    Returns
    -------
    times : ndarray, shape (k,)
    states : ndarray, shape (k, state_dim)

    Raises
    ------
    IntegrationDiverged
        If the state becomes non-finite; carries the offending time.
    """
    y = np.array(x0, dtype=float).ravel()
    if y.size != sys.state_dim:
        raise ValueError(f"x0 has length {y.size}, expected {sys.state_dim}")
    times = step_grid(t0, t1, dt, breakpoints)
    states = np.empty((times.size, y.size))
    states[0] = y
    for i in range(times.size - 1):
        y = rk4_step(sys.rhs, times[i], y, times[i + 1] - times[i])
        if y.shape != (sys.state_dim,):
            raise ValueError("rhs output length does not match state_dim")
        if not np.all(np.isfinite(y)):
            raise IntegrationDiverged(times[i + 1])
        states[i + 1] = y
    return times, states


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------


def is_hurwitz(a, tol: float = TOL_HURWITZ) -> bool:
    """True iff every eigenvalue of ``a`` has real part below ``-tol``."""
    a = _as_square(a, "A")
    try:
        eig = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue computation failed: {exc}") from exc
    return bool(np.all(eig.real < -tol))


def solve_lyapunov(a_cl, q) -> np.ndarray:
    """Solve ``a_cl.T @ P + P @ a_cl = -q`` for symmetric positive definite P.

    The equation is vectorized with Kronecker products and solved densely,
    which is fine for the network sizes this package targets (N <= 20).

    Raises
    ------
    DesignError
        If ``a_cl`` is not Hurwitz or ``q`` is not symmetric positive definite.
    NumericalError
        If the vectorized system is singular or the result is not PD.
    """
    a_cl = _as_square(a_cl, "A_cl")
    q = _as_square(q, "Q")
    n = a_cl.shape[0]
    if q.shape != (n, n):
        raise ValueError(f"Q has shape {q.shape}, expected {(n, n)}")
    if not is_hurwitz(a_cl):
        raise DesignError("closed-loop matrix is not Hurwitz")
    if not np.allclose(q, q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(q).max())):
        raise DesignError("Q must be symmetric")
    if np.linalg.eigvalsh(0.5 * (q + q.T)).min() <= 0:
        raise DesignError("Q must be positive definite")

    eye = np.eye(n)
    # column-major vec: vec(A^T P) = (I kron A^T) vec P, vec(P A) = (A^T kron I) vec P
    lhs = np.kron(eye, a_cl.T) + np.kron(a_cl.T, eye)
    rhs = -q.reshape(-1, order="F")
    try:
        vec_p = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"vectorized Lyapunov system is singular: {exc}") from exc
    p = vec_p.reshape(n, n, order="F")
    p = 0.5 * (p + p.T)
    if not np.all(np.isfinite(p)):
        raise NumericalError("Lyapunov solution is not finite")
    if np.linalg.eigvalsh(p).min() <= 0:
        raise NumericalError("Lyapunov solution is not positive definite")
    return p


def gramian(times, samples, window) -> np.ndarray:
    """Trapezoidal approximation of the integral of ``x x^T`` over ``window``.

    Parameters
    ----------
    times : array_like, shape (k,)
        Strictly increasing sample times.
    samples : array_like, shape (k, n)
        Vector samples ``x(times[i])``.
    window : tuple of float
        ``(t_start, t_end)``; only samples inside the closed window are used,
        so the window edges should lie on the sample grid for an exact span.

    Returns
    -------
    ndarray, shape (n, n)
        Exactly symmetric positive semidefinite matrix.
    """
    times = np.asarray(times, dtype=float)
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    t_lo, t_hi = map(float, window)
    if not t_hi > t_lo:
        raise ValueError("empty Gramian window")
    if t_lo < times[0] - 1e-12 or t_hi > times[-1] + 1e-12:
        raise ValueError("Gramian window lies outside the sampled range")
    span = max(1.0, abs(t_hi))
    sel = (times >= t_lo - 1e-9 * span) & (times <= t_hi + 1e-9 * span)
    if sel.sum() < 2:
        raise ValueError("Gramian window contains fewer than two samples")
    t = times[sel]
    x = samples[sel]
    w = np.zeros(t.size)
    h = np.diff(t)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    # weights are nonnegative, so sqrt-scaling keeps the product PSD and symmetric
    xs = x * np.sqrt(w)[:, None]
    g = xs.T @ xs
    return 0.5 * (g + g.T)


# --------------------------------------------------------------------------
# random numbers
# --------------------------------------------------------------------------

_TWO_M53 = 2.0**-53


class RngStream:
    """Seeded Philox-4x64 stream with a fixed uniform and Gaussian transform.

    Uniform doubles take the top 53 bits of each raw 64-bit word. Gaussian
    draws use the Box-Muller cosine branch on two uniforms, one pair per
    draw, so the consumption pattern is fixed. Child streams are derived
    through ``numpy.random.SeedSequence`` spawn keys (``spawn``), which gives
    independent streams for parallel scenarios.

    A stream is single-consumer; do not share one across threads.
    """

    algorithm = "philox4x64-10/top53/box-muller"

    def __init__(self, seed: int, spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self._bitgen = np.random.Philox(ss)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, spawn_key={self.spawn_key})"

    def spawn(self, *key: int) -> "RngStream":
        """Independent child stream identified by ``key``."""
        return RngStream(self.seed, self.spawn_key + tuple(key))

    def _raw(self, size: int) -> np.ndarray:
        return self._bitgen.random_raw(size)

    def uniforms(self, size: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """``size`` draws from U[lo, hi)."""
        if not hi > lo:
            raise ValueError("require lo < hi")
        u = (self._raw(size) >> np.uint64(11)).astype(float) * _TWO_M53
        return lo + (hi - lo) * u

    def gaussians(self, size: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """``size`` draws from N(mean, std^2)."""
        if std < 0:
            raise ValueError("std must be nonnegative")
        raw = (self._raw(2 * size) >> np.uint64(11)).astype(float) * _TWO_M53
        u1 = 1.0 - raw[0::2]  # (0, 1], keeps the log finite
        u2 = raw[1::2]
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        if std == 0:
            return np.full(size, float(mean))
        return mean + std * z

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return float(self.uniforms(1, lo, hi)[0])

    def gauss(self, mean: float = 0.0, std: float = 1.0) -> float:
        return float(self.gaussians(1, mean, std)[0])


def rand_uniform(rng: RngStream, lo: float, hi: float) -> float:
    return rng.uniform(lo, hi)


def rand_gauss(rng: RngStream, mean: float, std: float) -> float:
    return rng.gauss(mean, std)
