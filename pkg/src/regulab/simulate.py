"""Closed-loop integration and steady-state extraction.

Integration uses the Dormand-Prince 5(4) embedded pair with its 4th-order
dense interpolant (tableau taken from ``scipy.integrate.RK45``) in a lean
scalar stepping loop; the steady state of a run is approximated by a
uniformly resampled tail of the trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import RK45
from scipy.interpolate import CubicSpline

from .dynamics import ClosedLoopSystem
from .expr import DomainError

__all__ = [
    "IntegrationError", "FiniteEscapeError", "NonFiniteStateError",
    "TrajectoryTooShortError", "Trajectory", "SteadyStateEstimate",
    "UUBVerdict", "integrate", "check_uub", "estimate_steady_state",
    "reachable_tail_cloud",
]

SAMPLES_PER_PERIOD = 2048
DEFAULT_PERIODICITY_TOL = 1e-6
DEFAULT_TAIL_FRACTION = 0.5


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t={t:.6g})")
        self.t = t


class FiniteEscapeError(IntegrationError):
    """Step size underflow: the solution is probably not complete."""


class NonFiniteStateError(IntegrationError):
    pass


class TrajectoryTooShortError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray          # shape (n_times, dim)
    steps: int = 0
    rejected: int = 0
    nfev: int = 0
    dense: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.states, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if t.ndim != 1 or x.shape[0] != t.size or t.size < 2:
            raise ValueError("trajectory needs >= 2 samples with matching states")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if not np.all(np.isfinite(x)):
            raise ValueError("trajectory contains non-finite states")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)

    @classmethod
    def from_samples(cls, times, states) -> "Trajectory":
        """Wrap sampled data; states between samples use a cubic spline."""
        return cls(times=times, states=states)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def __call__(self, t) -> np.ndarray:
        """States at times ``t``; returns shape ``(len(t), dim)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        t = np.clip(t, self.t0, self.t_end)
        if self.dense is not None:
            return np.asarray(self.dense(t)).T.reshape(t.size, self.dim)
        spline = self.__dict__.get("_spline")
        if spline is None:
            spline = CubicSpline(self.times, self.states, axis=0)
            object.__setattr__(self, "_spline", spline)
        return spline(t)

    def shifted(self, dt: float) -> "Trajectory":
        dense = None
        if self.dense is not None:
            inner = self.dense
            dense = lambda t: inner(np.asarray(t) - dt)  # noqa: E731
        return Trajectory(self.times + dt, self.states, self.steps, self.rejected,
                          self.nfev, dense)

    def to_csv(self, path, times=None) -> None:
        t = self.times if times is None else np.asarray(times, dtype=float)
        x = self.states if times is None else self(t)
        header = ",".join(["t"] + [f"z{i + 1}" for i in range(self.dim)])
        np.savetxt(path, np.column_stack([t, x]), delimiter=",", header=header,
                   comments="", fmt="%.17g")


# Dormand-Prince 5(4) tableau and its 4th-order dense-output matrix
_C = [float(v) for v in RK45.C]
_A = [[float(v) for v in row] for row in RK45.A]
_B = [float(v) for v in RK45.B]
_E = [float(v) for v in RK45.E]
_P = np.asarray(RK45.P, dtype=float)
_SAFETY, _MIN_FACTOR, _MAX_FACTOR = 0.9, 0.2, 10.0
_ERR_EXP = -1.0 / 5.0


class DenseOutput:
    """Piecewise quartic interpolant over accepted steps (vectorized)."""

    def __init__(self, times: np.ndarray, states: np.ndarray, stages: np.ndarray):
        self.times = times
        self.states = states
        self.h = np.diff(times)
        self.stages = stages  # (n_steps, 7, dim)

    def __call__(self, t) -> np.ndarray:
        """States at ``t`` with shape ``(dim, len(t))``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.h.size - 1)
        h = self.h[idx]
        theta = (t - self.times[idx]) / h
        powers = np.cumprod(np.repeat(theta[None, :], 4, axis=0), axis=0)  # (4, n)
        coef = _P @ powers  # (7, n)
        incr = np.einsum("nsd,sn->nd", self.stages[idx], coef)
        return (self.states[idx] + h[:, None] * incr).T


def _rms(values) -> float:
    values = list(values)
    return math.hypot(*values) / math.sqrt(len(values))  # hypot never overflows early


def _initial_step(fun, t0, y0, f0, rtol, atol, t_span) -> float:
    scale = [atol + abs(v) * rtol for v in y0]
    d0 = _rms(v / s for v, s in zip(y0, scale))
    d1 = _rms(v / s for v, s in zip(f0, scale))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    if not (math.isfinite(h0) and h0 > 0):
        h0 = 1e-6
    h0 = min(h0, t_span)
    y1 = [a + h0 * b for a, b in zip(y0, f0)]
    f1 = fun(t0 + h0, y1)
    d2 = _rms((a - b) / s for a, b, s in zip(f1, f0, scale)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 5.0)
    if not h1 > 0:
        h1 = h0
    return min(100 * h0, h1, t_span)


def integrate(sys: ClosedLoopSystem | Callable, x0: Sequence[float], t_end: float,
              rtol: float = 1e-10, atol: float = 1e-12, t0: float = 0.0,
              max_step: float = math.inf) -> Trajectory:
    """Integrate the autonomous field of ``sys`` from ``x0`` over ``[t0, t_end]``.

    Dormand-Prince 5(4) with local extrapolation and the standard controller
    (safety 0.9, step ratio clipped to [0.2, 10]); a step is accepted when the
    RMS of ``err / (atol + rtol * max(|y_old|, |y_new|))`` is below one.
    ``sys`` may also be a plain callable mapping a list of floats to a list.

    Raises
    ------
    FiniteEscapeError
        When the step size underflows (probable finite escape time).
    NonFiniteStateError
        When the state or the field becomes non-finite.
    """
    rhs = sys.rhs if isinstance(sys, ClosedLoopSystem) else sys
    y = [float(v) for v in np.asarray(x0, dtype=float).ravel()]
    if isinstance(sys, ClosedLoopSystem) and len(y) != sys.dim:
        raise ValueError(f"x0 must have {sys.dim} entries, got {len(y)}")
    if not t_end > t0:
        raise ValueError("t_end must exceed the initial time")
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    dim = len(y)
    nfev = 0

    def fun(t, z):
        nonlocal nfev
        nfev += 1
        try:
            out = rhs(z)
        except (OverflowError, DomainError, ValueError) as exc:
            raise NonFiniteStateError(f"field evaluation failed: {exc}", t) from None
        return [float(v) for v in out]

    (a21,), (a31, a32), (a41, a42, a43), (a51, a52, a53, a54), (a61, a62, a63, a64, a65) = (
        _A[1][:1], _A[2][:2], _A[3][:3], _A[4][:4], _A[5][:5])
    b1, _, b3, b4, b5, b6 = _B
    e1, _, e3, e4, e5, e6, e7 = _E
    c2, c3, c4, c5 = _C[1:5]

    t = t0
    k1 = fun(t, y)
    h = min(_initial_step(fun, t0, y, k1, rtol, atol, t_end - t0), max_step)
    ts, ys, stages = [t0], [y], []
    steps = rejected = 0
    while t < t_end:
        min_step = 10 * abs(np.nextafter(t, math.inf) - t)
        h = min(h, max_step)
        step_rejected = False
        while True:
            if h < min_step:
                raise FiniteEscapeError("step size underflow; solution may escape", t)
            t_new = t + h
            if t_new >= t_end:
                t_new = t_end
            hh = t_new - t
            k2 = fun(t + c2 * hh, [a + hh * (a21 * p) for a, p in zip(y, k1)])
            k3 = fun(t + c3 * hh, [a + hh * (a31 * p + a32 * q) for a, p, q in zip(y, k1, k2)])
            k4 = fun(t + c4 * hh, [a + hh * (a41 * p + a42 * q + a43 * r)
                                   for a, p, q, r in zip(y, k1, k2, k3)])
            k5 = fun(t + c5 * hh, [a + hh * (a51 * p + a52 * q + a53 * r + a54 * s)
                                   for a, p, q, r, s in zip(y, k1, k2, k3, k4)])
            k6 = fun(t_new, [a + hh * (a61 * p + a62 * q + a63 * r + a64 * s + a65 * u)
                             for a, p, q, r, s, u in zip(y, k1, k2, k3, k4, k5)])
            y_new = [a + hh * (b1 * p + b3 * r + b4 * s + b5 * u + b6 * v)
                     for a, p, r, s, u, v in zip(y, k1, k3, k4, k5, k6)]
            k7 = fun(t_new, y_new)
            acc = 0.0
            for a, yn, p, r, s, u, v, w in zip(y, y_new, k1, k3, k4, k5, k6, k7):
                err = hh * (e1 * p + e3 * r + e4 * s + e5 * u + e6 * v + e7 * w)
                sc = atol + rtol * max(abs(a), abs(yn))
                acc += (err / sc) ** 2
            err_norm = math.sqrt(acc / dim)
            if not math.isfinite(err_norm):
                if all(math.isfinite(v) for v in y_new):
                    err_norm = math.inf
                else:
                    raise NonFiniteStateError("state became non-finite", t_new)
            if err_norm < 1.0:
                if err_norm == 0.0:
                    factor = _MAX_FACTOR
                else:
                    factor = min(_MAX_FACTOR, _SAFETY * err_norm ** _ERR_EXP)
                if step_rejected:
                    factor = min(1.0, factor)
                h = hh * factor
                break
            rejected += 1
            h = hh * max(_MIN_FACTOR, _SAFETY * err_norm ** _ERR_EXP)
            step_rejected = True
        stages.append((k1, k2, k3, k4, k5, k6, k7))
        t, y, k1 = t_new, y_new, k7
        ts.append(t)
        ys.append(y)
        steps += 1
    times = np.array(ts)
    states = np.array(ys)
    dense = DenseOutput(times, states, np.array(stages))
    return Trajectory(times=times, states=states, steps=steps, rejected=rejected,
                      nfev=nfev, dense=dense)


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UUBVerdict:
    bounded: bool
    max_tail_norm: float


def check_uub(trajs: Sequence[Trajectory], t_discard: float, bound: float) -> UUBVerdict:
    """Every state beyond ``t_discard`` must have Euclidean norm <= ``bound``."""
    worst = 0.0
    for tr in trajs:
        if t_discard > tr.t_end:
            raise ValueError("t_discard lies beyond the trajectory")
        mask = tr.times >= t_discard
        pts = tr.states[mask]
        start = tr(np.array([max(t_discard, tr.t0)]))
        norms = np.linalg.norm(np.vstack([start, pts]), axis=1)
        worst = max(worst, float(norms.max()))
    return UUBVerdict(bounded=bool(worst <= bound), max_tail_norm=worst)


# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SteadyStateEstimate:
    """Uniformly resampled tail of a trajectory with periodicity metadata.

    ``verdict`` is one of ``"periodic"``, ``"aperiodic"``, ``"undecided"``.
    ``metric`` is ``sup |x(t) - x(t+T)|`` (max-abs over components) across
    the tail, ``scale`` is ``1 + sup |x|`` over the tail.
    """

    source: Trajectory
    tail_start_index: int
    t_start: float
    times: np.ndarray
    states: np.ndarray
    period: float | None
    verdict: str
    metric: float
    scale: float
    samples_per_period: int

    @property
    def dt(self) -> float:
        if self.period is not None:
            return self.period / self.samples_per_period
        return float(self.times[-1] - self.times[0]) / (self.times.size - 1)

    @property
    def is_periodic(self) -> bool:
        return self.verdict == "periodic"

    def last_period(self) -> tuple[np.ndarray, np.ndarray]:
        """``(times, states)`` of the final full period, endpoint excluded."""
        if self.period is None:
            raise ValueError("steady state has no period")
        m = self.samples_per_period
        return self.times[-m - 1:-1], self.states[-m - 1:-1]


def _periodicity_metric(tr: Trajectory, t_a: float, t_b: float, T: float,
                        m: int) -> tuple[float, np.ndarray, np.ndarray]:
    """Resample ``[t_a, t_b]`` at ``m`` points per period and compare shifts."""
    n = int(round((t_b - t_a) / T * m))
    times = t_a + np.arange(n + 1) * (T / m)
    times[-1] = min(times[-1], t_b)
    states = tr(times)
    diff = np.abs(states[m:] - states[:-m]) if n >= m else np.array([[np.inf]])
    return float(diff.max()), times, states


def _autocorr_period(times: np.ndarray, states: np.ndarray) -> float | None:
    x = states - states.mean(axis=0)
    n = x.shape[0]
    spec = np.fft.rfft(x, n=2 * n, axis=0)
    ac = np.fft.irfft(spec * np.conj(spec), axis=0)[:n].sum(axis=1)
    if ac[0] <= 0:
        return None
    ac = ac / ac[0]
    # unbiased normalisation so late lags are not penalised
    ac = ac * n / (n - np.arange(n))
    half = n // 2
    neg = np.nonzero(ac[:half] < 0)[0]
    if neg.size == 0:
        return None
    k0 = neg[0]
    seg = ac[k0:half]
    # first local maximum close to the best one; later peaks of a periodic
    # signal are aliases of the fundamental
    peaks = [j for j in range(1, seg.size - 1) if seg[j] >= seg[j - 1] and seg[j] >= seg[j + 1]]
    if not peaks:
        return None
    top = max(seg[j] for j in peaks)
    k = k0 + next(j for j in peaks if seg[j] >= 0.9 * top)
    if k <= 0 or k >= half - 1:
        return None
    # parabolic refinement
    y0, y1, y2 = ac[k - 1], ac[k], ac[k + 1]
    den = y0 - 2 * y1 + y2
    shift = 0.5 * (y0 - y2) / den if den != 0 else 0.0
    return float((k + shift) * (times[1] - times[0]))


def estimate_steady_state(traj: Trajectory, T_hint: float | None = None,
                          tol: float = DEFAULT_PERIODICITY_TOL,
                          tail_fraction: float = DEFAULT_TAIL_FRACTION,
                          samples_per_period: int = SAMPLES_PER_PERIOD,
                          min_horizon: float = 10.0,
                          default_period: float = 2 * math.pi) -> SteadyStateEstimate:
    """Extract the final ``tail_fraction`` of ``traj`` and test periodicity.

    With ``T_hint`` the tail is trimmed to an even number of whole periods
    ending at the last sample.  Without a hint the period is taken from the
    autocorrelation peak of the tail; a tail that is constant up to ``tol``
    is reported periodic with ``default_period``.

    Raises
    ------
    TrajectoryTooShortError
        If the span is below ``10 * T_hint`` (or ``min_horizon`` without hint).
    """
    span = traj.t_end - traj.t0
    if T_hint is not None:
        if T_hint <= 0:
            raise ValueError("T_hint must be positive")
        if span < 10 * T_hint * (1 - 1e-12):
            raise TrajectoryTooShortError(
                f"trajectory spans {span:.6g}, need >= {10 * T_hint:.6g}")
    elif span < min_horizon:
        raise TrajectoryTooShortError(f"trajectory spans {span:.6g}, need >= {min_horizon}")
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")

    t_b = traj.t_end
    tail_len = tail_fraction * span
    m = samples_per_period

    if T_hint is not None:
        T = float(T_hint)
        n_per = max(2, 2 * int(tail_len / (2 * T) + 1e-9))
        t_a = t_b - n_per * T
        if t_a < traj.t0 - 1e-9 * span:
            n_per = max(2, int(span / T + 1e-9))
            t_a = t_b - n_per * T
        t_a = max(t_a, traj.t0)
    else:
        t_a = t_b - tail_len
        coarse_t = np.linspace(t_a, t_b, 8193)
        coarse_x = traj(coarse_t)
        scale = 1.0 + float(np.abs(coarse_x).max())
        variation = float((coarse_x.max(axis=0) - coarse_x.min(axis=0)).max())
        if variation <= tol * scale:
            T = float(default_period)
            n_per = max(2, int(tail_len / T))
            t_a = max(traj.t0, t_b - n_per * T) if n_per * T <= span else t_a
        else:
            T_est = _autocorr_period(coarse_t, coarse_x)
            if T_est is None or T_est * 2 > tail_len:
                times = coarse_t
                return SteadyStateEstimate(
                    source=traj, tail_start_index=int(np.searchsorted(traj.times, t_a)),
                    t_start=t_a, times=times, states=coarse_x, period=None,
                    verdict="aperiodic", metric=float("inf"), scale=scale,
                    samples_per_period=m)
            T = T_est
            n_per = max(2, int(tail_len / T))
            t_a = t_b - n_per * T

    metric, times, states = _periodicity_metric(traj, t_a, t_b, T, m)
    scale = 1.0 + float(np.abs(states).max())
    if metric <= tol * scale:
        verdict = "periodic"
    elif metric <= 10 * tol * scale:
        verdict = "undecided"
    else:
        verdict = "aperiodic"
    return SteadyStateEstimate(
        source=traj, tail_start_index=int(np.searchsorted(traj.times, t_a)),
        t_start=float(times[0]), times=times, states=states, period=T,
        verdict=verdict, metric=metric, scale=scale, samples_per_period=m)


def reachable_tail_cloud(sys: ClosedLoopSystem | Callable, samples: Sequence[Sequence[float]],
                         t: float, t_end: float, rtol: float = 1e-10,
                         atol: float = 1e-12) -> np.ndarray:
    """All integrator grid states with time >= ``t`` over every sample.

    A finite stand-in for the reachable tail from the sampled initial set.
    """
    if t > t_end:
        raise ValueError("t must not exceed t_end")
    clouds = []
    for x0 in samples:
        tr = integrate(sys, x0, t_end, rtol=rtol, atol=atol)
        clouds.append(tr.states[tr.times >= t])
    return np.vstack(clouds)
