"""Fourier coefficients of steady-state signals and property verdicts.

Two conventions coexist:

* ``c_k(a) = int_0^T a(t) exp(-i 2 pi k t / T) dt`` over one period
  (unnormalized, no ``1/T``);
* ``c'_nu(a) = lim_H (1/H) int_0^H a(t) exp(-i 2 pi nu t) dt`` (time average).

For a ``T``-periodic signal ``T * c'_{k/T} = c_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .simulate import SteadyStateEstimate

__all__ = [
    "GridError", "HorizonTooShortError", "PropertyError", "fourier_coeff",
    "fourier_coeffs", "generalized_fourier_coeff", "GeneralizedCoefficient",
    "PropertySpec", "PropertyVerdict", "evaluate_property", "PROPERTY_KINDS",
    "spectrum_rows",
]

PROPERTY_KINDS = ("P_A", "P_eq", "P_0", "P_eps", "P_DC", "P_T_weak", "P_T",
                  "P_nu_weak", "P_nu")
DEFAULT_TOL = 1e-3
MIN_PERIODS = 20


class GridError(ValueError):
    pass


class HorizonTooShortError(ValueError):
    pass


class PropertyError(ValueError):
    pass


def _check_uniform(times: np.ndarray) -> float:
    dt = np.diff(times)
    if dt.size == 0 or np.any(dt <= 0):
        raise GridError("sample times must be strictly increasing")
    h = float(dt.mean())
    if np.max(np.abs(dt - h)) > 1e-9 * max(h, 1.0):
        raise GridError("sample grid is not uniform")
    return h


def fourier_coeff(samples, T: float, k: int, times=None, endpoint: bool = False):
    """Unnormalized coefficient ``c_k`` of one period of samples.

    Parameters
    ----------
    samples : array_like, shape (M,) or (M, n)
        One period on a uniform grid.  With ``endpoint=False`` (default) the
        grid is ``t_j = j T / M``; with ``endpoint=True`` the last sample is
        the repeated value at ``T`` and is dropped.
    T : float
        Period.
    k : int
        Harmonic index, ``k >= 0``.
    times : array_like, optional
        Sample times, checked for uniformity and for spanning one period.

    Returns
    -------
    complex or ndarray of complex
        The trapezoid rule, which for periodic data is the mean times ``T``.

    Raises
    ------
    GridError
        Non-uniform grid, wrong span, or fewer than ``8 k`` points.
    """
    x = np.asarray(samples, dtype=float)
    if endpoint:
        x = x[:-1]
    M = x.shape[0]
    if k < 0:
        raise ValueError("k must be non-negative")
    if M < max(8 * k, 2):
        raise GridError(f"need at least {max(8 * k, 2)} samples per period, got {M}")
    if times is not None:
        t = np.asarray(times, dtype=float)
        t = t[:-1] if endpoint else t
        h = _check_uniform(t) if t.size > 1 else T / M
        if abs(h * M - T) > 1e-9 * T:
            raise GridError("samples do not span exactly one period")
        t0 = float(t[0])
    else:
        t0 = 0.0
    tj = t0 + np.arange(M) * (T / M)
    phase = np.exp(-2j * math.pi * k * tj / T)
    if x.ndim == 1:
        return complex(T / M * np.dot(x, phase))
    return T / M * (phase @ x)


def fourier_coeffs(samples, T: float, K: int, **kw) -> np.ndarray:
    """``c_0 .. c_K`` stacked along the first axis."""
    return np.array([fourier_coeff(samples, T, k, **kw) for k in range(K + 1)])


@dataclass(frozen=True)
class GeneralizedCoefficient:
    value: complex | np.ndarray
    convergence: float
    horizon: float


def generalized_fourier_coeff(samples, dt: float, nu: float, t0: float = 0.0,
                              reference_period: float | None = None
                              ) -> GeneralizedCoefficient:
    """Time-averaged coefficient ``c'_nu`` over the sampled horizon.

    ``samples`` lie on the closed grid ``t0 + j dt, j = 0..n``.  The average
    is also formed over the first half of the horizon; the absolute change is
    returned as a convergence estimate.

    Raises
    ------
    HorizonTooShortError
        If the horizon spans fewer than 20 periods of ``nu`` (or of
        ``reference_period`` when ``nu == 0``).
    """
    x = np.asarray(samples, dtype=float)
    n = x.shape[0] - 1
    if n < 2:
        raise HorizonTooShortError("need at least three samples")
    H = n * dt
    if nu < 0:
        raise ValueError("nu must be non-negative")
    period = 1.0 / nu if nu > 0 else reference_period
    if period is not None and H < MIN_PERIODS * period * (1 - 1e-12):
        raise HorizonTooShortError(
            f"horizon {H:.6g} covers fewer than {MIN_PERIODS} periods of {period:.6g}")
    t = t0 + dt * np.arange(n + 1)
    phase = np.exp(-2j * math.pi * nu * t)

    def avg(m: int):
        w = np.full(m + 1, dt)
        w[0] = w[-1] = dt / 2
        wp = w * phase[:m + 1]
        val = wp @ x[:m + 1]
        return val / (m * dt)

    full = avg(n)
    half = avg(n // 2)
    conv = float(np.max(np.abs(np.asarray(full) - np.asarray(half))))
    if x.ndim == 1:
        full = complex(full)
    return GeneralizedCoefficient(value=full, convergence=conv, horizon=H)


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PropertySpec:
    """A steady-state property with its tolerance.

    ``params`` per kind: ``P_A`` needs ``lower``/``upper`` box bounds on the
    full state; ``P_eps`` needs ``epsilon``; ``P_T``/``P_T_weak`` need ``T``
    and ``d``; ``P_nu``/``P_nu_weak`` need ``freqs`` (Hz, a leading ``0`` is
    implied).  The tolerance is relative: a metric passes when it is at most
    ``tol * (1 + sup |signal|)``.  ``P_0`` and ``P_eps`` compare ``sup |e|``
    against ``tol`` and ``epsilon`` directly.
    """

    kind: str
    tol: float = DEFAULT_TOL
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PROPERTY_KINDS:
            raise PropertyError(f"unknown property kind {self.kind!r}")
        if not self.tol > 0:
            raise PropertyError("tolerance must be positive")
        need = {"P_A": ("lower", "upper"), "P_eps": ("epsilon",), "P_T": ("T", "d"),
                "P_T_weak": ("T", "d"), "P_nu": ("freqs",), "P_nu_weak": ("freqs",)}
        for key in need.get(self.kind, ()):
            if key not in self.params:
                raise PropertyError(f"{self.kind} needs parameter {key!r}")
        if self.kind in ("P_T", "P_T_weak"):
            if not self.params["T"] > 0 or int(self.params["d"]) < 0:
                raise PropertyError("need T > 0 and d >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "PropertySpec":
        data = dict(data)
        kind = data.pop("kind")
        tol = float(data.pop("tol", DEFAULT_TOL))
        return cls(kind=kind, tol=tol, params=data)

    def to_json(self) -> dict:
        return {"kind": self.kind, "tol": self.tol, **self.params}


@dataclass(frozen=True)
class PropertyVerdict:
    holds: bool
    vacuous: bool
    metric: float
    threshold: float
    metrics: dict

    def to_json(self) -> dict:
        return {"holds": self.holds, "vacuous": self.vacuous, "metric": self.metric,
                "threshold": self.threshold, "metrics": dict(self.metrics)}


def _error_signal(ss: SteadyStateEstimate, error_fn) -> np.ndarray:
    if error_fn is None:
        raise PropertyError("an error map is required for this property")
    e = np.asarray(error_fn(ss.states.T), dtype=float)
    return e.reshape(-1, ss.states.shape[0]).T  # (n_times, n_e)


def _period_samples(ss: SteadyStateEstimate, signal: np.ndarray, T: float) -> np.ndarray:
    """Final full period of ``signal`` (endpoint excluded) resampled at period ``T``."""
    if ss.period is not None and abs(ss.period - T) <= 1e-9 * T:
        m = ss.samples_per_period
        return signal[-m - 1:-1]
    raise PropertyError("steady state was not resampled at the requested period")


def _harmonic_metrics(e_per: np.ndarray, T: float, K: int) -> dict:
    out = {}
    for k in range(K + 1):
        out[f"abs_c{k}"] = float(np.max(np.abs(fourier_coeff(e_per, T, k))))
    return out


def evaluate_property(prop: PropertySpec, ss: SteadyStateEstimate, error_fn=None,
                      eta_slice: slice | None = None,
                      nu_conv_tol: float | None = None) -> PropertyVerdict:
    """Evaluate ``prop`` on a steady-state segment.

    Parameters
    ----------
    error_fn : callable, optional
        Vectorized error map applied to states of shape ``(dim, n)``.
    eta_slice : slice, optional
        Location of the internal-model state, used by the weak properties.
    nu_conv_tol : float, optional
        Convergence threshold for the generalized coefficients of ``eta``
        (defaults to ``prop.tol``).
    """
    kind = prop.kind
    metrics: dict = {}
    vacuous = False
    x = ss.states

    if kind == "P_A":
        lo = np.asarray(prop.params["lower"], dtype=float)
        hi = np.asarray(prop.params["upper"], dtype=float)
        excess = np.maximum(np.maximum(lo - x, x - hi), 0.0)
        metric = float(np.max(np.linalg.norm(excess, axis=1)))
        threshold = prop.tol
        metrics["dist_to_A"] = metric
        return PropertyVerdict(metric <= threshold, False, metric, threshold, metrics)

    if kind == "P_eq":
        metric = float(np.max(x.max(axis=0) - x.min(axis=0)))
        threshold = prop.tol * (1.0 + float(np.abs(x).max()))
        metrics["state_variation"] = metric
        return PropertyVerdict(metric <= threshold, False, metric, threshold, metrics)

    e = _error_signal(ss, error_fn)
    sup_e = float(np.abs(e).max())
    scale = 1.0 + sup_e
    metrics["sup_e"] = sup_e

    if kind == "P_0":
        return PropertyVerdict(sup_e <= prop.tol, False, sup_e, prop.tol, metrics)
    if kind == "P_eps":
        eps = float(prop.params["epsilon"])
        return PropertyVerdict(sup_e <= eps, False, sup_e, eps, metrics)

    if kind == "P_DC":
        T = ss.period if ss.period is not None else None
        if T is not None and ss.verdict != "aperiodic":
            per = _period_samples(ss, e, T)
            mean = np.abs(fourier_coeff(per, T, 0)) / T
        else:
            mean = np.abs(e.mean(axis=0))
        metric = float(np.max(mean))
        metrics["abs_mean_e"] = metric
        threshold = prop.tol * scale
        return PropertyVerdict(metric <= threshold, False, metric, threshold, metrics)

    if kind in ("P_T", "P_T_weak"):
        T = float(prop.params["T"])
        d = int(prop.params["d"])
        threshold = prop.tol * scale
        periodic = ss.is_periodic and ss.period is not None and abs(ss.period - T) <= 1e-9 * T
        metrics["periodic"] = bool(periodic)
        if not periodic:
            if kind == "P_T_weak":
                return PropertyVerdict(True, True, 0.0, threshold, metrics)
            return PropertyVerdict(False, False, math.inf, threshold, metrics)
        per = _period_samples(ss, e, T)
        metrics.update(_harmonic_metrics(per, T, d + 2))
        metric = max(metrics[f"abs_c{k}"] for k in range(d + 1))
        return PropertyVerdict(metric <= threshold, False, metric, threshold, metrics)

    # P_nu / P_nu_weak
    freqs = [0.0] + [float(v) for v in prop.params["freqs"] if float(v) != 0.0]
    threshold = prop.tol * scale
    conv_tol = prop.tol if nu_conv_tol is None else nu_conv_tol
    dt = ss.dt
    ref = max(1.0 / v for v in freqs[1:]) if len(freqs) > 1 else ss.period
    if kind == "P_nu_weak" and eta_slice is not None:
        eta = x[:, eta_slice]
        eta_scale = 1.0 + float(np.abs(eta).max())
        worst = 0.0
        for nu in freqs:
            g = generalized_fourier_coeff(eta, dt, nu, t0=float(ss.times[0]),
                                          reference_period=ref)
            worst = max(worst, g.convergence)
        metrics["eta_convergence"] = worst
        if worst > conv_tol * eta_scale:
            return PropertyVerdict(True, True, 0.0, threshold, metrics)
    metric = 0.0
    worst_conv = 0.0
    for j, nu in enumerate(freqs):
        g = generalized_fourier_coeff(e, dt, nu, t0=float(ss.times[0]), reference_period=ref)
        val = float(np.max(np.abs(g.value)))
        metrics[f"abs_cprime_{j}"] = val
        worst_conv = max(worst_conv, g.convergence)
        metric = max(metric, val)
    metrics["e_convergence"] = worst_conv
    return PropertyVerdict(metric <= threshold, False, metric, threshold, metrics)


def spectrum_rows(ss: SteadyStateEstimate, error_fn, T: float, K: int) -> list[tuple]:
    """Rows ``(k, component, re, im, abs)`` of the error spectrum over one period."""
    e = _error_signal(ss, error_fn)
    per = _period_samples(ss, e, T)
    rows = []
    for k in range(K + 1):
        c = np.atleast_1d(fourier_coeff(per, T, k))
        for j, v in enumerate(c):
            rows.append((k, j + 1, float(v.real), float(v.imag), float(abs(v))))
    return rows
