"""Companion-form internal models and the Linear Regulator.

The internal model ``eta' = Phi eta + G e`` uses the real block-companion
realization

    Phi = [[0, I, 0, ...], ..., [-a1 I, -a2 I, ..., -am I]],   G = (0, ..., 0, I)^T

whose characteristic polynomial is ``lambda^m + a_m lambda^(m-1) + ... + a_1``
(each root repeated ``n_e`` times).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import expr as ex
from .dynamics import (DimensionError, ExtendedPlant, InitialSet, LinearIMRegulator,
                       LinearizationBundle, linearize_at, names)

__all__ = [
    "RANK_TOL", "InternalModelError", "IllConditionedError", "SynthesisError",
    "InternalModelPair", "LinearPlantSS", "NonResonanceVerdict", "LinearRegulatorDesign",
    "companion_pair", "build_periodic_im", "build_frequency_im", "minimal_polynomial",
    "controllability_matrix", "numerical_rank", "non_resonance_check",
    "design_linear_regulator", "synthesize_linear_regulator", "as_linear_plant",
    "match_spectrum", "ackermann",
]

RANK_TOL = 1e-9
MAX_IM_BLOCKS = 64
MAX_MINPOLY_DIM = 12


class InternalModelError(ValueError):
    pass


class IllConditionedError(InternalModelError):
    """A numerical rank decision fell in the gray zone and was not guessed."""


class SynthesisError(ValueError):
    """A hypothesis of the Linear Regulator construction does not hold.

    ``condition`` names it: ``stabilizability``, ``detectability``,
    ``non-resonance``, ``placement``, ``minimal-polynomial`` or ``siso``.
    """

    def __init__(self, condition: str, message: str):
        super().__init__(f"{condition}: {message}")
        self.condition = condition


def numerical_rank(M: np.ndarray, tol: float = RANK_TOL) -> int:
    """Rank with singular values compared to ``tol * max(1, sigma_max)``."""
    M = np.atleast_2d(np.asarray(M))
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(sv > tol * max(1.0, sv[0])))


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(A)
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def _spectral_scale(M: np.ndarray) -> float:
    if M.size == 0:
        return 1.0
    return max(1.0, float(np.abs(np.linalg.eigvals(M)).max()))


def match_spectrum(got: Sequence[complex], want: Sequence[complex]) -> float:
    """Largest distance under the optimal one-to-one matching of two multisets."""
    got = np.asarray(got, dtype=complex)
    want = np.asarray(want, dtype=complex)
    if got.shape != want.shape:
        return math.inf
    cost = np.abs(got[:, None] - want[None, :])
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max()) if cost.size else 0.0


@dataclass(frozen=True, eq=False)
class InternalModelPair:
    """Companion pair ``(Phi, G)`` with its characteristic coefficients.

    ``char_coeffs`` holds ``a_1 .. a_m`` (constant term first); ``freqs`` the
    frequencies in Hz including the leading ``0`` when present.
    """

    phi: np.ndarray
    g: np.ndarray
    char_coeffs: tuple[float, ...]
    n_e: int
    freqs: tuple[float, ...] | None = None
    T: float | None = None

    @property
    def n_eta(self) -> int:
        return self.phi.shape[0]

    @property
    def order(self) -> int:
        return len(self.char_coeffs)

    def char_poly(self) -> np.ndarray:
        """Monic characteristic polynomial of the scalar companion, high first."""
        return np.concatenate([[1.0], np.asarray(self.char_coeffs)[::-1]])

    def expected_spectrum(self) -> np.ndarray:
        if self.freqs is None:
            roots = np.roots(self.char_poly())
        else:
            roots = []
            for nu in self.freqs:
                roots += [0.0] if nu == 0 else [2j * math.pi * nu, -2j * math.pi * nu]
            roots = np.asarray(roots, dtype=complex)
        return np.repeat(roots, self.n_e)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.phi)

    def spectrum_error(self) -> float:
        return match_spectrum(self.eigenvalues(), self.expected_spectrum())

    def geometric_multiplicities(self, tol: float = RANK_TOL) -> list[int]:
        scale = max(1.0, float(np.linalg.norm(self.phi, 2)))
        out = []
        for lam in np.unique(np.round(self.expected_spectrum(), 12)):
            M = self.phi - lam * np.eye(self.n_eta)
            sv = np.linalg.svd(M, compute_uv=False)
            out.append(int(np.sum(sv <= tol * scale)))
        return out

    def _balanced(self) -> tuple[np.ndarray, np.ndarray, float]:
        """Time-scaled companion pair ``(D^-1 Phi D / rho, D^-1 G)`` up to a factor on G.

        ``D = diag(rho^0, ..., rho^(m-1))`` with ``rho`` a power of two at least
        the spectral radius, so the similarity is exact.  Fast models have
        coefficients of size ``omega^(2d)``; in these coordinates the
        superdiagonal is one and the coefficients are bounded, which keeps
        rank and residual tests meaningful.  A pair not in companion form is
        returned unchanged with ``rho = 1``.
        """
        m, ne = self.order, self.n_e
        ref = companion_pair(self.char_coeffs, ne)
        if self.phi.shape != ref.phi.shape or not (
                np.array_equal(self.phi, ref.phi) and np.array_equal(self.g, ref.g)):
            return self.phi, self.g, 1.0
        radius = max(1.0, float(np.abs(self.expected_spectrum()).max(initial=0.0)))
        e = math.ceil(math.log2(radius))
        a = np.asarray(self.char_coeffs)
        scaled = np.ldexp(a, -e * (m - np.arange(m)))
        return companion_pair(scaled, ne).phi, ref.g, 2.0 ** e

    def controllability_rank(self, tol: float = RANK_TOL) -> int:
        """Dimension of the controllable subspace from the Hautus test.

        ``n_eta`` minus the rank loss of ``[Phi - lam I, G]`` summed over the
        distinct eigenvalues, on the balanced pair.  This equals the Kalman
        rank for diagonalizable ``Phi`` and avoids the ill-conditioned powers
        of the Krylov matrix.
        """
        P, G, rho = self._balanced()
        n = self.n_eta
        loss = 0
        for lam in np.unique(np.round(self.expected_spectrum(), 12)):
            M = np.hstack([P - (lam / rho) * np.eye(n), G])
            loss += n - numerical_rank(M, tol)
        return n - loss

    def cayley_hamilton_residual(self) -> float:
        """``||p(Phi)||_2`` on the balanced pair scaled to unit spectral radius.

        The similarity maps ``p(Phi)`` to ``D^-1 p(Phi) D / rho^m`` with roots
        in the unit disk, so the residual is relative to the terms involved.
        """
        P, _, rho = self._balanced()
        a = np.asarray(self.char_coeffs) / rho ** (self.order - np.arange(self.order))
        eye = np.eye(self.n_eta)
        acc = eye.copy()
        for coef in a[::-1]:  # Horner: ((P + a_m) P + a_(m-1)) ... + a_1
            acc = acc @ P + coef * eye
        return float(np.linalg.norm(acc, 2))

    def to_json(self) -> dict:
        return {
            "phi": self.phi.tolist(), "g": self.g.tolist(),
            "char_coeffs": list(self.char_coeffs), "n_e": self.n_e,
            "freqs": None if self.freqs is None else list(self.freqs), "T": self.T,
        }


def companion_pair(char_coeffs: Sequence[float], n_e: int = 1,
                   freqs: Sequence[float] | None = None,
                   T: float | None = None) -> InternalModelPair:
    """Block-companion ``(Phi, G)`` for ``lambda^m + a_m lambda^(m-1) + ... + a_1``."""
    a = np.asarray(char_coeffs, dtype=float)
    if a.ndim != 1 or a.size < 1:
        raise InternalModelError("need at least one characteristic coefficient")
    if n_e < 1:
        raise InternalModelError("n_e must be >= 1")
    m = a.size
    C = np.zeros((m, m))
    C[np.arange(m - 1), np.arange(1, m)] = 1.0
    C[-1, :] = -a
    C += 0.0  # canonicalize -0.0
    last = np.zeros((m, 1))
    last[-1, 0] = 1.0
    eye = np.eye(n_e)
    phi = np.kron(C, eye) + 0.0
    g = np.kron(last, eye)
    return InternalModelPair(phi=phi, g=g, char_coeffs=tuple(float(v) + 0.0 for v in a),
                             n_e=n_e, freqs=None if freqs is None else tuple(freqs), T=T)


def _im_from_angular(omegas: Sequence[float], n_e: int, freqs, T) -> InternalModelPair:
    if len(omegas) * n_e > MAX_IM_BLOCKS:
        raise InternalModelError(
            f"internal model too large: d*n_e = {len(omegas) * n_e} > {MAX_IM_BLOCKS}")
    p = np.array([1.0, 0.0])
    for w in omegas:
        p = np.polymul(p, [1.0, 0.0, w * w])
    return companion_pair(p[1:][::-1], n_e, freqs=freqs, T=T)


def build_periodic_im(T: float, d: int, n_e: int = 1) -> InternalModelPair:
    """Internal model with spectrum ``{0} U {+-i 2 pi k / T : k = 1..d}``."""
    if not T > 0:
        raise InternalModelError("T must be positive")
    if d < 0 or n_e < 1:
        raise InternalModelError("need d >= 0 and n_e >= 1")
    omegas = [2 * math.pi * k / T for k in range(1, d + 1)]
    freqs = [0.0] + [k / T for k in range(1, d + 1)]
    return _im_from_angular(omegas, n_e, freqs, float(T))


def build_frequency_im(freqs: Sequence[float], n_e: int = 1) -> InternalModelPair:
    """Internal model with spectrum ``{0} U {+-i 2 pi nu_k}`` for arbitrary ``nu_k > 0``."""
    freqs = [float(v) for v in freqs]
    if any(not v > 0 for v in freqs):
        raise InternalModelError("frequencies must be positive")
    if len(set(freqs)) != len(freqs):
        raise InternalModelError("duplicate frequencies")
    if n_e < 1:
        raise InternalModelError("n_e must be >= 1")
    return _im_from_angular([2 * math.pi * v for v in freqs], n_e, [0.0] + freqs, None)


# ---------------------------------------------------------------------------

def minimal_polynomial(S: np.ndarray, tol: float = RANK_TOL,
                       gray: float = 1e-6) -> np.ndarray:
    """Monic minimal polynomial of ``S``, coefficients highest degree first.

    Powers of ``S / ||S||`` are vectorized and appended until the new power
    falls in the span of the previous ones (relative singular value below
    ``tol``).  A relative singular value between ``tol`` and ``gray`` is an
    ambiguous rank decision and raises :class:`IllConditionedError`.

    Raises
    ------
    InternalModelError
        Non-square input, dimension above 12, repeated roots or roots off
        the imaginary axis (a marginally stable model is required).
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    n = S.shape[0]
    if S.shape != (n, n):
        raise InternalModelError("S must be square")
    if n > MAX_MINPOLY_DIM:
        raise InternalModelError(f"S of dimension {n} exceeds the cap {MAX_MINPOLY_DIM}")
    s = float(np.linalg.norm(S, 2))
    if s == 0.0:
        return np.array([1.0, 0.0])
    Sn = S / s
    vecs = [np.eye(n).ravel()]
    power = np.eye(n)
    coeffs = None
    for k in range(1, n + 1):
        power = power @ Sn
        M = np.column_stack(vecs + [power.ravel()])
        sv = np.linalg.svd(M, compute_uv=False)
        rel = sv[-1] / sv[0]
        if rel <= tol:
            c, *_ = np.linalg.lstsq(np.column_stack(vecs), power.ravel(), rcond=None)
            coeffs = c  # S_n^k = sum c_j S_n^j
            break
        if rel <= gray:
            raise IllConditionedError(
                f"rank decision at degree {k} is ambiguous (relative sv {rel:.3g})")
        vecs.append(power.ravel())
    if coeffs is None:  # Cayley-Hamilton guarantees termination at k = n
        raise IllConditionedError("Krylov sequence did not terminate")
    k = coeffs.size
    # p(lambda) = lambda^k - sum_j c_j s^(k-j) lambda^j
    low_first = np.array([-coeffs[j] * s ** (k - j) for j in range(k)])
    p = np.concatenate([[1.0], low_first[::-1]]) + 0.0
    # snap round-off around integers (rotation generators give 1, 0, 1)
    near = np.abs(p - np.round(p)) <= 1e-12 * np.maximum(1.0, np.abs(p))
    p[near] = np.round(p[near]) + 0.0
    # verification
    acc = np.zeros_like(S)
    for coef in p:
        acc = acc @ S + coef * np.eye(n)
    if np.linalg.norm(acc, 2) > 1e-8 * max(1.0, s ** k):
        raise IllConditionedError("minimal polynomial failed verification p(S) = 0")
    roots = np.roots(p) if k > 0 else np.array([])
    if np.any(np.abs(roots.real) > 1e-6 * max(1.0, s)):
        raise InternalModelError("S has eigenvalues off the imaginary axis")
    if roots.size > 1:
        gaps = np.abs(roots[:, None] - roots[None, :])
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() <= 1e-6 * max(1.0, s):
            raise InternalModelError(
                "minimal polynomial has a repeated root (non-trivial Jordan block)")
    return p


# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearPlantSS:
    """``w' = S w``, ``x' = A x + B u + P w``, ``e = C_e (w, x)``, ``y = C_y (w, x)``."""

    S: np.ndarray
    A: np.ndarray
    B: np.ndarray
    P: np.ndarray
    C_e: np.ndarray
    C_y: np.ndarray
    error_in_output: bool = True
    name: str = "linear-plant"

    def __post_init__(self):
        for attr in ("S", "A", "B", "P", "C_e", "C_y"):
            object.__setattr__(self, attr, np.atleast_2d(np.asarray(getattr(self, attr),
                                                                    dtype=float)))
        n_w, n_p = self.S.shape[0], self.A.shape[0]
        if self.S.shape != (n_w, n_w) or self.A.shape != (n_p, n_p):
            raise DimensionError("S and A must be square")
        if self.B.shape[0] != n_p or self.P.shape != (n_p, n_w):
            raise DimensionError("B or P has the wrong shape")
        if self.C_e.shape[1] != n_w + n_p or self.C_y.shape[1] != n_w + n_p:
            raise DimensionError("C_e and C_y act on the stacked (w, x)")
        if self.error_in_output:
            ne = self.C_e.shape[0]
            if self.C_y.shape[0] < ne or not np.array_equal(self.C_y[:ne], self.C_e):
                raise DimensionError("error_in_output requires the first rows of C_y = C_e")

    n_w = property(lambda self: self.S.shape[0])
    n_p = property(lambda self: self.A.shape[0])
    n_u = property(lambda self: self.B.shape[1])
    n_e = property(lambda self: self.C_e.shape[0])
    n_y = property(lambda self: self.C_y.shape[0])

    def replace(self, **changes) -> "LinearPlantSS":
        data = {k: getattr(self, k) for k in
                ("S", "A", "B", "P", "C_e", "C_y", "error_in_output", "name")}
        data.update(changes)
        return LinearPlantSS(**data)

    def bundle(self) -> LinearizationBundle:
        nw = self.n_w
        return LinearizationBundle(
            dfdx=self.A, dfdu=self.B, dfdw=self.P,
            dhedx=self.C_e[:, nw:], dhedw=self.C_e[:, :nw],
            dhpdx=self.C_y[:, nw:], dhpdw=self.C_y[:, :nw], dsdw=self.S)

    def to_extended(self) -> ExtendedPlant:
        wn, xn, un = names("w", self.n_w), names("x", self.n_p), names("u", self.n_u)
        s = [ex.linear_form(row, wn) for row in self.S]
        f = [ex.linear_form(np.concatenate([self.A[i], self.B[i], self.P[i]]), xn + un + wn)
             for i in range(self.n_p)]
        he = [ex.linear_form(row, wn + xn) for row in self.C_e]
        hp = [ex.linear_form(row, wn + xn) for row in self.C_y]
        if self.error_in_output:
            hp[:self.n_e] = he  # identical objects keep Assumption 1 syntactic
        return ExtendedPlant(self.n_w, self.n_p, self.n_u, s, f, hp, he,
                             error_in_output=self.error_in_output, name=self.name)

    def to_json(self) -> dict:
        return {"kind": "linear", "S": self.S.tolist(), "A": self.A.tolist(),
                "B": self.B.tolist(), "P": self.P.tolist(), "C_e": self.C_e.tolist(),
                "C_y": self.C_y.tolist(), "error_in_output": self.error_in_output}


def as_linear_plant(plant: ExtendedPlant | LinearPlantSS) -> LinearPlantSS:
    """Linearization at the origin (identity for a :class:`LinearPlantSS`)."""
    if isinstance(plant, LinearPlantSS):
        return plant
    lb = linearize_at(plant)
    C_e = np.hstack([lb.dhedw, lb.dhedx])
    C_y = np.hstack([lb.dhpdw, lb.dhpdx])
    if plant.error_in_output:
        C_y[:plant.n_e] = C_e
    return LinearPlantSS(S=lb.dsdw, A=lb.dfdx, B=lb.dfdu, P=lb.dfdw, C_e=C_e, C_y=C_y,
                         error_in_output=plant.error_in_output, name=plant.name)


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NonResonanceVerdict:
    passed: bool
    min_singular_values: tuple[tuple[complex, float], ...]

    def to_json(self) -> dict:
        return {"passed": self.passed,
                "per_eigenvalue": [{"re": lam.real, "im": lam.imag, "min_sv": sv}
                                   for lam, sv in self.min_singular_values]}


def non_resonance_check(lin: LinearizationBundle, exo_eigs: Sequence[complex],
                        tol: float = RANK_TOL) -> NonResonanceVerdict:
    """Rank test of ``[[df/dx - lam I, df/du], [dh_e/dx, 0]]`` at each ``lam``.

    Passes iff the smallest of the first ``n_p + n_e`` singular values exceeds
    ``tol`` for every eigenvalue.
    """
    A, B, Ce = lin.dfdx, lin.dfdu, lin.dhedx
    n_p, n_u, n_e = A.shape[0], B.shape[1], Ce.shape[0]
    need = n_p + n_e
    rows = []
    ok = True
    for lam in exo_eigs:
        lam = complex(lam)
        M = np.block([[A - lam * np.eye(n_p), B], [Ce, np.zeros((n_e, n_u))]])
        sv = np.linalg.svd(M, compute_uv=False)
        smin = float(sv[need - 1]) if sv.size >= need else 0.0
        ok &= smin > tol
        rows.append((lam, smin))
    return NonResonanceVerdict(passed=bool(ok), min_singular_values=tuple(rows))


def _poly_of_matrix(M: np.ndarray, roots: Sequence[float]) -> np.ndarray:
    out = np.eye(M.shape[0])
    for r in roots:
        out = out @ (M - r * np.eye(M.shape[0]))
    return out


def ackermann(A: np.ndarray, b: np.ndarray, poles: Sequence[float],
              tol: float = RANK_TOL) -> np.ndarray:
    """Row gain ``k`` with ``eig(A - b k) = poles`` (single input).

    Raises
    ------
    SynthesisError
        ``placement`` if ``(A, b)`` is not controllable.
    """
    n = A.shape[0]
    b = np.asarray(b, dtype=float).reshape(n, 1)
    Wc = controllability_matrix(A, b)
    rho = _spectral_scale(A)
    if numerical_rank(controllability_matrix(A / rho, b), tol) < n:
        raise SynthesisError("placement", "augmented pair is not controllable")
    e_last = np.zeros(n)
    e_last[-1] = 1.0
    row = np.linalg.solve(Wc.T, e_last)
    return row @ _poly_of_matrix(A, poles)


def _unstable_eigs(A: np.ndarray) -> np.ndarray:
    ev = np.linalg.eigvals(A) if A.size else np.array([])
    return ev[ev.real >= -1e-9]


def _pole_ladder(start: int, count: int) -> list[float]:
    return [-1.0 - 0.25 * (start + i) for i in range(count)]


@dataclass(frozen=True, eq=False)
class LinearRegulatorDesign:
    """Everything produced by the Linear Regulator synthesis."""

    plant: LinearPlantSS
    im: InternalModelPair
    K_x: np.ndarray
    K_eta: np.ndarray
    L: np.ndarray
    obs_row: int
    controller_poles: tuple[float, ...]
    observer_poles: tuple[float, ...]
    non_resonance: NonResonanceVerdict
    regulator: LinearIMRegulator

    def closed_loop_matrix(self, plant: LinearPlantSS | None = None) -> np.ndarray:
        """State matrix of ``(x, eta, x_hat)`` without the exosystem."""
        p = self.plant if plant is None else plant
        nw, npl = p.n_w, p.n_p
        A, B = p.A, p.B
        Cex = p.C_e[:, nw:]
        cy = p.C_y[self.obs_row, nw:][None, :]
        phi, g = self.im.phi, self.im.g
        n_eta = phi.shape[0]
        Ao = self.plant.A - self.plant.B @ self.K_x - self.L @ self.plant.C_y[self.obs_row, nw:][None, :]
        return np.block([
            [A, -B @ self.K_eta, -B @ self.K_x],
            [g @ Cex, phi, np.zeros((n_eta, npl))],
            [self.L @ cy, -self.plant.B @ self.K_eta, Ao],
        ])

    def closed_loop_eigenvalues(self, plant: LinearPlantSS | None = None) -> np.ndarray:
        return np.linalg.eigvals(self.closed_loop_matrix(plant))

    def to_json(self) -> dict:
        return {
            "phi": self.im.phi.tolist(), "g": self.im.g.tolist(),
            "char_coeffs": list(self.im.char_coeffs),
            "K_x": self.K_x.tolist(), "K_eta": self.K_eta.tolist(), "L": self.L.tolist(),
            "observer_output": self.obs_row + 1,
            "controller_poles": list(self.controller_poles),
            "observer_poles": list(self.observer_poles),
            "non_resonance": self.non_resonance.to_json(),
        }


def design_linear_regulator(plant: ExtendedPlant | LinearPlantSS,
                            im: InternalModelPair | None = None) -> LinearRegulatorDesign:
    """Internal model plus observer-based stabilizer for a SISO error channel.

    Without ``im`` the model's characteristic polynomial is the minimal
    polynomial of ``S``.  Hypotheses are checked in order: SISO,
    stabilizability, detectability, non-resonance; each failure raises
    :class:`SynthesisError` naming the condition.
    """
    lp = as_linear_plant(plant)
    nw, npl = lp.n_w, lp.n_p
    if lp.n_e != 1 or lp.n_u != 1:
        raise SynthesisError("siso", "Linear Regulator synthesis needs n_e = n_u = 1")
    if not lp.error_in_output:
        raise SynthesisError("siso", "the error must be the first measured output")
    A, B = lp.A, lp.B
    Cyx = lp.C_y[:, nw:]
    Cex = lp.C_e[:, nw:]

    for lam in _unstable_eigs(A):
        if numerical_rank(np.hstack([A - lam * np.eye(npl), B])) < npl:
            raise SynthesisError("stabilizability", f"(A, B) loses rank at {lam:.6g}")
    for lam in _unstable_eigs(A):
        if numerical_rank(np.vstack([A - lam * np.eye(npl), Cyx])) < npl:
            raise SynthesisError("detectability", f"(A, C_y) loses rank at {lam:.6g}")

    if im is None:
        try:
            p = minimal_polynomial(lp.S)
        except InternalModelError as exc:
            raise SynthesisError("minimal-polynomial", str(exc)) from None
        im = companion_pair(p[1:][::-1], n_e=1)
    elif im.n_e != 1:
        raise SynthesisError("siso", "internal model must have n_e = 1")

    eigs = list(np.linalg.eigvals(lp.S)) + list(im.eigenvalues())
    uniq: list[complex] = []
    for lam in eigs:
        if all(abs(lam - u) > 1e-9 for u in uniq):
            uniq.append(complex(np.round(lam.real, 12), np.round(lam.imag, 12)))
    nr = non_resonance_check(lp.bundle(), uniq)
    if not nr.passed:
        raise SynthesisError("non-resonance", "pencil loses rank at an internal-model eigenvalue")

    n_eta = im.n_eta
    Aaug = np.block([[A, np.zeros((npl, n_eta))], [im.g @ Cex, im.phi]])
    Baug = np.vstack([B, np.zeros((n_eta, 1))])
    ctrl_poles = _pole_ladder(0, npl + n_eta)
    K = ackermann(Aaug, Baug, ctrl_poles)[None, :]
    K_x, K_eta = K[:, :npl], K[:, npl:]

    obs_poles = _pole_ladder(npl + n_eta, npl)
    obs_row = None
    for j in range(Cyx.shape[0]):
        c = Cyx[j]
        if numerical_rank(controllability_matrix(A.T / _spectral_scale(A), c)) == npl:
            obs_row = j
            break
    if obs_row is None:
        raise SynthesisError("detectability",
                             "no single measured output makes the plant observable")
    L = ackermann(A.T, Cyx[obs_row], obs_poles)[:, None]

    reg = _emit_regulator(lp, im, K_x, K_eta, L, obs_row)
    return LinearRegulatorDesign(plant=lp, im=im, K_x=K_x, K_eta=K_eta, L=L,
                                 obs_row=obs_row, controller_poles=tuple(ctrl_poles),
                                 observer_poles=tuple(obs_poles), non_resonance=nr,
                                 regulator=reg)


def _emit_regulator(lp: LinearPlantSS, im: InternalModelPair, K_x, K_eta, L,
                    obs_row: int) -> LinearIMRegulator:
    nw, npl = lp.n_w, lp.n_p
    n_eta = im.n_eta
    n_c = n_eta + npl
    cn, yn = names("c", n_c), names("y", lp.n_y)
    eta_n, xh_n = cn[:n_eta], cn[n_eta:]
    cy = lp.C_y[obs_row, nw:][None, :]
    Ao = lp.A - lp.B @ K_x - L @ cy
    f_c = []
    for i in range(n_eta):
        f_c.append(ex.linear_form(np.concatenate([im.phi[i], im.g[i]]),
                                  eta_n + yn[:im.n_e]))
    Mx = -lp.B @ K_eta
    for i in range(npl):
        ycoef = np.zeros(lp.n_y)
        ycoef[obs_row] = L[i, 0]
        f_c.append(ex.linear_form(np.concatenate([Mx[i], Ao[i], ycoef]), eta_n + xh_n + yn))
    h_c = [ex.linear_form(np.concatenate([-K_eta[0], -K_x[0]]), eta_n + xh_n)]
    return LinearIMRegulator(n_c=n_c, n_y=lp.n_y, f_c=f_c, h_c=h_c,
                             x_c0=InitialSet.zeros(n_c), name="linear-regulator",
                             phi=im.phi, g=im.g)


def synthesize_linear_regulator(plant: ExtendedPlant | LinearPlantSS,
                                im: InternalModelPair | None = None) -> LinearIMRegulator:
    """The Linear Regulator (internal model + observer-based stabilizer)."""
    return design_linear_regulator(plant, im).regulator
