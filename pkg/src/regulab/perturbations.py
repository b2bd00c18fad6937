"""Computable semimetrics and seeded perturbation samplers.

Compact sets are represented by finite grids.  Trigonometric polynomials
``sigma(t) = alpha + sum_n (beta_n sin(n t) + gamma_n cos(n t))`` are lifted
to functions of the rotation state ``(w1, w2) = (sin t, cos t)`` through the
Chebyshev-like recursion

    r_1 = a, q_1 = b,  r_{n+1} = r_n b + q_n a,  q_{n+1} = q_n b - r_n a,

which satisfies ``r_n(sin t, cos t) = sin(n t)`` and ``q_n(sin t, cos t) = cos(n t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from . import expr as ex
from .expr import Expr

__all__ = [
    "CompactGrid", "TrigPolynomial", "LiftResult", "weak_ck_semimetric",
    "hausdorff_distance", "trig_recursion", "lift_to_c0", "delta_for_ball",
    "sample_trig_ball", "trig_direction", "perturb_linear", "substream",
]


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for sample ``index`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


@dataclass(frozen=True, eq=False)
class CompactGrid:
    """Finite point set standing in for a compact subset of R^n."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    counts: tuple[int, ...]
    points: np.ndarray
    resolution: float
    shape: str = "box"
    boundary: int = 0

    @classmethod
    def box(cls, lower: Sequence[float], upper: Sequence[float],
            counts: int | Sequence[int]) -> "CompactGrid":
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        n = lo.size
        cnt = (int(counts),) * n if np.isscalar(counts) else tuple(int(c) for c in counts)
        if hi.size != n or len(cnt) != n or n == 0:
            raise ValueError("grid bounds and counts must agree in dimension")
        if np.any(hi < lo) or min(cnt) < 1:
            raise ValueError("grid needs lower <= upper and counts >= 1")
        axes = [np.linspace(a, b, c) if c > 1 else np.array([0.5 * (a + b)])
                for a, b, c in zip(lo, hi, cnt)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        res = max(((b - a) / (c - 1) if c > 1 else (b - a))
                  for a, b, c in zip(lo, hi, cnt))
        return cls(tuple(lo), tuple(hi), cnt, pts, float(res))

    @classmethod
    def unit_disk(cls, count: int = 201, radius: float = 1.0,
                  boundary: int = 720) -> "CompactGrid":
        """Square grid clipped to the closed disk plus points on its boundary."""
        sq = cls.box([-radius, -radius], [radius, radius], count)
        inside = sq.points[np.linalg.norm(sq.points, axis=1) <= radius * (1 + 1e-12)]
        th = 2 * math.pi * np.arange(boundary) / boundary
        rim = radius * np.column_stack([np.sin(th), np.cos(th)])
        return cls(sq.lower, sq.upper, sq.counts, np.vstack([inside, rim]),
                   sq.resolution, shape="disk", boundary=boundary)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def refined(self) -> "CompactGrid":
        """Same set at (about) twice the resolution."""
        counts = tuple(2 * c - 1 if c > 1 else 1 for c in self.counts)
        if self.shape == "disk":
            return CompactGrid.unit_disk(counts[0], radius=self.upper[0],
                                         boundary=2 * self.boundary)
        return CompactGrid.box(self.lower, self.upper, counts)

    def to_json(self) -> dict:
        return {"shape": self.shape, "boundary": self.boundary, "lower": list(self.lower), "upper": list(self.upper),
                "counts": list(self.counts), "resolution": self.resolution,
                "n_points": int(self.points.shape[0])}


# ---------------------------------------------------------------------------

def _as_expr_list(F) -> list[Expr]:
    if isinstance(F, (Expr, str)):
        F = [F]
    return [ex.parse(f) if isinstance(f, str) else f for f in F]


def weak_ck_semimetric(F, G, k: int, grid: CompactGrid,
                       variables: Sequence[str]) -> float:
    """``max_{i <= k} sup_grid |F^(i) - G^(i)|`` for maps given as expression lists.

    Values and (for ``k = 1``) every first partial derivative are compared
    with the max-abs norm over components.

    Raises
    ------
    ValueError
        On a signature mismatch or ``k`` outside ``{0, 1}``.
    DomainError
        If an expression cannot be evaluated on the grid.
    """
    F, G = _as_expr_list(F), _as_expr_list(G)
    variables = list(variables)
    if len(F) != len(G):
        raise ValueError("maps have different numbers of components")
    if grid.dim != len(variables):
        raise ValueError("grid dimension does not match the variable list")
    if k not in (0, 1):
        raise ValueError("k must be 0 or 1")
    allowed = set(variables)
    for e in F + G:
        extra = ex.free_vars(e) - allowed
        if extra:
            raise ValueError(f"expression depends on {sorted(extra)} outside the signature")
    diffs = [ex.sub(f, g) for f, g in zip(F, G)]
    exprs = list(diffs)
    if k == 1:
        exprs += [ex.differentiate(d, v) for d in diffs for v in variables]
    fn = ex.compile_vectorized(exprs, variables)
    vals = fn(grid.points.T)
    return float(np.max(np.abs(vals))) if vals.size else 0.0


def hausdorff_distance(X, Z) -> float:
    """Exact Hausdorff distance between two finite point sets (Euclidean)."""
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Z.ndim == 1:
        Z = Z[:, None]
    if X.shape[0] == 0 or Z.shape[0] == 0:
        raise ValueError("Hausdorff distance needs nonempty sets")
    if X.shape[1] != Z.shape[1]:
        raise ValueError("point sets have different dimensions")
    D = cdist(X, Z)
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrigPolynomial:
    """Bias plus ``N`` harmonics; ``coeffs`` is ``(alpha, b1, g1, ..., bN, gN)``."""

    coeffs: tuple[float, ...]

    def __post_init__(self):
        c = tuple(float(v) for v in self.coeffs)
        if len(c) % 2 != 1:
            raise ValueError("coefficient vector must have odd length 2N+1")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_parts(cls, alpha: float, beta: Sequence[float],
                   gamma: Sequence[float]) -> "TrigPolynomial":
        if len(beta) != len(gamma):
            raise ValueError("beta and gamma must have equal length")
        out = [alpha]
        for b, g in zip(beta, gamma):
            out += [b, g]
        return cls(tuple(out))

    @property
    def N(self) -> int:
        return (len(self.coeffs) - 1) // 2

    @property
    def alpha(self) -> float:
        return self.coeffs[0]

    @property
    def beta(self) -> tuple[float, ...]:
        return self.coeffs[1::2]

    @property
    def gamma(self) -> tuple[float, ...]:
        return self.coeffs[2::2]

    def phi(self) -> np.ndarray:
        """Coordinate vector in R^(2N+1)."""
        return np.array(self.coeffs)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, self.alpha)
        for n, (b, g) in enumerate(zip(self.beta, self.gamma), start=1):
            out = out + b * np.sin(n * t) + g * np.cos(n * t)
        return out

    def to_json(self) -> dict:
        return {"N": self.N, "alpha": self.alpha, "beta": list(self.beta),
                "gamma": list(self.gamma)}


def trig_recursion(N: int, a: str = "w1", b: str = "w2") -> list[tuple[Expr, Expr]]:
    """Pairs ``(r_n, q_n)`` for ``n = 1..N`` as expressions in ``a`` and ``b``.

    Nodes are shared between levels, so the trees stay linear in size.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    A, B = ex.var(a), ex.var(b)
    r, q = A, B
    out = [(r, q)]
    for _ in range(1, N):
        r, q = ex.add(ex.mul(r, B), ex.mul(q, A)), ex.sub(ex.mul(q, B), ex.mul(r, A))
        out.append((r, q))
    return out


def _grid_sups(N: int, K: CompactGrid) -> tuple[np.ndarray, np.ndarray]:
    if K.dim != 2:
        raise ValueError("lift grids live in the (w1, w2) plane")
    a, b = K.points[:, 0], K.points[:, 1]
    r, q = a.copy(), b.copy()
    sr, sq = [np.abs(r).max()], [np.abs(q).max()]
    for _ in range(1, N):
        r, q = r * b + q * a, q * b - r * a
        sr.append(np.abs(r).max())
        sq.append(np.abs(q).max())
    return np.array(sr), np.array(sq)


@dataclass(frozen=True, eq=False)
class LiftResult:
    expr: Expr
    sup_on_grid: float
    identity_error: float


def _lift_expr(sigma: TrigPolynomial) -> Expr:
    out: Expr = ex.ZERO if sigma.alpha == 0.0 else ex.const(sigma.alpha)
    if sigma.N == 0:
        return out
    for (r, q), b, g in zip(trig_recursion(sigma.N), sigma.beta, sigma.gamma):
        if b != 0.0:
            out = ex.add(out, ex.mul(ex.const(b), r))
        if g != 0.0:
            out = ex.add(out, ex.mul(ex.const(g), q))
    return out


def lift_to_c0(sigma: TrigPolynomial, K: CompactGrid | None = None,
               n_check: int = 4096) -> LiftResult:
    """``c_sigma(w1, w2)`` with ``c_sigma(sin t, cos t) = sigma(t)``.

    Reports ``sup_K |c_sigma|`` (``nan`` without a grid) and the largest
    deviation from ``sigma`` over ``n_check`` points of one period.
    """
    e = _lift_expr(sigma)
    fn = ex.compile_vectorized([e], ["w1", "w2"])
    t = 2 * math.pi * np.arange(n_check) / n_check
    along = fn(np.vstack([np.sin(t), np.cos(t)]))[0]
    ident = float(np.max(np.abs(along - sigma(t))))
    sup = float(np.max(np.abs(fn(K.points.T)[0]))) if K is not None else float("nan")
    return LiftResult(expr=e, sup_on_grid=sup, identity_error=ident)


def delta_for_ball(epsilon: float, N: int, K: CompactGrid) -> float:
    """``epsilon / (1 + sum_n (sup_K |r_n| + sup_K |q_n|))``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    sr, sq = _grid_sups(N, K)
    return float(epsilon / (1.0 + sr.sum() + sq.sum()))


def trig_direction(N: int, seed: int, index: int = 0) -> tuple[np.ndarray, float]:
    """Unit direction and radial quantile ``U^(1/(2N+1))`` of one ball sample."""
    rng = substream(seed, index)
    v = rng.standard_normal(2 * N + 1)
    u = rng.random()
    return v / np.linalg.norm(v), float(u ** (1.0 / (2 * N + 1)))


def sample_trig_ball(N: int, delta: float, seed: int, index: int = 0) -> TrigPolynomial:
    """Uniform draw from the open Euclidean ball of radius ``delta`` in R^(2N+1)."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if N < 0:
        raise ValueError("N must be non-negative")
    direction, rad = trig_direction(N, seed, index)
    return TrigPolynomial(tuple(direction * (delta * rad)))


def perturb_linear(plant, epsilon: float, seed: int, freeze_S: bool = True,
                   index: int = 0):
    """Entrywise uniform ``[-epsilon, epsilon]`` perturbation of a linear plant.

    ``A``, ``B``, ``P``, ``C_e`` and ``C_y`` are perturbed; ``S`` only when
    ``freeze_S`` is false.  When the error is part of the measurement the
    first rows of ``C_y`` follow ``C_e`` so that ``y = (e, y_aux)`` survives.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if epsilon == 0:
        return plant
    rng = substream(seed, index)

    def bump(M):
        return M + rng.uniform(-epsilon, epsilon, size=M.shape)

    S = plant.S if freeze_S else bump(plant.S)
    A, B, P, C_e, C_y = (bump(plant.A), bump(plant.B), bump(plant.P), bump(plant.C_e),
                         bump(plant.C_y))
    if plant.error_in_output:
        C_y = C_y.copy()
        C_y[:plant.n_e] = C_e
    return plant.replace(S=S, A=A, B=B, P=P, C_e=C_e, C_y=C_y)
