"""Extended plants, regulators and their closed-loop interconnection."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import expr as ex
from .expr import Expr

__all__ = [
    "DimensionError", "InitialSet", "ExtendedPlant", "Regulator",
    "LinearIMRegulator", "ClosedLoopSystem", "LinearizationBundle",
    "compose_closed_loop", "linearize_at", "names",
]


class DimensionError(ValueError):
    pass


def names(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i + 1}" for i in range(n)]


_FAMILY_RE = re.compile(r"^([a-z])(\d+)$")


def _check_vars(exprs: Sequence[Expr], allowed: dict[str, int], what: str) -> None:
    for k, e in enumerate(exprs):
        for v in ex.free_vars(e):
            m = _FAMILY_RE.match(v)
            fam, idx = (m.group(1), int(m.group(2))) if m else (v, 0)
            if fam not in allowed or idx > allowed[fam]:
                raise DimensionError(f"{what}[{k}] uses variable {v!r} outside its signature")


def _as_exprs(items) -> tuple[Expr, ...]:
    return tuple(ex.parse(s) if isinstance(s, str) else s for s in items)


@dataclass(frozen=True)
class InitialSet:
    """Axis-aligned box (a point when ``lower == upper``)."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or any(a > b for a, b in zip(lo, hi)):
            raise DimensionError("initial box bounds are inconsistent")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def point(cls, p: Sequence[float]) -> "InitialSet":
        return cls(tuple(p), tuple(p))

    @classmethod
    def zeros(cls, n: int) -> "InitialSet":
        return cls.point([0.0] * n)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def lattice(self) -> list[np.ndarray]:
        """Corners of the box plus its center, degenerate axes collapsed."""
        lo, hi = np.array(self.lower), np.array(self.upper)
        free = [i for i in range(self.dim) if hi[i] > lo[i]]
        center = 0.5 * (lo + hi)
        pts = [center]
        for mask in range(2 ** len(free)):
            p = center.copy()
            for j, i in enumerate(free):
                p[i] = hi[i] if (mask >> j) & 1 else lo[i]
            pts.append(p)
        if not free:
            return [center]
        return pts

    def to_json(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class ExtendedPlant:
    """Exosystem plus plant: ``w' = s(w)``, ``x' = f_p(w, x, u)``,
    ``y = h_p(w, x)`` and regulation error ``e = h_e(w, x)``."""

    n_w: int
    n_p: int
    n_u: int
    s: tuple[Expr, ...]
    f_p: tuple[Expr, ...]
    h_p: tuple[Expr, ...]
    h_e: tuple[Expr, ...]
    error_in_output: bool = True
    name: str = "plant"

    def __post_init__(self):
        for attr in ("s", "f_p", "h_p", "h_e"):
            object.__setattr__(self, attr, _as_exprs(getattr(self, attr)))
        if len(self.s) != self.n_w:
            raise DimensionError(f"s has {len(self.s)} components, n_w={self.n_w}")
        if len(self.f_p) != self.n_p:
            raise DimensionError(f"f_p has {len(self.f_p)} components, n_p={self.n_p}")
        if not self.h_e:
            raise DimensionError("h_e must have at least one component")
        _check_vars(self.s, {"w": self.n_w}, "s")
        _check_vars(self.f_p, {"w": self.n_w, "x": self.n_p, "u": self.n_u}, "f_p")
        _check_vars(self.h_p, {"w": self.n_w, "x": self.n_p}, "h_p")
        _check_vars(self.h_e, {"w": self.n_w, "x": self.n_p}, "h_e")
        if self.error_in_output:
            if len(self.h_p) < self.n_e or any(
                    self.h_p[i] != self.h_e[i] for i in range(self.n_e)):
                raise DimensionError(
                    "error_in_output requires the first n_e outputs to equal h_e")

    @property
    def n_y(self) -> int:
        return len(self.h_p)

    @property
    def n_e(self) -> int:
        return len(self.h_e)

    @property
    def input_names(self) -> list[str]:
        return names("w", self.n_w) + names("x", self.n_p) + names("u", self.n_u)

    def function_exprs(self) -> list[Expr]:
        """Components of ``F = (s, f_p, h_p)`` as functions of ``(w, x, u)``."""
        return list(self.s) + list(self.f_p) + list(self.h_p)

    def replace(self, **changes) -> "ExtendedPlant":
        data = {k: getattr(self, k) for k in
                ("n_w", "n_p", "n_u", "s", "f_p", "h_p", "h_e", "error_in_output", "name")}
        data.update(changes)
        return ExtendedPlant(**data)

    def to_json(self) -> dict:
        return {
            "kind": "expr", "n_w": self.n_w, "n_p": self.n_p, "n_u": self.n_u,
            "s": [str(e) for e in self.s], "f_p": [str(e) for e in self.f_p],
            "h_p": [str(e) for e in self.h_p], "h_e": [str(e) for e in self.h_e],
            "error_in_output": self.error_in_output,
        }


@dataclass(frozen=True)
class Regulator:
    """Output-feedback regulator ``c' = f_c(c, y)``, ``u = h_c(c, y)``."""

    n_c: int
    n_y: int
    f_c: tuple[Expr, ...]
    h_c: tuple[Expr, ...]
    x_c0: InitialSet | None = None
    name: str = "regulator"

    def __post_init__(self):
        object.__setattr__(self, "f_c", _as_exprs(self.f_c))
        object.__setattr__(self, "h_c", _as_exprs(self.h_c))
        if len(self.f_c) != self.n_c:
            raise DimensionError(f"f_c has {len(self.f_c)} components, n_c={self.n_c}")
        _check_vars(self.f_c, {"c": self.n_c, "y": self.n_y}, "f_c")
        _check_vars(self.h_c, {"c": self.n_c, "y": self.n_y}, "h_c")
        if self.x_c0 is None:
            object.__setattr__(self, "x_c0", InitialSet.zeros(self.n_c))
        elif self.x_c0.dim != self.n_c:
            raise DimensionError("X_c dimension does not match n_c")

    @property
    def n_u(self) -> int:
        return len(self.h_c)

    @property
    def eta_indices(self) -> tuple[int, ...] | None:
        return None

    def to_json(self) -> dict:
        return {
            "n_c": self.n_c, "n_y": self.n_y,
            "f_c": [str(e) for e in self.f_c], "h_c": [str(e) for e in self.h_c],
            "x_c0": self.x_c0.to_json(),
        }


@dataclass(frozen=True)
class LinearIMRegulator(Regulator):
    """Regulator whose first ``n_eta`` states obey ``eta' = Phi eta + G e``.

    ``e`` is read from the first ``n_e`` outputs (error measured in ``y``).
    """

    phi: np.ndarray = field(default=None, compare=False)  # type: ignore[assignment]
    g: np.ndarray = field(default=None, compare=False)  # type: ignore[assignment]

    def __post_init__(self):
        super().__post_init__()
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        g = np.atleast_2d(np.asarray(self.g, dtype=float))
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "g", g)
        n_eta, n_e = g.shape
        if phi.shape != (n_eta, n_eta) or n_eta > self.n_c or n_e > self.n_y:
            raise DimensionError("Phi/G shapes inconsistent with the regulator")
        self._check_eta_block()

    @property
    def n_eta(self) -> int:
        return self.phi.shape[0]

    @property
    def eta_indices(self) -> tuple[int, ...]:
        return tuple(range(self.n_eta))

    def _check_eta_block(self) -> None:
        n_eta, n_e = self.g.shape
        cn, yn = names("c", self.n_c), names("y", self.n_y)
        rng = np.random.default_rng(0)
        want = np.zeros((n_eta, self.n_c + self.n_y))
        want[:, :n_eta] = self.phi
        want[:, self.n_c:self.n_c + n_e] = self.g
        fn = ex.compile_vectorized(self.f_c[:n_eta], cn + yn)
        pts = rng.uniform(-2.0, 2.0, size=(self.n_c + self.n_y, 4))
        pts[:, 0] = 0.0
        got = fn(pts)
        expect = want @ pts
        scale = 1.0 + np.abs(want).sum()
        if not np.allclose(got, expect, rtol=0.0, atol=1e-12 * scale * 4):
            raise DimensionError("eta block of f_c does not match Phi eta + G e")

    def to_json(self) -> dict:
        out = super().to_json()
        out["phi"] = self.phi.tolist()
        out["g"] = self.g.tolist()
        return out


@dataclass(frozen=True)
class LinearizationBundle:
    dfdx: np.ndarray
    dfdu: np.ndarray
    dfdw: np.ndarray
    dhedx: np.ndarray
    dhedw: np.ndarray
    dhpdx: np.ndarray
    dhpdw: np.ndarray
    dsdw: np.ndarray


def _jacobian(exprs: Sequence[Expr], wrt: Sequence[str], binding: dict) -> np.ndarray:
    out = np.zeros((len(exprs), len(wrt)))
    for i, e in enumerate(exprs):
        for j, v in enumerate(wrt):
            out[i, j] = ex.evaluate(ex.differentiate(e, v), binding)
    return out


def linearize_at(plant: ExtendedPlant, point: Sequence[float] | None = None) -> LinearizationBundle:
    """Jacobians of the plant at ``point = (w, x, u)`` (origin by default).

    Raises
    ------
    DomainError
        If a derivative cannot be evaluated at the point.
    """
    n = plant.n_w + plant.n_p + plant.n_u
    point = np.zeros(n) if point is None else np.asarray(point, dtype=float)
    if point.shape != (n,):
        raise DimensionError(f"linearization point must have {n} entries")
    wn, xn, un = names("w", plant.n_w), names("x", plant.n_p), names("u", plant.n_u)
    b = dict(zip(wn + xn + un, point.tolist()))
    return LinearizationBundle(
        dfdx=_jacobian(plant.f_p, xn, b), dfdu=_jacobian(plant.f_p, un, b),
        dfdw=_jacobian(plant.f_p, wn, b),
        dhedx=_jacobian(plant.h_e, xn, b), dhedw=_jacobian(plant.h_e, wn, b),
        dhpdx=_jacobian(plant.h_p, xn, b), dhpdw=_jacobian(plant.h_p, wn, b),
        dsdw=_jacobian(plant.s, wn, b),
    )


@dataclass(frozen=True, eq=False)
class ClosedLoopSystem:
    """Autonomous interconnection with state ``(w, x, c)``."""

    plant: ExtendedPlant
    regulator: Regulator
    field: tuple[Expr, ...]
    error: tuple[Expr, ...]
    control: tuple[Expr, ...]

    @property
    def n_w(self) -> int:
        return self.plant.n_w

    @property
    def n_p(self) -> int:
        return self.plant.n_p

    @property
    def n_c(self) -> int:
        return self.regulator.n_c

    @property
    def dim(self) -> int:
        return self.n_w + self.n_p + self.n_c

    @property
    def state_names(self) -> list[str]:
        return names("w", self.n_w) + names("x", self.n_p) + names("c", self.n_c)

    @property
    def eta_slice(self) -> slice | None:
        idx = self.regulator.eta_indices
        if idx is None:
            return None
        off = self.n_w + self.n_p
        return slice(off + idx[0], off + idx[-1] + 1)

    @property
    def regulator_slice(self) -> slice:
        off = self.n_w + self.n_p
        return slice(off, off + self.n_c)

    @cached_property
    def rhs(self):
        """Scalar field ``z -> dz/dt`` (list in, list out)."""
        return ex.compile_scalar(self.field, self.state_names)

    @cached_property
    def error_fn(self):
        """Vectorized ``e`` as a function of stacked states ``(dim, n)``."""
        return ex.compile_vectorized(self.error, self.state_names)

    def __getstate__(self):
        state = dict(self.__dict__)
        state.pop("rhs", None)
        state.pop("error_fn", None)
        return state

    def describe(self) -> str:
        lines = [f"# closed loop: {self.plant.name} + {self.regulator.name} (dim {self.dim})"]
        for name, f in zip(self.state_names, self.field):
            lines.append(f"d{name}/dt = {f}")
        for i, e in enumerate(self.error):
            lines.append(f"e{i + 1} = {e}")
        return "\n".join(lines)


def compose_closed_loop(plant: ExtendedPlant, reg: Regulator) -> ClosedLoopSystem:
    """Substitute ``y = h_p(w, x)`` and ``u = h_c(c, y)`` into both fields."""
    if reg.n_y != plant.n_y:
        raise DimensionError(f"regulator reads {reg.n_y} outputs, plant has {plant.n_y}")
    if reg.n_u != plant.n_u:
        raise DimensionError(f"regulator drives {reg.n_u} inputs, plant has {plant.n_u}")
    y_map = {f"y{i + 1}": h for i, h in enumerate(plant.h_p)}
    u_exprs = tuple(ex.substitute(h, y_map) for h in reg.h_c)
    u_map = {f"u{i + 1}": h for i, h in enumerate(u_exprs)}
    f_x = [ex.substitute(f, u_map) for f in plant.f_p]
    f_c = [ex.substitute(f, y_map) for f in reg.f_c]
    fld = tuple(plant.s) + tuple(f_x) + tuple(f_c)
    allowed = {"w": plant.n_w, "x": plant.n_p, "c": reg.n_c}
    _check_vars(fld, allowed, "closed-loop field")
    return ClosedLoopSystem(plant=plant, regulator=reg, field=fld,
                            error=tuple(plant.h_e), control=u_exprs)
