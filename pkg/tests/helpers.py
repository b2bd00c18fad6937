"""Random generators shared by unit and acceptance tests."""

from __future__ import annotations

import numpy as np

from regulab import expr as ex

FUNCS = ("sin", "cos", "exp", "tanh", "abs")


def random_expr(rng: np.random.Generator, depth: int, names=("x1", "x2", "w1")) -> ex.Expr:
    """Random tree of depth at most ``depth`` over ``names``."""
    if depth <= 0 or rng.random() < 0.25:
        if rng.random() < 0.5:
            return ex.Var(str(rng.choice(names)))
        return ex.Const(float(np.round(rng.uniform(-3, 3), int(rng.integers(0, 6)))))
    kind = rng.integers(0, 4)
    if kind == 0:
        op = str(rng.choice(FUNCS + ("neg",)))
        return ex.Unary(op, random_expr(rng, depth - 1, names))
    if kind == 1:
        return ex.Pow(random_expr(rng, depth - 1, names), int(rng.integers(0, 4)))
    op = str(rng.choice(ex.BINARY_OPS))
    return ex.Binary(op, random_expr(rng, depth - 1, names), random_expr(rng, depth - 1, names))


def central_fd(e: ex.Expr, name: str, binding: dict, h: float = 1e-5) -> float:
    hi, lo = dict(binding), dict(binding)
    hi[name] += h
    lo[name] -= h
    return (ex.evaluate(e, hi) - ex.evaluate(e, lo)) / (2 * h)


def random_trig(rng: np.random.Generator, N: int, scale: float = 1.0):
    """Coefficients ``(alpha, beta, gamma)`` of a random trigonometric polynomial."""
    return (float(rng.normal()) * scale, rng.normal(size=N) * scale, rng.normal(size=N) * scale)
