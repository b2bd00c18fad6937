import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regulab import expr as ex
from regulab.internal_model import LinearPlantSS
from regulab.perturbations import (CompactGrid, TrigPolynomial, delta_for_ball, hausdorff_distance,
                                   lift_to_c0, perturb_linear, sample_trig_ball, trig_recursion,
                                   weak_ck_semimetric)

LINE = CompactGrid.box([-1.0], [1.0], 201)
DISK = CompactGrid.unit_disk(101)
T1024 = 2 * math.pi * np.arange(1024) / 1024


def test_grid_construction():
    g = CompactGrid.box([0.0, -1.0], [1.0, 1.0], [3, 5])
    assert g.points.shape == (15, 2) and g.resolution == 0.5
    assert np.linalg.norm(DISK.points, axis=1).max() <= 1 + 1e-12
    with pytest.raises(ValueError):
        CompactGrid.box([1.0], [0.0], 3)


def test_semimetric_examples():
    assert weak_ck_semimetric(["sin(x1)"], ["sin(x1)"], 1, LINE, ["x1"]) == 0.0
    assert weak_ck_semimetric(["x1"], ["x1 + 0.1"], 0, LINE, ["x1"]) == pytest.approx(0.1)
    d = weak_ck_semimetric(["0"], ["0.1*sin(10*x1)"], 1, LINE, ["x1"])
    assert d == pytest.approx(1.0, abs=1e-12)


def test_semimetric_errors():
    with pytest.raises(ValueError):
        weak_ck_semimetric(["x1", "x1"], ["x1"], 0, LINE, ["x1"])
    with pytest.raises(ValueError):
        weak_ck_semimetric(["x2"], ["x1"], 0, LINE, ["x1"])
    with pytest.raises(ex.DomainError):
        weak_ck_semimetric(["1/x1"], ["0"], 0, LINE, ["x1"])


def test_hausdorff_examples():
    assert hausdorff_distance([0.0], [3.0]) == 3.0
    assert hausdorff_distance([0.0], [0.0, 2.0]) == 2.0
    pts = np.random.default_rng(1).normal(size=(7, 3))
    assert hausdorff_distance(pts, pts[::-1]) == 0.0
    with pytest.raises(ValueError):
        hausdorff_distance(np.empty((0, 1)), [1.0])


def test_trig_recursion_examples():
    (r1, q1), (r2, q2) = trig_recursion(2, "w1", "w2")
    assert r1 == ex.Var("w1") and q1 == ex.Var("w2")
    for a, b in [(0.3, -0.7), (1.5, 2.0)]:
        env = {"w1": a, "w2": b}
        assert ex.evaluate(r2, env) == pytest.approx(2 * a * b, abs=1e-15)
        assert ex.evaluate(q2, env) == pytest.approx(b * b - a * a, abs=1e-15)
    pairs = trig_recursion(8)
    r3 = ex.compile_vectorized([pairs[2][0]], ["w1", "w2"])
    along = r3(np.vstack([np.sin(T1024), np.cos(T1024)]))[0]
    assert np.abs(along - np.sin(3 * T1024)).max() <= 1e-12
    assert all(ex.evaluate(q, {"w1": 0.0, "w2": 1.0}) == 1.0 for _, q in pairs)
    with pytest.raises(ValueError):
        trig_recursion(0)


def test_lift_examples():
    const = lift_to_c0(TrigPolynomial((0.5,)), DISK)
    assert const.expr == ex.Const(0.5) and const.sup_on_grid == 0.5
    first = lift_to_c0(TrigPolynomial.from_parts(0.0, [0.2], [0.0]), DISK)
    assert ex.evaluate(first.expr, {"w1": 1.0, "w2": 0.0}) == pytest.approx(0.2)
    assert first.sup_on_grid == pytest.approx(0.2, abs=1e-15)
    third = lift_to_c0(TrigPolynomial.from_parts(0.0, [0, 0, 0.05], [0, 0, 0]), DISK)
    assert third.identity_error <= 1e-12


def test_delta_for_ball_examples():
    assert delta_for_ball(0.3, 1, DISK) == pytest.approx(0.1, rel=1e-12)
    assert delta_for_ball(0.6, 3, DISK) == pytest.approx(2 * delta_for_ball(0.3, 3, DISK))
    big = CompactGrid.unit_disk(101, radius=1.5)
    assert delta_for_ball(0.3, 3, big) <= delta_for_ball(0.3, 3, DISK)
    with pytest.raises(ValueError):
        delta_for_ball(0.0, 1, DISK)


def test_sample_trig_ball_examples():
    for seed in range(20):
        s = sample_trig_ball(3, 0.25, seed)
        assert s.N == 3 and s.norm() < 0.25
    assert sample_trig_ball(2, 1.0, 7) == sample_trig_ball(2, 1.0, 7)
    assert sample_trig_ball(2, 1.0, 7, 0) != sample_trig_ball(2, 1.0, 7, 1)
    norms = [sample_trig_ball(1, 1.0, 11, i).norm() for i in range(1000)]
    assert 0.70 <= np.mean(norms) <= 0.80


def test_perturb_linear_examples():
    plant = LinearPlantSS(S=[[0.0, 1.0], [-1.0, 0.0]], A=[[0.0, 1.0], [-2.0, -1.0]],
                          B=[[0.0], [1.0]], P=[[1.0, 0.0], [0.0, 0.0]],
                          C_e=[[0.0, 0.0, 1.0, 0.0]], C_y=[[0.0, 0.0, 1.0, 0.0]])
    assert perturb_linear(plant, 0.0, 3) is plant
    eps = 0.05
    p = perturb_linear(plant, eps, 3)
    assert p.S.tobytes() == plant.S.tobytes()
    assert np.linalg.norm(p.A - plant.A) <= eps * math.sqrt(plant.A.size)
    for name in ("A", "B", "P", "C_e"):
        diff = getattr(p, name) - getattr(plant, name)
        assert np.abs(diff).max() <= eps and np.any(diff != 0)
    np.testing.assert_array_equal(p.C_y[:1], p.C_e)
    loose = perturb_linear(plant, eps, 3, freeze_S=False)
    assert not np.array_equal(loose.S, plant.S)
    with pytest.raises(ValueError):
        perturb_linear(plant, -1.0, 0)


# --- properties -----------------------------------------------------------

COEF = st.floats(-2, 2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(COEF, COEF, COEF), min_size=3, max_size=3), st.integers(0, 1))
def test_weak_ck_axioms(triple, k):
    grid = CompactGrid.box([-1.0], [1.0], 41)
    fs = [f"{a} + {b}*x1 + {c}*sin(x1)".replace("+ -", "- ") for a, b, c in triple]

    def d(i, j):
        return weak_ck_semimetric([fs[i]], [fs[j]], k, grid, ["x1"])

    assert d(0, 1) >= 0 and d(0, 0) == 0.0
    assert d(0, 1) == pytest.approx(d(1, 0), abs=1e-12)
    assert d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_hausdorff_axioms(seed):
    rng = np.random.default_rng(seed)
    X, Y, Z = (rng.normal(size=(rng.integers(1, 9), 2)) for _ in range(3))
    assert hausdorff_distance(X, Y) >= 0
    assert hausdorff_distance(X, Y) == hausdorff_distance(Y, X)
    assert hausdorff_distance(X, Z) <= hausdorff_distance(X, Y) + hausdorff_distance(Y, Z)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 10), st.floats(0.01, 2.0))
def test_lift_bound_and_identity(seed, N, eps):
    delta = delta_for_ball(eps, N, DISK)
    s = sample_trig_ball(N, delta, seed)
    lift = lift_to_c0(s, DISK)
    assert lift.sup_on_grid < eps
    assert lift.identity_error <= 1e-10
