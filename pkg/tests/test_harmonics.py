import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regulab.harmonics import (GridError, HorizonTooShortError, PropertyError, PropertySpec,
                               evaluate_property, fourier_coeff, fourier_coeffs,
                               generalized_fourier_coeff, spectrum_rows)
from regulab.internal_model import build_periodic_im
from regulab.simulate import Trajectory, estimate_steady_state

TWO_PI = 2 * math.pi
M = 2048


def grid(T=TWO_PI, m=M):
    return T * np.arange(m) / m


def steady(fn, T=TWO_PI, periods=30, hint=True):
    t = np.linspace(0.0, periods * T, periods * 400 + 1)
    tr = Trajectory.from_samples(t, np.atleast_2d(fn(t)).T)
    return estimate_steady_state(tr, T_hint=T if hint else None)


def first(z):
    return z[:1]


def test_fourier_examples():
    t = grid()
    assert fourier_coeff(np.cos(t), TWO_PI, 1) == pytest.approx(math.pi, abs=1e-12)
    assert fourier_coeff(np.ones(M), TWO_PI, 0) == pytest.approx(TWO_PI, abs=1e-12)
    assert abs(fourier_coeff(np.sin(2 * t), TWO_PI, 1)) < 1e-12
    # sin t = (e^{it} - e^{-it}) / 2i, so c_1 = -i pi
    assert fourier_coeff(np.sin(t), TWO_PI, 1) == pytest.approx(-1j * math.pi, abs=1e-12)


def test_fourier_endpoint_and_times():
    T = 3.0
    t = np.linspace(0.0, T, M + 1)
    x = np.cos(TWO_PI * t / T)
    a = fourier_coeff(x, T, 1, endpoint=True)
    b = fourier_coeff(x[:-1], T, 1, times=t[:-1])
    assert a == pytest.approx(T / 2, abs=1e-12) and b == pytest.approx(a, abs=1e-14)


def test_fourier_vector_signal():
    t = grid()
    c = fourier_coeff(np.column_stack([np.cos(t), 2 * np.ones(M)]), TWO_PI, 0)
    np.testing.assert_allclose(c, [0.0, 2 * TWO_PI], atol=1e-12)
    assert fourier_coeffs(np.cos(t), TWO_PI, 3).shape == (4,)


def test_fourier_grid_errors():
    with pytest.raises(GridError):
        fourier_coeff(np.ones(15), 1.0, 2)
    t = np.sort(np.random.default_rng(0).uniform(0, 1, 64))
    with pytest.raises(GridError):
        fourier_coeff(np.ones(64), 1.0, 1, times=t)
    with pytest.raises(GridError):
        fourier_coeff(np.ones(64), 1.0, 1, times=np.arange(64) / 32)


def test_generalized_coefficient_examples():
    nu = 0.3
    dt = 0.01
    t = dt * np.arange(int(40 / nu / dt) + 1)
    g = generalized_fourier_coeff(np.cos(TWO_PI * nu * t), dt, nu)
    assert abs(g.value - 0.5) <= max(g.convergence, 1e-3)
    assert g.convergence < 1e-2
    c = generalized_fourier_coeff(np.full(101, 1.7), 0.1, 0.0)
    assert c.value == pytest.approx(1.7, abs=1e-15)


def test_generalized_coefficient_needs_twenty_periods():
    with pytest.raises(HorizonTooShortError):
        generalized_fourier_coeff(np.ones(1001), 0.01, 0.1)


def test_property_spec_validation():
    with pytest.raises(PropertyError):
        PropertySpec("P_bogus")
    with pytest.raises(PropertyError):
        PropertySpec("P_T", params={"T": 1.0})
    with pytest.raises(PropertyError):
        PropertySpec("P_0", tol=0.0)
    p = PropertySpec.from_dict({"kind": "P_eps", "epsilon": 0.1, "tol": 1e-4})
    assert p.to_json() == {"kind": "P_eps", "tol": 1e-4, "epsilon": 0.1}


def test_zero_error_is_regulated():
    ss = steady(lambda t: 0 * t)
    v = evaluate_property(PropertySpec("P_0", tol=1e-12), ss, first)
    assert v.holds and v.metric == 0.0


def test_second_harmonic_passes_p_t_but_not_p_eps():
    ss = steady(lambda t: 0.1 * np.sin(2 * t))
    pt = evaluate_property(PropertySpec("P_T", params={"T": TWO_PI, "d": 1}), ss, first)
    assert pt.holds and pt.metric <= 1e-9
    assert pt.metrics["abs_c2"] == pytest.approx(0.1 * math.pi, rel=1e-6)
    pe = evaluate_property(PropertySpec("P_eps", params={"epsilon": 0.05}), ss, first)
    assert not pe.holds and pe.metric == pytest.approx(0.1, rel=1e-4)


def test_other_kinds():
    ss = steady(lambda t: 0.2 + 0.5 * np.cos(t))
    dc = evaluate_property(PropertySpec("P_DC", tol=1e-3), ss, first)
    assert not dc.holds and dc.metric == pytest.approx(0.2, rel=1e-9)
    box = evaluate_property(PropertySpec("P_A", params={"lower": [-0.3], "upper": [0.6]}), ss)
    assert not box.holds and box.metric == pytest.approx(0.1, abs=1e-6)
    eq = evaluate_property(PropertySpec("P_eq"), ss)
    assert not eq.holds and eq.metric == pytest.approx(1.0, abs=1e-6)
    const = steady(lambda t: 0 * t + 0.4)
    assert evaluate_property(PropertySpec("P_eq"), const).holds


def test_weak_property_is_vacuous_on_aperiodic_tail():
    ss = steady(lambda t: np.sin(t) + np.sin(math.sqrt(2) * t), periods=40)
    assert ss.verdict == "aperiodic"
    spec = {"T": TWO_PI, "d": 1}
    weak = evaluate_property(PropertySpec("P_T_weak", params=spec), ss, first)
    assert weak.holds and weak.vacuous
    strong = evaluate_property(PropertySpec("P_T", params=spec), ss, first)
    assert not strong.holds and strong.metric == math.inf


def test_generalized_property():
    ss = steady(lambda t: 0.05 * np.sin(3 * t), periods=60)
    v = evaluate_property(PropertySpec("P_nu", params={"freqs": [1 / TWO_PI]}), ss, first)
    assert v.holds
    assert v.metrics["abs_cprime_1"] < 1e-6
    w = evaluate_property(PropertySpec("P_nu", params={"freqs": [3 / TWO_PI]}), ss, first)
    assert not w.holds
    assert w.metrics["abs_cprime_1"] == pytest.approx(0.025, rel=1e-3)


def test_spectrum_rows():
    ss = steady(lambda t: 0.3 * np.cos(2 * t))
    rows = spectrum_rows(ss, first, TWO_PI, 3)
    assert [r[0] for r in rows] == [0, 1, 2, 3]
    assert rows[2][4] == pytest.approx(0.3 * math.pi, rel=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 1000), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 6))
def test_linearity(seed, a, b, k):
    rng = np.random.default_rng(seed)
    f, g = rng.normal(size=(2, 256))
    lhs = fourier_coeff(a * f + b * g, 2.0, k)
    rhs = a * fourier_coeff(f, 2.0, k) + b * fourier_coeff(g, 2.0, k)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(a) + abs(b)) * 256


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 1000), st.floats(0.5, 10.0), st.integers(0, 3))
def test_internal_model_chain_replay(seed, T, d):
    """A T-periodic eta driven through p(d/dt) yields e with no harmonics up to d."""
    rng = np.random.default_rng(seed)
    im = build_periodic_im(T, d)
    p = im.char_poly()
    K = d + 3
    a, b = rng.normal(size=(2, K + 1))
    t = grid(T)
    om = TWO_PI * np.arange(K + 1) / T
    # derivatives of eta^1 = sum a_k cos(om_k t) + b_k sin(om_k t), via (i om)^j
    z = (a - 1j * b)[None, :] * np.exp(1j * np.outer(t, om))
    eta = z.real.sum(axis=1)
    e = (np.polyval(p, 1j * om)[None, :] * z).real.sum(axis=1)
    scale = np.abs(np.polyval(p, 1j * om)).max() * (np.abs(a).sum() + np.abs(b).sum())
    for k in range(d + 1):
        assert abs(fourier_coeff(e, T, k)) <= 1e-9 * T * max(1.0, scale)
    for k in range(d + 1, K + 1):
        want = np.polyval(p, 2j * math.pi * k / T) * fourier_coeff(eta, T, k)
        assert abs(fourier_coeff(e, T, k) - want) <= 1e-9 * T * max(1.0, scale)
