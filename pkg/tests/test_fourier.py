import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impactkam.errors import NonzeroAverage, SmallDivisorBreakdown
from impactkam.fourier import (
    PeriodicFn,
    difference,
    grid,
    multiply,
    small_divisors,
    solve_cohomological,
    strip_norm,
)
from impactkam.rotation import GOLDEN

COS = PeriodicFn.from_cos_sin(0.0, [1.0])
SIN = PeriodicFn.from_cos_sin(0.0, [], [1.0])


def random_fn(rng, n, decay=0.3):
    k = np.arange(n + 1)
    c = (rng.normal(size=n + 1) + 1j * rng.normal(size=n + 1)) * np.exp(-decay * k)
    return PeriodicFn(c)


coeff_lists = st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=12)


# -- eval ---------------------------------------------------------------------


def test_eval_cos_at_zero():
    assert COS(0.0) == pytest.approx(1.0, abs=1e-15)


def test_eval_cos_at_half_pi():
    assert abs(COS(np.pi / 2)) < 1e-15


def test_eval_constant():
    f = PeriodicFn.constant(2.0, 5)
    assert np.all(f(np.linspace(-3, 9, 17)) == 2.0)


def test_eval_matches_direct_sum(rng):
    f = random_fn(rng, 10)
    th = rng.uniform(-10, 10, 30)
    direct = np.real(np.exp(1j * np.outer(th, np.arange(-10, 11))) @ f.full_coeffs())
    assert np.allclose(f(th), direct, atol=1e-13)


def test_eval_complex_imaginary_residue_small(rng):
    f = random_fn(rng, 8)
    th = rng.uniform(0, 2 * np.pi, 20)
    vals = f.eval_complex(th)
    assert np.max(np.abs(vals.imag)) < 1e-12 * np.max(np.abs(f.coeffs))


@given(coeff_lists, coeff_lists, st.floats(-50, 50))
def test_eval_periodic(ak, bk, th):
    f = PeriodicFn.from_cos_sin(0.3, ak, bk)
    assert f(th + 2 * np.pi) == pytest.approx(f(th), abs=1e-12)


def test_hermitian_point_values_real():
    f = PeriodicFn([1.0 + 5j, 2 - 1j, 0.5j])
    assert f.coeffs[0].imag == 0
    assert isinstance(f(0.3), float)


# -- derivative / average --------------------------------------------------------


def test_derivative_sin_is_cos():
    assert SIN.derivative().allclose(COS, atol=0)


def test_derivative_constant_is_zero():
    d = PeriodicFn.constant(3.0, 4).derivative()
    assert np.all(d.coeffs == 0)


def test_derivative_cos3_finite_difference():
    f = PeriodicFn.from_cos_sin(0.0, [0, 0, 1.0])
    th = np.linspace(0.1, 6.0, 10)
    h = 1e-5
    fd = (f(th + h) - f(th - h)) / (2 * h)
    assert np.allclose(f.derivative()(th), fd, atol=1e-8)
    assert np.allclose(f.derivative()(th), -3 * np.sin(3 * th), atol=1e-13)


def test_derivative_has_zero_average(rng):
    assert random_fn(rng, 6).derivative().average() == 0.0


def test_average_values(cos_forcing):
    assert (PeriodicFn.from_cos_sin(3.0, [1.0])).average() == 3.0
    assert SIN.average() == 0.0
    from impactkam.dynamics import ForcingSpec

    f = ForcingSpec(a0=0.4, ak=(1.0, 0.2), bk=(0.3,))
    assert f.p.average() == 0.4


def test_antiderivative_inverts_derivative(rng):
    f = random_fn(rng, 9)
    g = f.antiderivative().derivative()
    assert g.allclose(f - f.average(), atol=1e-14)


# -- sampling ------------------------------------------------------------------------


@pytest.mark.parametrize("n", [1, 5, 32, 127])
def test_round_trip_minimal_grid(rng, n):
    f = random_fn(rng, n, decay=0.01)
    g = PeriodicFn.from_samples(f.samples(2 * n + 1), n)
    scale = np.max(np.abs(f.coeffs))
    assert np.max(np.abs(g.coeffs - f.coeffs)) < 1e-12 * scale


def test_samples_match_eval(rng):
    f = random_fn(rng, 12)
    assert np.allclose(f.samples(64), f(grid(64)), atol=1e-13)


def test_aliasing_guard():
    with pytest.raises(ValueError):
        PeriodicFn.zeros(10).samples(20)
    with pytest.raises(ValueError):
        PeriodicFn.from_samples(np.zeros(8), 4)


def test_multiply_matches_pointwise(rng):
    f, g = random_fn(rng, 6), random_fn(rng, 7)
    h = multiply(f, g, 13)
    th = rng.uniform(0, 7, 25)
    assert np.allclose(h(th), f(th) * g(th), atol=1e-13)


def test_shift(rng):
    f = random_fn(rng, 5)
    th = rng.uniform(0, 7, 10)
    assert np.allclose(f.shift(0.7)(th), f(th + 0.7), atol=1e-13)


# -- cohomological equation -------------------------------------------------------


def test_cohomological_half_turn():
    f = solve_cohomological(COS, np.pi)
    assert f.allclose(COS * -0.5, atol=1e-15)
    th = grid(64)
    assert np.allclose(f(th + np.pi) - f(th), np.cos(th), atol=1e-15)


def test_cohomological_zero():
    f = solve_cohomological(PeriodicFn.zeros(8), 1.0)
    assert np.all(f.coeffs == 0)


def test_cohomological_golden_sin2():
    omega = 2 * np.pi * GOLDEN
    g = PeriodicFn.from_cos_sin(0.0, [], [0.0, 1.0])
    f = solve_cohomological(g, omega)
    assert f.coeffs[2] == pytest.approx(g.coeffs[2] / (np.exp(2j * omega) - 1), abs=1e-15)
    th = grid(256)
    resid = difference(f, omega)(th) - g(th)
    assert np.max(np.abs(resid)) < 1e-12
    assert f.average() == 0.0


def test_cohomological_random_residual(rng):
    g = random_fn(rng, 40)
    g = g - g.average()
    omega = 2 * np.pi * GOLDEN
    f = solve_cohomological(g, omega)
    th = grid(256)
    assert np.max(np.abs(difference(f, omega)(th) - g(th))) < 1e-9


def test_cohomological_rejects_mean():
    with pytest.raises(NonzeroAverage):
        solve_cohomological(COS + 1e-6, 1.0)


def test_cohomological_small_divisor_reports_k():
    g = PeriodicFn.from_cos_sin(0.0, [1.0, 0.0, 1.0])
    with pytest.raises(SmallDivisorBreakdown) as info:
        solve_cohomological(g, 2 * np.pi / 3)
    assert info.value.k == 3


def test_cohomological_checks_divisors_even_when_coefficient_vanishes():
    g = PeriodicFn.from_cos_sin(0.0, [1.0, 0.0, 0.0])
    with pytest.raises(SmallDivisorBreakdown):
        solve_cohomological(g, 2 * np.pi / 3)


def test_small_divisors_definition():
    d = small_divisors(0.3, 4)
    assert np.allclose(d, np.exp(1j * 0.3 * np.arange(5)) - 1, atol=1e-16)


def test_cohomological_linear(rng):
    g1, g2 = random_fn(rng, 10), random_fn(rng, 10)
    g1, g2 = g1 - g1.average(), g2 - g2.average()
    w = 2 * np.pi * GOLDEN
    lhs = solve_cohomological(g1 * 2.5 + g2 * -1.5, w)
    rhs = solve_cohomological(g1, w) * 2.5 + solve_cohomological(g2, w) * -1.5
    assert lhs.allclose(rhs, atol=1e-13)


def test_cohomological_commutes_with_derivative(rng):
    g = random_fn(rng, 20)
    g = g - g.average()
    w = 2 * np.pi * GOLDEN
    a = solve_cohomological(g, w).derivative()
    b = solve_cohomological(g.derivative(), w)
    th = grid(128)
    assert np.max(np.abs(a(th) - b(th))) < 1e-10


# -- strip norm -----------------------------------------------------------------------


def test_strip_norm_cos():
    assert strip_norm(COS, 0.0).value == pytest.approx(1.0)
    assert strip_norm(COS, np.log(2)).value == pytest.approx(2.0, abs=1e-14)
    # cos on the imaginary axis: cosh(ln 2) <= value
    assert np.cosh(np.log(2)) <= strip_norm(COS, np.log(2)).value


def test_strip_norm_zero():
    assert strip_norm(PeriodicFn.zeros(3), 0.5).value == 0.0


def test_strip_norm_domain():
    with pytest.raises(ValueError):
        strip_norm(COS, 1.0)


def test_strip_norm_bounds_sup(rng):
    f = random_fn(rng, 15)
    assert strip_norm(f, 0.0).value >= f.sup_on_grid(256)
    rho = 0.3
    z = grid(64) + 1j * rho
    assert strip_norm(f, rho).value >= np.max(np.abs(f.eval_complex(z))) - 1e-12


@settings(max_examples=50)
@given(coeff_lists, coeff_lists, st.floats(0, 0.9), st.floats(0, 0.9))
def test_strip_norm_monotone(ak, bk, r1, r2):
    f = PeriodicFn.from_cos_sin(0.1, ak, bk)
    lo, hi = sorted((r1, r2))
    assert strip_norm(f, lo).value <= strip_norm(f, hi).value + 1e-12


@settings(max_examples=50)
@given(coeff_lists, coeff_lists, st.floats(0, 0.9))
def test_strip_norm_submultiplicative(a, b, rho):
    f = PeriodicFn.from_cos_sin(0.0, a)
    g = PeriodicFn.from_cos_sin(0.0, [], b)
    fg = multiply(f, g, f.order + g.order)
    assert strip_norm(fg, rho).value <= strip_norm(f, rho).value * strip_norm(g, rho).value * (1 + 1e-12) + 1e-14
