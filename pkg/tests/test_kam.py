import math

import numpy as np
import pytest

from impactkam.dynamics import ForcingSpec, ScaledImpactMap, ScaledMapSpec
from impactkam.errors import DegenerateAverage, NotConverged, SmallDivisorBreakdown
from impactkam.fourier import PeriodicFn
from impactkam.kam import (
    CurveParametrization,
    IntegrableTwist,
    KamReport,
    _is_quadratic,
    default_initial_curve,
    error_norm,
    fitted_strip_width,
    invariance_error,
    kam_step,
    quadratic_decay_ratios,
    solve_curve,
)
from impactkam.rotation import GOLDEN_OMEGA, frequency_ladder


@pytest.fixture(scope="module")
def rung5():
    r = frequency_ladder(0.01, 0.0, GOLDEN_OMEGA, [5]).rungs[0]
    return r, ScaledImpactMap(ScaledMapSpec(r.y0_star, 0.01), ForcingSpec.cosine())


def graph_action(c, u):
    """Action of the graph curve ``c`` above angle ``u``, by Newton on the angle."""
    th = np.array(u, dtype=float)
    dp = c.phi_part.derivative()
    for _ in range(30):
        th -= (th + c.phi_part(th) - u) / (1 + dp(th))
    return c.I_part(th)


def graph_distance(c1, c2, m=512):
    """Sup distance between two graph curves, sampled at common angles."""
    u = np.linspace(0, 2 * np.pi, m, endpoint=False)
    return float(np.max(np.abs(graph_action(c1, u) - graph_action(c2, u))))


# -- curve object ---------------------------------------------------------------------


def test_flat_curve_points():
    c = CurveParametrization.flat(-3.0, 1.0, 8)
    u, v = c.points(np.array([0.0, 1.5]))
    assert np.allclose(u, [0.0, 1.5]) and np.allclose(v, -3.0)
    assert c.is_graph()


def test_shift_origin_same_set():
    c = CurveParametrization(PeriodicFn.from_cos_sin(0, [0.1], [0.05], 4), PeriodicFn.from_cos_sin(-2, [0.0], [0.2], 4), 1.0)
    assert graph_distance(c, c.shift_origin(0.7)) < 1e-13


# -- integrable twist oracle -------------------------------------------------------------


def test_twist_invariant_circle_needs_one_evaluation():
    T = IntegrableTwist.scaled(8.0)
    c = CurveParametrization.flat(T.I0_star, 32.0, 16)
    curve, rep = solve_curve(T, 32.0, c)
    assert rep.iterations == 1 and rep.final_error < 1e-13
    assert curve is c or error_norm(T, curve) < 1e-13


def test_twist_zero_error_zero_correction():
    T = IntegrableTwist.scaled(8.0)
    c = CurveParametrization.flat(T.I0_star, 32.0, 16)
    _, ws = kam_step(T, c)
    assert ws.correction_norm < 1e-14 and ws.error_norm < 1e-14


@pytest.mark.parametrize("delta", [1e-3, 1e-4])
def test_twist_constant_mismatch_quadratic(delta):
    T = IntegrableTwist.scaled(8.0)
    c = CurveParametrization.flat(T.I0_star + delta, 32.0, 16)
    e0 = error_norm(T, c)
    e1 = error_norm(T, kam_step(T, c)[0])
    assert e1 < 0.1 * e0**2 / 1e-3 + 1e-14
    assert e1 < e0**1.8


def test_twist_step_moves_action_to_target():
    T = IntegrableTwist.scaled(8.0)
    c = CurveParametrization.flat(T.I0_star + 1e-3, 32.0, 16)
    c1, _ = kam_step(T, c)
    assert abs(c1.I_part.average() - T.I0_star) < 1e-6


# -- perturbed map -------------------------------------------------------------------------


def test_first_error_is_order_eps(rung5):
    r, F = rung5
    c0 = default_initial_curve(F, r.omega, 64)
    assert error_norm(F, c0) < 10 * 0.01


def test_exactness_identity_sign(rung5):
    r, F = rung5
    c = default_initial_curve(F, r.omega, 64)
    for _ in range(3):
        c, ws = kam_step(F, c)
        # the identity holds with a plus sign, to quadratic order in e
        assert abs(ws.exactness_residual) < 10 * ws.error_norm**2 + 1e-14
        assert abs(ws.avg_uJe + ws.avg_dephi_eI) > 1e-3 * abs(ws.avg_uJe)


def test_single_step_contraction(rung5):
    r, F = rung5
    c = default_initial_curve(F, r.omega, 64)
    errs = [error_norm(F, c)]
    for _ in range(3):
        c, _ = kam_step(F, c)
        errs.append(error_norm(F, c))
    for a, b in zip(errs, errs[1:]):
        assert b < 0.3 * a


def test_invariance_error_pair(rung5):
    r, F = rung5
    c = default_initial_curve(F, r.omega, 32)
    ep, eI = invariance_error(F, c)
    assert max(ep.sup_on_grid(256), eI.sup_on_grid(256)) == pytest.approx(error_norm(F, c), rel=1e-2)


@pytest.mark.parametrize("k", range(4, 10))
def test_golden_ladder_converges(k, golden_curves):
    r, F, curve, rep = golden_curves[k]
    assert rep.converged and rep.iterations <= 8
    assert error_norm(F, curve, 1024) < 1e-10
    assert curve.is_graph()
    assert abs(rep.rotation_check - r.omega) < 1e-9


def test_report_quadratic_flag(golden_curves):
    rep = golden_curves[5][3]
    assert rep.quadratic_decay
    assert all(1.5 <= x <= 2.7 for x in rep.log_ratios)
    d = rep.as_dict()
    assert d["iterations"] == rep.iterations and d["verdict"] == "converged"


def test_idempotent_on_converged(golden_curves):
    r, F, curve, rep = golden_curves[6]
    again, rep2 = solve_curve(F, r.omega, curve, tol=rep.tol)
    assert rep2.iterations == 1 and again is curve or graph_distance(again, curve) < 1e-12


def test_origin_shift_same_curve(golden_curves):
    r, F, curve, rep = golden_curves[4]
    shifted, _ = solve_curve(F, r.omega, curve.shift_origin(0.4).add(PeriodicFn.zeros(1), PeriodicFn.constant(1e-4, 1)))
    assert graph_distance(shifted, curve) < 1e-8


def test_resolution_doubling(golden_curves):
    r, F, curve, rep = golden_curves[5]
    fine, _ = solve_curve(F, r.omega, tol=rep.tol, order=256)
    diff = max(
        np.max(np.abs(fine.phi_part.resize(128).coeffs - curve.phi_part.coeffs)),
        np.max(np.abs(fine.I_part.resize(128).coeffs - curve.I_part.coeffs)),
    )
    assert diff < 1e-9


def test_continuation_in_eps(golden_curves):
    r, _, curve, _ = golden_curves[5]
    G = ScaledImpactMap(ScaledMapSpec(r.y0_star, 0.02), ForcingSpec.cosine())
    _, rep = solve_curve(G, r.omega, curve)
    assert rep.converged and rep.iterations <= 5


def test_strip_width_finite_positive(golden_curves):
    rep = golden_curves[4][3]
    assert 0.5 < rep.strip_width < 50


def test_strip_width_oracle():
    a = 2 * np.exp(-0.8 * np.arange(1, 20))
    assert fitted_strip_width(PeriodicFn.from_cos_sin(0.0, a, n=19)) == pytest.approx(0.8, rel=1e-10)


# -- failure modes ---------------------------------------------------------------------------


def test_near_rational_small_divisor():
    w = 2 * math.pi * 5 + 2 * math.pi / 3 * (1 + 1e-13)
    F = ScaledImpactMap(ScaledMapSpec(w / 4, 0.01), ForcingSpec.cosine())
    with pytest.raises(SmallDivisorBreakdown) as exc:
        solve_curve(F, w)
    assert exc.value.k % 3 == 0 and exc.value.report.verdict == "small_divisor_fail"


def test_degenerate_average():
    D = IntegrableTwist(lambda I: 3.0 + 0 * np.asarray(I), lambda I: 0 * np.asarray(I), -1.0)
    with pytest.raises(DegenerateAverage) as exc:
        solve_curve(D, 3.0, CurveParametrization.flat(-1.0, 3.0, 16), avgA_floor=1e-8)
    assert isinstance(exc.value.report, KamReport)


def test_not_converged_carries_report(rung5):
    r, F = rung5
    with pytest.raises(NotConverged) as exc:
        solve_curve(F, r.omega, max_iter=1)
    rep = exc.value.report
    assert rep.verdict == "diverged" and rep.iterations == 2


# -- decay diagnostics -------------------------------------------------------------------------


def test_quadratic_ratios_oracle():
    errs = [1e-2, 1e-4, 1e-8, 1e-16, 1e-16]
    assert quadratic_decay_ratios(errs, 1e-14) == pytest.approx([2.0, 2.0, 2.0])
    assert _is_quadratic([2.0, 2.0, 2.0])


def test_linear_decay_not_quadratic():
    errs = [0.5**n for n in range(1, 12)]
    assert not _is_quadratic(quadratic_decay_ratios(errs, 1e-14))
