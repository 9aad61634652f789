"""Parametrization-method KAM solver for exact symplectic annulus maps.

A map ``F`` is any object with

* ``F(u, v) -> (ū, v̄)`` on arrays, where ``ū`` is a lift of the angle;
* ``F.evaluate(u, v) -> (ū, v̄, DF)`` with ``DF`` of shape ``(..., 2, 2)``.

Optional attributes ``alpha_prime``, ``I0_star`` and ``action_for_frequency``
are used for defaults (nondegeneracy floor, initial circle). The curve is
``φ(θ) = (θ + φ_φ(θ), φ_I(θ))`` and the invariance equation is
``F(φ(θ)) = φ(θ + ω)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .errors import (
    DegenerateAverage,
    DomainEscape,
    ImpactKamError,
    NotConverged,
    SmallDivisorBreakdown,
)
from .fourier import DEFAULT_ORDER, DIVISOR_FLOOR, TWO_PI, PeriodicFn, grid, solve_cohomological
from .rotation import rotation_estimate

DEFAULT_MAX_ITER = 30
DIVERGENCE_STREAK = 3
QUADRATIC_BAND = (1.5, 2.5)


# ---------------------------------------------------------------------------
# Curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurveParametrization:
    """``φ(θ) = (θ + φ_φ(θ), φ_I(θ))`` with target frequency ``omega``."""

    phi_part: PeriodicFn
    I_part: PeriodicFn
    omega: float

    @classmethod
    def flat(cls, I: float, omega: float, order: int = DEFAULT_ORDER) -> CurveParametrization:
        return cls(PeriodicFn.zeros(order), PeriodicFn.constant(I, order), omega)

    @property
    def order(self) -> int:
        return max(self.phi_part.order, self.I_part.order)

    def resize(self, n: int) -> CurveParametrization:
        return CurveParametrization(self.phi_part.resize(n), self.I_part.resize(n), self.omega)

    def shift_origin(self, theta0: float) -> CurveParametrization:
        """Reparametrize by ``θ ↦ θ + θ0`` (same point set)."""
        return CurveParametrization(
            self.phi_part.shift(theta0) + theta0, self.I_part.shift(theta0), self.omega
        )

    def points(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta + self.phi_part(theta), self.I_part(theta)

    def samples(self, m: int):
        """Lifted angle and action on the ``m``-point grid."""
        return grid(m) + self.phi_part.samples(m), self.I_part.samples(m)

    def tangent_samples(self, m: int, shift: float = 0.0):
        """``φ'(θ + shift)`` on the grid."""
        dp = self.phi_part.derivative()
        dI = self.I_part.derivative()
        if shift:
            dp, dI = dp.shift(shift), dI.shift(shift)
        return 1.0 + dp.samples(m), dI.samples(m)

    def is_graph(self, m: int | None = None) -> bool:
        m = m or 4 * max(self.order, 16)
        return bool(np.min(self.tangent_samples(m)[0]) > 0)

    def add(self, d_phi: PeriodicFn, d_I: PeriodicFn) -> CurveParametrization:
        return CurveParametrization(self.phi_part + d_phi, self.I_part + d_I, self.omega)


# ---------------------------------------------------------------------------
# Reference map
# ---------------------------------------------------------------------------


class IntegrableTwist:
    """``(φ, I) ↦ (φ + α(I), I)``, optionally plus a constant action kick."""

    def __init__(
        self,
        alpha: Callable,
        alpha_prime: Callable,
        I0_star: float,
        kick: float = 0.0,
    ):
        self._alpha = alpha
        self._alpha_prime = alpha_prime
        self.I0_star = I0_star
        self.kick = kick

    @classmethod
    def scaled(cls, y0_star: float) -> IntegrableTwist:
        """Unperturbed scaled impact map, ``α(I) = 4·sqrt(-√2·y0*·I)``."""
        c = math.sqrt(2.0) * y0_star
        return cls(
            lambda I: 4.0 * np.sqrt(-c * np.asarray(I)),
            lambda I: -2.0 * c / np.sqrt(-c * np.asarray(I)),
            -y0_star / math.sqrt(2.0),
        )

    def alpha(self, I):
        return self._alpha(I)

    def alpha_prime(self, I):
        return self._alpha_prime(I)

    def __call__(self, phi, I):
        I = np.asarray(I, dtype=float)
        return np.asarray(phi) + self._alpha(I), I + self.kick

    def evaluate(self, phi, I):
        u, v = self(phi, I)
        jac = np.zeros(np.shape(u) + (2, 2))
        jac[..., 0, 0] = 1.0
        jac[..., 0, 1] = self._alpha_prime(np.asarray(I, dtype=float))
        jac[..., 1, 1] = 1.0
        return u, v, jac

    def action_for_frequency(self, omega: float) -> float:
        """Invert the twist near ``I0_star`` by bracketing."""
        f = lambda I: float(self._alpha(I)) - omega
        lo, hi = self.I0_star * 4.0, self.I0_star / 4.0
        return brentq(f, min(lo, hi), max(lo, hi), xtol=1e-15, rtol=4 * np.finfo(float).eps)


# ---------------------------------------------------------------------------
# Invariance error and one quasi-Newton step
# ---------------------------------------------------------------------------


def _grid_size(curve: CurveParametrization, m: int | None) -> int:
    return m or 4 * max(curve.order, 8)


def _error_samples(F, curve: CurveParametrization, m: int, with_jacobian: bool):
    u, v = curve.samples(m)
    try:
        if with_jacobian:
            ub, vb, jac = F.evaluate(u, v)
        else:
            ub, vb = F(u, v)
            jac = None
    except DomainEscape:
        raise
    except ImpactKamError as exc:
        raise DomainEscape(f"curve left the map's domain: {exc}") from exc
    if not (np.all(np.isfinite(ub)) and np.all(np.isfinite(vb))):
        raise DomainEscape("map returned non-finite values on the curve")
    tp = grid(m) + curve.omega + curve.phi_part.shift(curve.omega).samples(m)
    Ip = curve.I_part.shift(curve.omega).samples(m)
    e_phi = ub - tp
    # principal branch, continuous in θ
    e_phi -= TWO_PI * np.round(np.mean(e_phi) / TWO_PI)
    e_I = vb - Ip
    return e_phi, e_I, jac


def invariance_error(F, curve: CurveParametrization, m: int | None = None):
    """``e(θ) = F(φ(θ)) - φ(θ + ω)`` as a pair of PeriodicFns resolved on ``m`` points."""
    m = _grid_size(curve, m)
    e_phi, e_I, _ = _error_samples(F, curve, m, with_jacobian=False)
    n = (m - 1) // 2
    return PeriodicFn.from_samples(e_phi, n), PeriodicFn.from_samples(e_I, n)


def error_norm(F, curve: CurveParametrization, m: int | None = None) -> float:
    """Sup over the grid of ``max(|e_φ|, |e_I|)``."""
    m = _grid_size(curve, m)
    e_phi, e_I, _ = _error_samples(F, curve, m, with_jacobian=False)
    return float(max(np.max(np.abs(e_phi)), np.max(np.abs(e_I))))


@dataclass(frozen=True)
class KamStepWorkspace:
    """Intermediate objects of one correction step."""

    e_phi: PeriodicFn
    e_I: PeriodicFn
    Omega: PeriodicFn
    A: PeriodicFn
    a: PeriodicFn
    b: PeriodicFn
    avgA: float
    error_norm: float
    deriv_error_norm: float
    correction_norm: float
    avg_uJe: float
    avg_dephi_eI: float

    @property
    def exactness_residual(self) -> float:
        """``⟨φ₊'ᵀJe⟩ - ⟨e_φ'·e_I⟩``; quadratic-order zero for exact maps."""
        return self.avg_uJe - self.avg_dephi_eI


def _fit(values, n):
    return PeriodicFn.from_samples(values, n)


def kam_step(
    F,
    curve: CurveParametrization,
    m: int | None = None,
    avgA_floor: float = 0.0,
    divisor_floor: float = DIVISOR_FLOOR,
):
    """One quasi-Newton correction ``Δφ = a·φ' + b·Ω⁻¹Jφ'``.

    ``J = [[0, -1], [1, 0]]``. Products are formed on the ``m``-point grid
    (default ``4N``) and truncated back to the curve's order ``N``.
    Returns the corrected curve and the step workspace.
    """
    n = curve.order
    m = _grid_size(curve, m)
    omega = curve.omega
    e_phi, e_I, DF = _error_samples(F, curve, m, with_jacobian=True)

    d1, d2 = curve.tangent_samples(m)
    u1, u2 = curve.tangent_samples(m, shift=omega)
    Omega = d1**2 + d2**2
    Omega_p = u1**2 + u2**2
    if np.min(Omega) <= 0:
        raise DomainEscape("degenerate tangent: Ω vanishes on the grid")
    # Jφ' = (-φ_I', 1 + φ_φ')
    j1, j2 = -d2, d1
    w1 = DF[:, 0, 0] * j1 + DF[:, 0, 1] * j2
    w2 = DF[:, 1, 0] * j1 + DF[:, 1, 1] * j2
    A = (u1 * w1 + u2 * w2) / (Omega * Omega_p)
    avgA = float(np.mean(A))
    if abs(avgA) <= avgA_floor:
        raise DegenerateAverage(avgA, avgA_floor)

    uJe = -u1 * e_I + u2 * e_phi
    c_e = (u1 * e_phi + u2 * e_I) / Omega_p

    e_phi_fn = _fit(e_phi, (m - 1) // 2)
    e_I_fn = _fit(e_I, (m - 1) // 2)
    de_phi = e_phi_fn.derivative().samples(m)
    de_I = e_I_fn.derivative().samples(m)

    rhs_b = _fit(np.mean(uJe) - uJe, n)
    rhs_b = rhs_b - rhs_b.average()
    b_tilde = solve_cohomological(rhs_b, omega, divisor_floor=divisor_floor)
    bt = b_tilde.samples(m)
    b_avg = -(np.mean(A * bt) + np.mean(c_e)) / avgA
    b = b_tilde + b_avg
    bs = bt + b_avg

    rhs_a = _fit(A * bs + c_e, n)
    rhs_a = rhs_a - rhs_a.average()
    a = solve_cohomological(rhs_a, omega, divisor_floor=divisor_floor)
    as_ = a.samples(m)

    d_phi = as_ * d1 + bs * j1 / Omega
    d_I = as_ * d2 + bs * j2 / Omega
    d_phi_fn = _fit(d_phi, n)
    d_I_fn = _fit(d_I, n)

    ws = KamStepWorkspace(
        e_phi=e_phi_fn,
        e_I=e_I_fn,
        Omega=_fit(Omega, n),
        A=_fit(A, n),
        a=a,
        b=b,
        avgA=avgA,
        error_norm=float(max(np.max(np.abs(e_phi)), np.max(np.abs(e_I)))),
        deriv_error_norm=float(max(np.max(np.abs(de_phi)), np.max(np.abs(de_I)))),
        correction_norm=float(max(np.max(np.abs(d_phi)), np.max(np.abs(d_I)))),
        avg_uJe=float(np.mean(uJe)),
        avg_dephi_eI=float(np.mean(de_phi * e_I)),
    )
    return curve.add(d_phi_fn, d_I_fn), ws


# ---------------------------------------------------------------------------
# Outer loop
# ---------------------------------------------------------------------------


@dataclass
class KamIteration:
    error_norm: float
    deriv_error_norm: float
    avgA: float
    correction_norm: float
    exactness_residual: float


@dataclass
class KamReport:
    """History and verdict of :func:`solve_curve`.

    ``iterations`` counts invariance-error evaluations, so a curve that is
    already invariant reports one iteration.
    """

    omega: float
    tol: float
    order: int
    history: list[KamIteration] = field(default_factory=list)
    verdict: str = "running"
    final_error: float = math.nan
    quadratic_decay: bool = False
    log_ratios: list[float] = field(default_factory=list)
    rotation_check: float = math.nan
    rotation_error: float = math.nan
    strip_width: float = math.nan
    message: str = ""

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def converged(self) -> bool:
        return self.verdict == "converged"

    @property
    def error_norms(self) -> list[float]:
        return [h.error_norm for h in self.history]

    def as_dict(self) -> dict:
        return {
            "omega": self.omega,
            "tol": self.tol,
            "order": self.order,
            "verdict": self.verdict,
            "iterations": self.iterations,
            "final_error": self.final_error,
            "quadratic_decay": self.quadratic_decay,
            "log_ratios": self.log_ratios,
            "rotation_check": self.rotation_check,
            "rotation_error": self.rotation_error,
            "strip_width": self.strip_width,
            "message": self.message,
            "history": [vars(h) for h in self.history],
        }


def quadratic_decay_ratios(errors, floor: float) -> list[float]:
    """``log(e_{n+1}) / log(e_n)`` over the decaying segment.

    A pair counts while ``floor < e_n < 1`` and ``e_{n+1} < e_n``; the
    segment ends at the first pair starting on the rounding floor.
    """
    ratios = []
    for e0, e1 in zip(errors, errors[1:]):
        if e0 <= floor or not 0 < e1 < e0 < 1:
            break
        ratios.append(math.log(e1) / math.log(e0))
    return ratios


def fitted_strip_width(f: PeriodicFn, rel_floor: float = 1e-11) -> float:
    """Decay rate ``ρ`` of a fit ``|c_k| ≈ C·e^{-kρ}`` over the leading run above the noise floor."""
    c = np.abs(f.coeffs[1:])
    if c.size < 2 or c.max() == 0:
        return math.inf
    below = np.flatnonzero(c <= rel_floor * c.max())
    stop = int(below[0]) if below.size else c.size
    if stop < 2:
        return math.inf
    k = np.arange(1, stop + 1)
    slope = np.polyfit(k, np.log(c[:stop]), 1)[0]
    return float(-slope)


def default_initial_curve(F, omega: float, order: int) -> CurveParametrization:
    if not hasattr(F, "action_for_frequency"):
        raise ValueError("map has no twist inversion; pass an initial curve")
    return CurveParametrization.flat(F.action_for_frequency(omega), omega, order)


def solve_curve(
    F,
    omega: float,
    phi_init: CurveParametrization | None = None,
    tol: float | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    order: int = DEFAULT_ORDER,
    m: int | None = None,
    avgA_floor: float | None = None,
    divisor_floor: float = DIVISOR_FLOOR,
    rotation_iter: int = 0,
):
    """Iterate :func:`kam_step` until ``sup|e| < tol``.

    Raises :class:`NotConverged` (with the report attached) on divergence
    or when ``max_iter`` steps do not reach ``tol``. Small-divisor and
    degeneracy failures propagate with ``report`` set on the exception.
    """
    if tol is None:
        tol = 1e-11 * max(1.0, abs(omega))
    curve = phi_init if phi_init is not None else default_initial_curve(F, omega, order)
    if curve.omega != omega:
        curve = CurveParametrization(curve.phi_part, curve.I_part, omega)
    if avgA_floor is None:
        if hasattr(F, "alpha_prime") and hasattr(F, "I0_star"):
            avgA_floor = 1e-4 * abs(float(F.alpha_prime(F.I0_star)))
        else:
            avgA_floor = 0.0
    report = KamReport(omega=omega, tol=tol, order=curve.order)
    floor = 100.0 * np.finfo(float).eps * max(1.0, abs(omega))
    streak = 0

    for _ in range(max_iter + 1):
        try:
            new, ws = kam_step(F, curve, m=m, avgA_floor=avgA_floor, divisor_floor=divisor_floor)
        except SmallDivisorBreakdown as exc:
            report.verdict = "small_divisor_fail"
            report.message = str(exc)
            exc.report = report
            raise
        except (DegenerateAverage, DomainEscape) as exc:
            report.verdict = "diverged"
            report.message = str(exc)
            exc.report = report
            raise
        report.history.append(
            KamIteration(ws.error_norm, ws.deriv_error_norm, ws.avgA, ws.correction_norm, ws.exactness_residual)
        )
        if ws.error_norm < tol:
            report.verdict = "converged"
            break
        if len(report.history) > 1 and ws.error_norm > report.history[-2].error_norm:
            streak += 1
            if streak >= DIVERGENCE_STREAK:
                report.verdict = "diverged"
                report.message = f"error grew for {DIVERGENCE_STREAK} consecutive iterations"
                break
        else:
            streak = 0
        if len(report.history) > max_iter:
            break
        curve = new

    errs = report.error_norms
    report.final_error = errs[-1]
    report.log_ratios = quadratic_decay_ratios(errs, floor)
    report.quadratic_decay = _is_quadratic(report.log_ratios)
    report.strip_width = min(fitted_strip_width(curve.phi_part), fitted_strip_width(curve.I_part))

    if report.verdict != "converged":
        if report.verdict == "running":
            report.verdict = "diverged"
            report.message = f"no convergence to {tol:.1e} in {max_iter} iterations"
        raise NotConverged(report.message, report)

    if rotation_iter:
        start = tuple(float(c) for c in curve.points(0.0))
        est = rotation_estimate(F, start, rotation_iter)
        report.rotation_check = est.value
        report.rotation_error = est.error
    return curve, report


def _is_quadratic(ratios) -> bool:
    """At least two ratios in the band, and the median in the band too."""
    lo, hi = QUADRATIC_BAND
    inside = [lo <= r <= hi for r in ratios]
    return sum(inside) >= 2 and lo <= float(np.median(ratios)) <= hi
