"""Flows, impact times and impact maps of ẍ + sign(x) = ε p(t).

Everything here is vectorized over NumPy arrays of section points; scalar
inputs give scalar outputs. Angles returned by the maps are lifts (the
sum ``t0 + τ⁺ + τ⁻`` is never reduced modulo 2π) so that differences of
successive times are meaningful.

Conventions
-----------
* ``p(t) = a0 + Σ a_k cos(kt) + b_k sin(kt)``.
* ``P̃0 = p - a0``, ``P̃1' = P̃0``, ``P̃2' = P̃1`` (zero means), ``P̃-1 = P̃0'``.
* Σ⁺ = {x = 0, y > 0}; the impact map is Σ⁺ → Σ⁻ → Σ⁺.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import DomainEscape, NoConvergence, NonPositiveRoot, SingularImpact
from .fourier import PeriodicFn, strip_norm

Y_MIN = 1e-3
Y0_TRUSTED = 5.0
SQRT2 = math.sqrt(2.0)

NEWTON_MAXITER = 60
FIXED_POINT_MAXITER = 100


class ValidityWarning(UserWarning):
    """Parameters lie outside the regime where the large-amplitude estimates are proved."""


@dataclass(frozen=True)
class ForcingSpec:
    """Fourier data of the forcing ``p`` and its normalized antiderivatives."""

    a0: float = 0.0
    ak: tuple[float, ...] = ()
    bk: tuple[float, ...] = ()
    rho: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "ak", tuple(float(v) for v in self.ak))
        object.__setattr__(self, "bk", tuple(float(v) for v in self.bk))
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"analyticity width rho must lie in (0, 1), got {self.rho}")

    @classmethod
    def cosine(cls, amplitude: float = 1.0, a0: float = 0.0, rho: float = 0.25) -> ForcingSpec:
        """``p(t) = a0 + amplitude·cos t``."""
        return cls(a0=a0, ak=(amplitude,), rho=rho)

    @cached_property
    def p(self) -> PeriodicFn:
        return PeriodicFn.from_cos_sin(self.a0, self.ak, self.bk)

    @cached_property
    def P0(self) -> PeriodicFn:
        return self.p - self.a0

    @cached_property
    def P1(self) -> PeriodicFn:
        return self.P0.antiderivative()

    @cached_property
    def P2(self) -> PeriodicFn:
        return self.P1.antiderivative()

    @cached_property
    def Pm1(self) -> PeriodicFn:
        return self.P0.derivative()

    @cached_property
    def p_tilde(self) -> float:
        """Common bound on the strip norms of P̃-1, P̃0, P̃1, P̃2."""
        return max(strip_norm(f, self.rho).value for f in (self.Pm1, self.P0, self.P1, self.P2))

    @cached_property
    def _tables(self):
        c0 = self.P0.coeffs[1:]
        k = np.arange(1, c0.size + 1)
        return k, c0, c0 / (1j * k), -c0 / k**2

    def tilde(self, t):
        """``(P̃0(t), P̃1(t), P̃2(t))`` in one pass."""
        t = np.asarray(t, dtype=float)
        k, c0, c1, c2 = self._tables
        if k.size == 0:
            z = np.zeros_like(t)
            return z, z, z
        e = np.exp(1j * np.multiply.outer(np.mod(t, 2.0 * np.pi), k))
        return 2.0 * (e @ c0).real, 2.0 * (e @ c1).real, 2.0 * (e @ c2).real

    def validity(self, eps: float) -> dict:
        """Smallness conditions of the large-amplitude analysis."""
        return {
            "a0_eps": abs(self.a0 * eps),
            "a0_eps_ok": abs(self.a0 * eps) < 0.5,
            "smallness": 864.0 * eps * self.p_tilde / self.rho,
            "smallness_ok": 864.0 * eps * self.p_tilde < self.rho,
        }


def _check_eps(eps: float, forcing: ForcingSpec) -> None:
    if eps < 0:
        raise ValueError(f"epsilon must be non-negative, got {eps}")
    if abs(forcing.a0 * eps) >= 0.5:
        raise ValueError(f"|a0*eps| = {abs(forcing.a0 * eps):.3g} must be < 1/2")
    if eps > 0 and 864.0 * eps * forcing.p_tilde >= forcing.rho:
        warnings.warn(
            f"864*eps*p_tilde = {864.0 * eps * forcing.p_tilde:.3g} >= rho = {forcing.rho}: "
            "outside the proven smallness regime",
            ValidityWarning,
            stacklevel=3,
        )


# ---------------------------------------------------------------------------
# Flows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhasePoint:
    t: float
    x: float
    y: float


def _P1P2(tau, t0, eps, forcing):
    """``ε·P1(τ, t0)`` and ``ε·P2(τ, t0)`` with the closed-form antiderivatives."""
    if eps == 0.0:
        z = np.zeros(np.broadcast(tau, t0).shape)
        return z, z
    _, p1a, p2a = forcing.tilde(t0)
    _, p1b, p2b = forcing.tilde(t0 + tau)
    a0 = forcing.a0
    P1 = a0 * tau + p1b - p1a
    P2 = a0 * tau**2 / 2 - tau * p1a + p2b - p2a
    return eps * P1, eps * P2


def _flow(side: int, t, x, y, tau, eps, forcing):
    eP1, eP2 = _P1P2(tau, t, eps, forcing)
    return t + tau, x + tau * y - side * tau**2 / 2 + eP2, y - side * tau + eP1


def flow_right(point: PhasePoint, tau: float, eps: float, forcing: ForcingSpec) -> PhasePoint:
    """Exact solution in x > 0 (restoring force -1) after time ``tau``."""
    t, x, y = _flow(1, point.t, point.x, point.y, tau, eps, forcing)
    return PhasePoint(float(t), float(x), float(y))


def flow_left(point: PhasePoint, tau: float, eps: float, forcing: ForcingSpec) -> PhasePoint:
    """Exact solution in x < 0 (restoring force +1) after time ``tau``."""
    t, x, y = _flow(-1, point.t, point.x, point.y, tau, eps, forcing)
    return PhasePoint(float(t), float(x), float(y))


@dataclass(frozen=True)
class ImpactPoint:
    """Point ``(t0, y0)`` on Σ⁺."""

    t0: float
    y0: float

    def __post_init__(self):
        if not self.y0 > Y_MIN:
            raise SingularImpact(f"y0 = {self.y0} must exceed the grazing floor {Y_MIN}")

    @property
    def E0(self) -> float:
        return -0.5 * self.y0**2


def vector_field(t, state, eps, forcing):
    """Right-hand side of the first-order system, for external integrators."""
    x, y = state
    return [y, -np.sign(x) + eps * forcing.p(t)]


# ---------------------------------------------------------------------------
# Impact times
# ---------------------------------------------------------------------------


class ImpactTimeDecomposition(NamedTuple):
    """``tau = tau0 + ε·tau_star``; arrays or scalars."""

    tau: np.ndarray
    tau0: np.ndarray
    tau_star: np.ndarray


def _dominant_time(side, t, y, eps, forcing, p1=None):
    if p1 is None:
        p1 = forcing.tilde(t)[1] if eps else 0.0
    return 2.0 * side * (y - eps * p1) / (1.0 - side * forcing.a0 * eps)


def impact_residual(side: int, t, y, tau, eps, forcing):
    """Position at time ``tau`` of the orbit leaving the section at ``(t, 0, y)``.

    Zero exactly at an impact; equals the left-hand side of the scalar
    impact-time equation (times -1 on the left side's convention).
    """
    return _flow(side, t, 0.0, y, tau, eps, forcing)[1]


def _newton_time(side, t, y, eps, forcing, tau0):
    """Safeguarded Newton on ``h(τ) = s·x(τ)`` inside ``[τ0/2, 2τ0]``.

    ``h`` is positive at the left end and negative at the right end; a
    Newton step leaving the current bracket is replaced by bisection.
    """
    a0 = forcing.a0
    _, p1a, p2a = forcing.tilde(t)
    lin = y - eps * p1a
    quad = side * (1.0 - side * a0 * eps) / 2.0

    def h_and_dh(tau):
        p0b, p1b, p2b = forcing.tilde(t + tau)
        g = tau * lin - quad * tau**2 + eps * (p2b - p2a)
        dg = lin - 2.0 * quad * tau + eps * p1b
        return side * g, side * dg

    lo = 0.5 * tau0
    hi = 2.0 * tau0
    h_lo = h_and_dh(lo)[0]
    h_hi = h_and_dh(hi)[0]
    bad = ~((h_lo > 0) & (h_hi < 0))
    if np.any(bad):
        i = int(np.argmax(np.ravel(bad)))
        raise NonPositiveRoot(
            "impact-time bracket [tau0/2, 2*tau0] does not isolate a root "
            f"(t={np.ravel(np.broadcast_to(t, bad.shape))[i]:.6g}, "
            f"y={np.ravel(np.broadcast_to(y, bad.shape))[i]:.6g})"
        )
    tau = np.array(tau0, dtype=float, copy=True)
    active = np.ones(tau.shape, dtype=bool)
    for _ in range(NEWTON_MAXITER):
        h, dh = h_and_dh(tau)
        lo = np.where(h > 0, tau, lo)
        hi = np.where(h < 0, tau, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            new = tau - h / dh
        outside = ~((new >= lo) & (new <= hi))
        new = np.where(outside, 0.5 * (lo + hi), new)
        step = np.abs(new - tau)
        tau = np.where(active, new, tau)
        # converged points are frozen so rounding-level bracket flips cannot stall the batch
        active &= step > 1e-13 * np.abs(tau)
        if not np.any(active):
            return tau
    raise NoConvergence(f"Newton impact-time solve did not converge in {NEWTON_MAXITER} steps")


def _fixed_point_correction(side, t, y, eps, forcing, tau0):
    """Iterate τ* ↦ 2s(P̃2(t+τ0+ετ*) - P̃2(t)) / ((1 - s·a0·ε)(τ0 + ετ*))."""
    _, _, p2t = forcing.tilde(t)
    denom = 1.0 - side * forcing.a0 * eps
    tol = 1e-12 * np.maximum(1.0, np.abs(y))
    ts = np.zeros(np.broadcast(t, y).shape)
    for _ in range(FIXED_POINT_MAXITER):
        T = tau0 + eps * ts
        new = 2.0 * side * (forcing.tilde(t + T)[2] - p2t) / (denom * T)
        if np.all(np.abs(new - ts) < tol):
            return new
        ts = new
    raise NoConvergence(f"fixed-point iteration for tau_star exceeded {FIXED_POINT_MAXITER} steps")


def _impact_time(side, t, y, eps, forcing, method):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(side * y <= Y_MIN):
        raise SingularImpact(f"|y| at the section must exceed {Y_MIN} (grazing)")
    if method not in ("newton", "fixed_point"):
        raise ValueError(f"unknown method {method!r}")
    tau0 = _dominant_time(side, t, y, eps, forcing)
    if np.any(tau0 <= 0):
        raise NonPositiveRoot("dominant impact time is not positive")
    if eps == 0.0:
        tau0 = np.broadcast_to(tau0, np.broadcast(t, y).shape).astype(float)
        return ImpactTimeDecomposition(tau0, tau0, np.zeros_like(tau0))
    if method == "newton":
        tau = _newton_time(side, t, y, eps, forcing, tau0)
        ts = (tau - tau0) / eps
    else:
        ts = _fixed_point_correction(side, t, y, eps, forcing, tau0)
        tau = tau0 + eps * ts
    if np.any(tau <= 0):
        raise NonPositiveRoot("impact time is not positive")
    return ImpactTimeDecomposition(tau, np.broadcast_to(tau0, tau.shape), ts)


def _scalarize(res):
    if all(np.ndim(v) == 0 for v in res):
        return type(res)(*(float(v) for v in res))
    return res


def impact_time_plus(t0, y0, eps: float, forcing: ForcingSpec, method: str = "newton"):
    """Time to go from Σ⁺ at ``(t0, y0)`` to the next crossing of x = 0."""
    _check_eps(eps, forcing)
    return _scalarize(_impact_time(1, t0, y0, eps, forcing, method))


def impact_time_minus(t1, y1, eps: float, forcing: ForcingSpec, method: str = "newton"):
    """Time to go from Σ⁻ at ``(t1, y1)`` back to x = 0."""
    _check_eps(eps, forcing)
    return _scalarize(_impact_time(-1, t1, y1, eps, forcing, method))


# ---------------------------------------------------------------------------
# Half maps and their Jacobians
# ---------------------------------------------------------------------------


def _half_map(side, t, y, eps, forcing, method="newton"):
    """Returns ``(t_out, y_out, decomposition, jacobian)``; jacobian shape (..., 2, 2)."""
    dec = _impact_time(side, t, y, eps, forcing, method)
    tau = dec.tau
    _, _, v = _flow(side, t, 0.0, y, tau, eps, forcing)
    if np.any(side * v >= -Y_MIN):
        raise SingularImpact("orbit reaches the section tangentially (grazing impact)")
    if eps:
        p0a, p1a, _ = forcing.tilde(t)
        p0b, p1b, _ = forcing.tilde(t + tau)
        x_t = eps * (-tau * p0a + p1b - p1a)
        v_t = eps * (p0b - p0a)
        v_tau = -side + eps * (forcing.a0 + p0b)
    else:
        x_t = v_t = np.zeros_like(tau)
        v_tau = -side * np.ones_like(tau)
    tau_t = -x_t / v
    tau_y = -tau / v
    jac = np.empty(tau.shape + (2, 2))
    jac[..., 0, 0] = 1.0 + tau_t
    jac[..., 0, 1] = tau_y
    jac[..., 1, 0] = v_t + v_tau * tau_t
    jac[..., 1, 1] = 1.0 + v_tau * tau_y
    return t + tau, v, dec, jac


def half_map_plus(t0, y0, eps: float, forcing: ForcingSpec):
    """Σ⁺ → Σ⁻: returns ``(t1, y1)``."""
    _check_eps(eps, forcing)
    t1, y1, _, _ = _half_map(1, np.asarray(t0, float), np.asarray(y0, float), eps, forcing)
    if np.ndim(t1) == 0:
        return float(t1), float(y1)
    return t1, y1


def half_map_minus(t1, y1, eps: float, forcing: ForcingSpec):
    """Σ⁻ → Σ⁺: returns ``(t_bar, y_bar)``."""
    _check_eps(eps, forcing)
    t2, y2, _, _ = _half_map(-1, np.asarray(t1, float), np.asarray(y1, float), eps, forcing)
    if np.ndim(t2) == 0:
        return float(t2), float(y2)
    return t2, y2


# ---------------------------------------------------------------------------
# Full impact map
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImpactMapOutput:
    """Image of Σ⁺ points and the decomposition ``t̄ = t0 + α + ε f_t0``, ``ȳ = y0 + ε f_y0``.

    ``t_bar`` and ``y_bar`` come from the composed flows; ``f_t0`` and
    ``f_y0`` are assembled from the impact-time corrections, so the two
    routes agree only up to rounding.
    """

    t_bar: np.ndarray
    y_bar: np.ndarray
    alpha: np.ndarray
    f_t0: np.ndarray
    f_y0: np.ndarray
    t1: np.ndarray
    y1: np.ndarray
    tau_plus: ImpactTimeDecomposition = field(repr=False)
    tau_minus: ImpactTimeDecomposition = field(repr=False)
    jacobian: np.ndarray = field(repr=False)


def rotation_part(y0, eps: float, a0: float):
    """``α_ε(y0) = 4 y0 / (1 - a0² ε²)``."""
    return 4.0 * np.asarray(y0) / (1.0 - (a0 * eps) ** 2)


def _impact_map(t0, y0, eps, forcing, method="newton"):
    t0 = np.asarray(t0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    t1, y1, dec_p, jac_p = _half_map(1, t0, y0, eps, forcing, method)
    t2, y2, dec_m, jac_m = _half_map(-1, t1, y1, eps, forcing, method)
    a0 = forcing.a0
    alpha = rotation_part(y0, eps, a0)
    if eps:
        p1_t0 = forcing.tilde(t0)[1]
        p1_t2 = forcing.tilde(t2)[1]
        f_t0 = (
            -4.0 * p1_t0 / (1.0 - (a0 * eps) ** 2)
            + (3.0 - a0 * eps) / (1.0 + a0 * eps) * dec_p.tau_star
            + dec_m.tau_star
        )
        f_y0 = p1_t2 - p1_t0 + (1.0 - a0 * eps) * dec_p.tau_star + (1.0 + a0 * eps) * dec_m.tau_star
    else:
        f_t0 = np.zeros_like(t2)
        f_y0 = np.zeros_like(t2)
    jac = jac_m @ jac_p
    return ImpactMapOutput(t2, y2, alpha, f_t0, f_y0, t1, y1, dec_p, dec_m, jac)


def impact_map(t0, y0, eps: float, forcing: ForcingSpec, method: str = "newton") -> ImpactMapOutput:
    """Full return map Σ⁺ → Σ⁺ in ``(t0, y0)`` coordinates."""
    _check_eps(eps, forcing)
    return _impact_map(t0, y0, eps, forcing, method)


def iterate_impact_map(t0, y0, n: int, eps: float, forcing: ForcingSpec, record: bool = True):
    """Orbit of ``n`` impact-map steps from ``(t0, y0)`` (arrays allowed).

    Returns arrays of shape ``(n + 1, ...)`` of lifted times and velocities,
    or only the final point when ``record`` is false.
    """
    _check_eps(eps, forcing)
    t = np.asarray(t0, dtype=float)
    y = np.asarray(y0, dtype=float)
    ts, ys = [t], [y]
    for _ in range(n):
        t1 = _impact_step(1, t, y, eps, forcing)
        t, y = _impact_step(-1, *t1, eps, forcing)
        if record:
            ts.append(t)
            ys.append(y)
    if record:
        return np.array(ts), np.array(ys)
    return t, y


def _impact_step(side, t, y, eps, forcing):
    """Half map without Jacobian bookkeeping."""
    dec = _impact_time(side, t, y, eps, forcing, "newton")
    _, _, v = _flow(side, t, 0.0, y, dec.tau, eps, forcing)
    return t + dec.tau, v


def energy_from_velocity(y):
    return -0.5 * np.asarray(y) ** 2


def velocity_from_energy(E):
    E = np.asarray(E, dtype=float)
    if np.any(E >= 0):
        raise DomainEscape("energy coordinate must be negative on Σ⁺")
    return np.sqrt(-2.0 * E)


@dataclass(frozen=True)
class EnergyMapOutput:
    """``t̄ = t0 + ᾱ(E0) + ε f_t0``, ``Ē = E0 + ε f_E0``."""

    t_bar: np.ndarray
    E_bar: np.ndarray
    alpha: np.ndarray
    f_t0: np.ndarray
    f_E0: np.ndarray
    jacobian: np.ndarray = field(repr=False)


def _to_energy_jacobian(jac_y, y0, y_bar):
    """Conjugate a ``(t, y)`` Jacobian by ``E = -y²/2`` on both sides."""
    out = np.empty_like(jac_y)
    out[..., 0, 0] = jac_y[..., 0, 0]
    out[..., 0, 1] = -jac_y[..., 0, 1] / y0
    out[..., 1, 0] = -y_bar * jac_y[..., 1, 0]
    out[..., 1, 1] = y_bar * jac_y[..., 1, 1] / y0
    return out


def impact_map_energy(t0, E0, eps: float, forcing: ForcingSpec, method: str = "newton") -> EnergyMapOutput:
    """Impact map in the canonical time-energy coordinates ``(t0, E0 = -y0²/2)``."""
    _check_eps(eps, forcing)
    return _impact_map_energy(t0, E0, eps, forcing, method)


def _impact_map_energy(t0, E0, eps, forcing, method="newton"):
    y0 = velocity_from_energy(E0)
    out = _impact_map(t0, y0, eps, forcing, method)
    E_bar = energy_from_velocity(out.y_bar)
    f_E0 = -(2.0 * y0 * out.f_y0 + eps * out.f_y0**2) / 2.0
    alpha = 4.0 * np.sqrt(-2.0 * np.asarray(E0, float)) / (1.0 - (forcing.a0 * eps) ** 2)
    jac = _to_energy_jacobian(out.jacobian, y0, out.y_bar)
    return EnergyMapOutput(out.t_bar, E_bar, alpha, out.f_t0, f_E0, jac)


# ---------------------------------------------------------------------------
# Localized and scaled map
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScaledMapSpec:
    """Reference amplitude ``y0*`` and the matching energy and action."""

    y0_star: float
    epsilon: float

    def __post_init__(self):
        if self.y0_star <= 0:
            raise ValueError("y0_star must be positive")
        if self.y0_star <= Y0_TRUSTED:
            warnings.warn(
                f"y0_star = {self.y0_star:.4g} <= 5: twist bounds are not guaranteed",
                ValidityWarning,
                stacklevel=3,
            )

    @property
    def E0_star(self) -> float:
        return -(self.y0_star**2) / 2.0

    @property
    def I0_star(self) -> float:
        return -self.y0_star / SQRT2

    @property
    def action_scale(self) -> float:
        """``sqrt(-E0*)``: ``I = E / action_scale``."""
        return self.y0_star / SQRT2


def velocity_from_action(I, y0_star: float):
    """``y0(I) = sqrt(-√2·y0*·I)``."""
    I = np.asarray(I, dtype=float)
    arg = -SQRT2 * y0_star * I
    if np.any(arg <= Y_MIN**2):
        raise DomainEscape("action left the half-line I < 0 where the scaled map is defined")
    return np.sqrt(arg)


def action_from_velocity(y, y0_star: float):
    return -np.asarray(y) ** 2 / (SQRT2 * y0_star)


@dataclass(frozen=True)
class ScaledMapOutput:
    """``φ̄ = φ + α(I) + f_φ``, ``Ī = I + f_I``; ``f_φ`` and ``f_I`` already carry the ε factor."""

    phi_bar: np.ndarray
    I_bar: np.ndarray
    alpha: np.ndarray
    f_phi: np.ndarray
    f_I: np.ndarray
    jacobian: np.ndarray = field(repr=False)


def scaled_alpha(I, spec: ScaledMapSpec, a0: float):
    return 4.0 / (1.0 - (a0 * spec.epsilon) ** 2) * velocity_from_action(I, spec.y0_star)


def scaled_alpha_prime(I, spec: ScaledMapSpec, a0: float):
    y = velocity_from_action(I, spec.y0_star)
    return -4.0 / (1.0 - (a0 * spec.epsilon) ** 2) * SQRT2 * spec.y0_star / (2.0 * y)


def scaled_alpha_second(I, spec: ScaledMapSpec, a0: float):
    y = velocity_from_action(I, spec.y0_star)
    return -4.0 / (1.0 - (a0 * spec.epsilon) ** 2) * spec.y0_star**2 / (2.0 * y**3)


def scaled_map(spec: ScaledMapSpec, phi, I, forcing: ForcingSpec, method: str = "newton") -> ScaledMapOutput:
    """Impact map localized at ``E0*`` and rescaled so the twist is of order one."""
    _check_eps(spec.epsilon, forcing)
    return _scaled_map(spec, phi, I, forcing, method)


def _scaled_map(spec, phi, I, forcing, method="newton"):
    eps = spec.epsilon
    y0 = velocity_from_action(I, spec.y0_star)
    out = _impact_map(phi, y0, eps, forcing, method)
    I_bar = action_from_velocity(out.y_bar, spec.y0_star)
    f_phi = eps * out.f_t0
    f_I = -eps / (SQRT2 * spec.y0_star) * (2.0 * y0 * out.f_y0 + eps * out.f_y0**2)
    alpha = 4.0 / (1.0 - (forcing.a0 * eps) ** 2) * y0
    c = spec.action_scale
    jac_E = _to_energy_jacobian(out.jacobian, y0, out.y_bar)
    jac = jac_E.copy()
    jac[..., 0, 1] *= c
    jac[..., 1, 0] /= c
    return ScaledMapOutput(out.t_bar, I_bar, alpha, f_phi, f_I, jac)


class ScaledImpactMap:
    """Callable annulus map ``(φ, I) ↦ (φ̄, Ī)`` with Jacobian, as consumed by the KAM solver.

    ``jacobian_mode`` selects the analytic Jacobian (implicit differentiation
    of the impact-time equation) or Richardson-extrapolated central differences.
    """

    def __init__(self, spec: ScaledMapSpec, forcing: ForcingSpec, jacobian_mode: str = "analytic"):
        if jacobian_mode not in ("analytic", "finite_difference"):
            raise ValueError(f"unknown jacobian mode {jacobian_mode!r}")
        _check_eps(spec.epsilon, forcing)
        self.spec = spec
        self.forcing = forcing
        self.jacobian_mode = jacobian_mode

    @property
    def epsilon(self) -> float:
        return self.spec.epsilon

    @property
    def I0_star(self) -> float:
        return self.spec.I0_star

    def __call__(self, phi, I):
        out = self._eval(phi, I)
        return out.phi_bar, out.I_bar

    def _eval(self, phi, I):
        try:
            return _scaled_map(self.spec, phi, I, self.forcing)
        except (SingularImpact, NonPositiveRoot) as exc:
            raise DomainEscape(str(exc)) from exc

    def evaluate(self, phi, I):
        """``(φ̄, Ī, DF)``."""
        out = self._eval(phi, I)
        if self.jacobian_mode == "analytic":
            return out.phi_bar, out.I_bar, out.jacobian
        jac = finite_difference_jacobian(self.__call__, phi, I, scale=(1.0, 1.0))
        return out.phi_bar, out.I_bar, jac

    def jacobian(self, phi, I):
        return self.evaluate(phi, I)[2]

    def alpha(self, I):
        return scaled_alpha(I, self.spec, self.forcing.a0)

    def alpha_prime(self, I):
        return scaled_alpha_prime(I, self.spec, self.forcing.a0)

    def action_for_frequency(self, omega: float) -> float:
        """Solve ``α(I) = ω`` for the action (closed form for this twist)."""
        y = omega * (1.0 - (self.forcing.a0 * self.epsilon) ** 2) / 4.0
        return float(action_from_velocity(y, self.spec.y0_star))

    def to_section(self, phi, I):
        """``(t0, y0)`` on Σ⁺ for scaled coordinates."""
        return np.asarray(phi, float), velocity_from_action(I, self.spec.y0_star)


# ---------------------------------------------------------------------------
# Jacobians
# ---------------------------------------------------------------------------


def finite_difference_jacobian(fun, u, v, scale=(1.0, 1.0), h: float = 1e-6):
    """Central differences with one Richardson extrapolation, vectorized over points.

    ``fun(u, v) -> (U, V)``. Steps are ``h·scale``.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)

    def central(step_u, step_v):
        up = fun(u + step_u, v + step_v)
        um = fun(u - step_u, v - step_v)
        width = 2.0 * (step_u + step_v)
        return (np.asarray(up[0]) - um[0]) / width, (np.asarray(up[1]) - um[1]) / width

    hu = h * scale[0]
    hv = h * scale[1]
    jac = np.empty(np.broadcast(u, v).shape + (2, 2))
    for col, (du, dv) in enumerate(((hu, 0.0), (0.0, hv))):
        d1 = central(du, dv)
        d2 = central(du / 2, dv / 2)
        jac[..., 0, col] = (4.0 * d2[0] - d1[0]) / 3.0
        jac[..., 1, col] = (4.0 * d2[1] - d1[1]) / 3.0
    return jac


MAP_IDS = ("impact", "energy", "scaled", "half_plus", "half_minus")


def jacobian(
    map_id: str,
    point,
    eps: float,
    forcing: ForcingSpec,
    mode: str = "analytic",
    y0_star: float | None = None,
):
    """2×2 Jacobian of one of the section maps at ``point`` (or an array of points).

    ``map_id``: ``impact`` in (t0, y0), ``energy`` in (t0, E0), ``scaled`` in
    (φ, I) (needs ``y0_star``), ``half_plus`` / ``half_minus`` in (t, y).
    """
    _check_eps(eps, forcing)
    u, v = (np.asarray(c, dtype=float) for c in point)
    if map_id == "impact":
        fun = lambda a, b: _pair(_impact_map(a, b, eps, forcing), "t_bar", "y_bar")
        analytic = lambda: _impact_map(u, v, eps, forcing).jacobian
        scale = (1.0, max(1.0, float(np.max(np.abs(v)))))
    elif map_id == "energy":
        fun = lambda a, b: _pair(_impact_map_energy(a, b, eps, forcing), "t_bar", "E_bar")
        analytic = lambda: _impact_map_energy(u, v, eps, forcing).jacobian
        scale = (1.0, max(1.0, float(np.max(np.abs(v)))))
    elif map_id == "scaled":
        if y0_star is None:
            raise ValueError("scaled map needs y0_star")
        spec = ScaledMapSpec(y0_star, eps)
        fun = lambda a, b: _pair(_scaled_map(spec, a, b, forcing), "phi_bar", "I_bar")
        analytic = lambda: _scaled_map(spec, u, v, forcing).jacobian
        scale = (1.0, 1.0)
    elif map_id in ("half_plus", "half_minus"):
        side = 1 if map_id == "half_plus" else -1
        fun = lambda a, b: _half_map(side, a, b, eps, forcing)[:2]
        analytic = lambda: _half_map(side, u, v, eps, forcing)[3]
        scale = (1.0, max(1.0, float(np.max(np.abs(v)))))
    else:
        raise ValueError(f"unknown map id {map_id!r}; expected one of {MAP_IDS}")
    if mode == "analytic":
        return analytic()
    if mode == "finite_difference":
        return finite_difference_jacobian(fun, u, v, scale=scale)
    raise ValueError(f"unknown jacobian mode {mode!r}")


def _pair(out, a, b):
    return getattr(out, a), getattr(out, b)
