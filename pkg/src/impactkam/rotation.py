"""Frequency arithmetic: Diophantine margins, rotation numbers, the frequency ladder."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, NamedTuple

import numpy as np

from .errors import DomainEscape, ImpactKamError

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
GOLDEN_OMEGA = 2.0 * math.pi * GOLDEN
Y0_STAR_MIN = 5.0
DEFAULT_Q_MAX = 100_000


# ---------------------------------------------------------------------------
# Continued fractions and Diophantine margins
# ---------------------------------------------------------------------------


def continued_fraction(x, max_terms: int = 64) -> list[int]:
    """Partial quotients of ``x`` (a float is expanded exactly as a dyadic rational)."""
    r = Fraction(x)
    terms = []
    for _ in range(max_terms):
        a = math.floor(r)
        terms.append(int(a))
        r -= a
        if r == 0:
            break
        r = 1 / r
    return terms


def convergents(x, q_max: int):
    """Convergents ``(p, q)`` of ``x`` with ``q <= q_max``."""
    p0, q0, p1, q1 = 0, 1, 1, 0
    out = []
    for a in continued_fraction(x):
        p0, q0, p1, q1 = p1, q1, a * p1 + p0, a * q1 + q0
        if q1 > q_max:
            break
        out.append((p1, q1))
    return out


@dataclass(frozen=True)
class FrequencySpec:
    """A frequency together with its measured Diophantine data up to ``q_max``."""

    omega: float
    gamma: float
    nu: float
    q_max: int

    @classmethod
    def measure(cls, omega: float, nu: float = 2.0, q_max: int = DEFAULT_Q_MAX) -> FrequencySpec:
        gamma, _ = diophantine_margin(omega, nu, q_max)
        return cls(omega, gamma, nu, q_max)

    def holds(self, q: int) -> bool:
        """Check ``|ω/2π - p/q| >= γ/q^ν`` at one denominator."""
        x = self.omega / (2.0 * math.pi)
        return abs(x - round(q * x) / q) >= self.gamma / q**self.nu * (1 - 1e-12)


class DiophantineMargin(NamedTuple):
    gamma: float
    q: int


def _frac_dist(x: Fraction, q: int) -> float:
    """``|q·x - nearest integer|`` computed exactly, then rounded."""
    qx = q * x
    return float(abs(qx - round(qx)))


def diophantine_margin(omega: float, nu: float = 2.0, q_max: int = DEFAULT_Q_MAX) -> DiophantineMargin:
    """Largest γ with ``|ω/2π - p/q| >= γ/q^ν`` for all ``q <= q_max``, and the worst ``q``.

    Only continued-fraction convergents can attain the minimum of
    ``q^(ν-1)·‖q·ω/2π‖``. Distances below the rounding level of the float
    ``ω/2π`` are reported as exact zeros (a float cannot separate them
    from a rational).
    """
    if q_max < 1:
        raise ValueError("q_max must be at least 1")
    if nu < 1:
        raise ValueError("exponent nu must be at least 1")
    x = math.fmod(omega / (2.0 * math.pi), 1.0)
    if x < 0:
        x += 1.0
    xf = Fraction(x)
    best = DiophantineMargin(math.inf, 1)
    for _, q in convergents(x, q_max) or [(0, 1)]:
        d = _frac_dist(xf, q)
        if d <= 8.0 * np.finfo(float).eps * q:
            d = 0.0
        g = q ** (nu - 1.0) * d
        if g < best.gamma:
            best = DiophantineMargin(g, q)
        if g == 0.0:
            break
    if best.gamma is math.inf:
        best = DiophantineMargin(_frac_dist(xf, 1), 1)
    return best


def diophantine_margin_bruteforce(omega: float, nu: float = 2.0, q_max: int = 10_000) -> DiophantineMargin:
    """Reference search over every denominator (slow; for checking)."""
    x = (omega / (2.0 * math.pi)) % 1.0
    q = np.arange(1, q_max + 1, dtype=float)
    d = np.abs(q * x - np.round(q * x))
    g = q ** (nu - 1.0) * d
    i = int(np.argmin(g))
    return DiophantineMargin(float(g[i]), i + 1)


# ---------------------------------------------------------------------------
# Rotation numbers
# ---------------------------------------------------------------------------


class RotationEstimate(NamedTuple):
    value: float
    error: float


def _bump_weights(n: int) -> np.ndarray:
    s = (np.arange(n) + 0.5) / n
    w = np.exp(-1.0 / (s * (1.0 - s)))
    return w / w.sum()


def weighted_birkhoff(increments) -> float:
    """Weighted average with the smooth bump ``exp(-1/(s(1-s)))``."""
    d = np.asarray(increments, dtype=float)
    return float(_bump_weights(d.size) @ d)


def orbit_angles(F: Callable, start, n_iter: int) -> np.ndarray:
    """Lifted angles ``θ_0..θ_n`` along the orbit of ``F(u, v) -> (ū, v̄)``."""
    u, v = (float(c) for c in start)
    out = np.empty(n_iter + 1)
    out[0] = u
    for i in range(n_iter):
        try:
            u, v = F(u, v)
        except ImpactKamError as exc:
            raise DomainEscape(f"orbit left the domain after {i} iterates: {exc}") from exc
        u, v = float(u), float(v)
        if not (math.isfinite(u) and math.isfinite(v)):
            raise DomainEscape(f"orbit became non-finite after {i + 1} iterates")
        out[i + 1] = u
    return out


def rotation_estimate(F: Callable, start, n_iter: int = 1000, weighted: bool = True) -> RotationEstimate:
    """Mean angle advance per iterate, with a half-sample consistency error."""
    if n_iter < 4:
        raise ValueError("n_iter must be at least 4")
    d = np.diff(orbit_angles(F, start, n_iter))
    avg = weighted_birkhoff if weighted else (lambda a: float(np.mean(a)))
    full = avg(d)
    half = avg(d[: d.size // 2])
    return RotationEstimate(full, abs(full - half))


def rotation_number(F: Callable, start, n_iter: int = 1000, weighted: bool = True) -> float:
    """Lifted rotation number of ``F`` (angle units per iterate) along the orbit of ``start``."""
    return rotation_estimate(F, start, n_iter, weighted).value


# ---------------------------------------------------------------------------
# Frequency ladder
# ---------------------------------------------------------------------------


class LadderRung(NamedTuple):
    k: int
    omega: float
    y0_star: float


@dataclass(frozen=True)
class Ladder:
    rungs: tuple[LadderRung, ...]
    dropped: tuple[LadderRung, ...]

    def __iter__(self):
        return iter(self.rungs)

    def __len__(self):
        return len(self.rungs)


def frequency_ladder(eps: float, a0: float, omega0: float, k_range) -> Ladder:
    """Frequencies ``ω_k = ω0 + 2πk`` and the amplitudes ``y0*`` at which they are the twist frequency.

    Rungs with ``y0* <= 5`` lie outside the large-amplitude regime and are
    returned separately in ``dropped``.
    """
    if abs(a0 * eps) >= 0.5:
        raise ValueError(f"|a0*eps| = {abs(a0 * eps):.3g} must be < 1/2")
    factor = 1.0 - (a0 * eps) ** 2
    keep, drop = [], []
    for k in k_range:
        w = omega0 + 2.0 * math.pi * k
        rung = LadderRung(int(k), w, w * factor / 4.0)
        (keep if rung.y0_star > Y0_STAR_MIN else drop).append(rung)
    return Ladder(tuple(keep), tuple(drop))
