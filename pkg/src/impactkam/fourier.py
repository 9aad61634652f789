"""Truncated Fourier series of one angle.

A :class:`PeriodicFn` stores the coefficients ``c_k`` for ``k = 0..N`` of a
real 2π-periodic function

    f(θ) = c_0 + Σ_{k=1}^{N} (c_k e^{ikθ} + conj(c_k) e^{-ikθ}),

so Hermitian symmetry holds by construction and point values are real.
Values on equispaced grids go through ``numpy.fft.rfft``/``irfft``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonzeroAverage, SmallDivisorBreakdown

TWO_PI = 2.0 * np.pi

DEFAULT_ORDER = 128
DIVISOR_FLOOR = 1e-12
TOL_AVG = 1e-10
TOL_COH = 1e-9


def grid(m: int) -> np.ndarray:
    """Equispaced angles ``2πj/m``, ``j = 0..m-1``."""
    return TWO_PI * np.arange(m) / m


class PeriodicFn:
    """Real trigonometric polynomial of degree ``N``.

    Instances are treated as immutable; every operation returns a new object.
    """

    __slots__ = ("_c",)

    def __init__(self, coeffs):
        c = np.array(coeffs, dtype=complex).reshape(-1)
        if c.size == 0:
            c = np.zeros(1, dtype=complex)
        c[0] = c[0].real
        c.setflags(write=False)
        self._c = c

    # -- construction -------------------------------------------------------

    @classmethod
    def zeros(cls, n: int = 0) -> PeriodicFn:
        return cls(np.zeros(n + 1))

    @classmethod
    def constant(cls, value: float, n: int = 0) -> PeriodicFn:
        c = np.zeros(n + 1, dtype=complex)
        c[0] = value
        return cls(c)

    @classmethod
    def from_cos_sin(cls, a0: float, ak=(), bk=(), n: int | None = None) -> PeriodicFn:
        """``a0 + Σ a_k cos(kθ) + b_k sin(kθ)`` for ``k = 1, 2, ...``."""
        ak = np.asarray(ak, dtype=float)
        bk = np.asarray(bk, dtype=float)
        K = max(ak.size, bk.size)
        if n is None:
            n = K
        c = np.zeros(max(n, K) + 1, dtype=complex)
        c[0] = a0
        c[1 : ak.size + 1] += ak / 2
        c[1 : bk.size + 1] += -1j * bk / 2
        return cls(c[: n + 1])

    @classmethod
    def from_samples(cls, values, n: int | None = None) -> PeriodicFn:
        """Interpolate samples taken at :func:`grid` points and truncate to degree ``n``.

        Exact recovery of a degree-``n`` polynomial needs ``len(values) >= 2n + 1``.
        """
        values = np.asarray(values, dtype=float)
        m = values.size
        c = np.fft.rfft(values) / m
        if n is None:
            n = (m - 1) // 2
        if n > (m - 1) // 2:
            raise ValueError(f"{m} samples cannot resolve degree {n}")
        return cls(c[: n + 1])

    # -- basic properties ---------------------------------------------------

    @property
    def coeffs(self) -> np.ndarray:
        """Coefficients ``c_0..c_N`` (read-only view)."""
        return self._c

    @property
    def order(self) -> int:
        return self._c.size - 1

    def full_coeffs(self) -> np.ndarray:
        """Two-sided coefficients ``c_{-N}..c_N``."""
        c = self._c
        return np.concatenate([np.conj(c[:0:-1]), c])

    def __repr__(self) -> str:
        return f"PeriodicFn(order={self.order}, mean={self.average():.6g})"

    # -- evaluation ---------------------------------------------------------

    def __call__(self, theta):
        return self.eval(theta)

    def eval(self, theta):
        """Point values; accepts scalars or arrays of real angles."""
        theta = np.asarray(theta, dtype=float)
        th = np.mod(theta, TWO_PI)
        c = self._c
        if c.size == 1:
            out = np.full(th.shape, c[0].real)
            return out if th.ndim else float(out)
        k = np.arange(1, c.size)
        phase = np.exp(1j * np.multiply.outer(th, k))
        out = c[0].real + 2.0 * (phase @ c[1:]).real
        return out if th.ndim else float(out)

    def eval_complex(self, theta):
        """Evaluate the analytic continuation at complex ``theta``."""
        theta = np.asarray(theta, dtype=complex)
        k = np.arange(-self.order, self.order + 1)
        return np.exp(1j * np.multiply.outer(theta, k)) @ self.full_coeffs()

    def samples(self, m: int) -> np.ndarray:
        """Values on the ``m``-point grid (``m > 2N`` for exactness)."""
        if m <= 2 * self.order:
            raise ValueError(f"grid of {m} points aliases degree {self.order}")
        spec = np.zeros(m // 2 + 1, dtype=complex)
        spec[: self._c.size] = self._c
        return np.fft.irfft(spec, n=m) * m

    # -- calculus -----------------------------------------------------------

    def average(self) -> float:
        return float(self._c[0].real)

    def derivative(self) -> PeriodicFn:
        k = np.arange(self._c.size)
        return PeriodicFn(1j * k * self._c)

    def antiderivative(self) -> PeriodicFn:
        """Zero-mean antiderivative of ``f - <f>``."""
        k = np.arange(self._c.size)
        c = np.zeros_like(self._c)
        c[1:] = self._c[1:] / (1j * k[1:])
        return PeriodicFn(c)

    def shift(self, omega: float) -> PeriodicFn:
        """``θ ↦ f(θ + ω)``."""
        k = np.arange(self._c.size)
        return PeriodicFn(self._c * np.exp(1j * k * np.mod(omega, TWO_PI)))

    # -- arithmetic ---------------------------------------------------------

    def resize(self, n: int) -> PeriodicFn:
        """Truncate or zero-pad to degree ``n``."""
        c = np.zeros(n + 1, dtype=complex)
        m = min(n, self.order) + 1
        c[:m] = self._c[:m]
        return PeriodicFn(c)

    def _aligned(self, other: PeriodicFn):
        n = max(self.order, other.order)
        return self.resize(n)._c, other.resize(n)._c

    def __add__(self, other):
        if isinstance(other, PeriodicFn):
            a, b = self._aligned(other)
            return PeriodicFn(a + b)
        c = self._c.copy()
        c[0] += other
        return PeriodicFn(c)

    __radd__ = __add__

    def __neg__(self):
        return PeriodicFn(-self._c)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, PeriodicFn):
            return multiply(self, other)
        return PeriodicFn(self._c * other)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return PeriodicFn(self._c / scalar)

    def allclose(self, other: PeriodicFn, atol: float = 1e-12) -> bool:
        a, b = self._aligned(other)
        return bool(np.max(np.abs(a - b)) <= atol)

    # -- norms --------------------------------------------------------------

    def sup_on_grid(self, m: int | None = None) -> float:
        m = m or max(4 * self.order, 64)
        return float(np.max(np.abs(self.samples(m))))

    def strip_norm(self, rho: float) -> StripNorm:
        return strip_norm(self, rho)


def multiply(f: PeriodicFn, g: PeriodicFn, n: int | None = None) -> PeriodicFn:
    """Pointwise product truncated to degree ``n`` (default: the larger order).

    Sampling on ``4n`` points is alias-free for the retained modes.
    """
    if n is None:
        n = max(f.order, g.order)
    m = max(4 * max(n, f.order, g.order), 4)
    return PeriodicFn.from_samples(f.samples(m) * g.samples(m), n)


@dataclass(frozen=True)
class StripNorm:
    """Majorant ``Σ |c_k| e^{|k|ρ}`` of the sup-norm on the strip ``|Im θ| < ρ``."""

    rho: float
    value: float


def strip_norm(f: PeriodicFn, rho: float) -> StripNorm:
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"strip half-width must lie in [0, 1), got {rho}")
    c = np.abs(f.coeffs)
    k = np.arange(c.size)
    value = c[0] + 2.0 * np.sum(c[1:] * np.exp(k[1:] * rho))
    return StripNorm(rho=rho, value=float(value))


def small_divisors(omega: float, n: int) -> np.ndarray:
    """``e^{ikω} - 1`` for ``k = 0..n``."""
    k = np.arange(n + 1)
    return np.expm1(1j * k * np.mod(omega, TWO_PI))


def solve_cohomological(
    g: PeriodicFn,
    omega: float,
    divisor_floor: float = DIVISOR_FLOOR,
    tol_avg: float = TOL_AVG,
) -> PeriodicFn:
    """Zero-mean solution ``f`` of ``f(θ + ω) - f(θ) = g(θ)``.

    Coefficients are ``ĝ_k / (e^{ikω} - 1)``; ``g`` must have zero mean.
    Every divisor up to the order of ``g`` is checked, whether or not the
    matching coefficient vanishes.
    """
    avg = g.average()
    if abs(avg) >= tol_avg:
        raise NonzeroAverage(avg, tol_avg)
    d = small_divisors(omega, g.order)
    mags = np.abs(d[1:])
    if mags.size and mags.min() <= divisor_floor:
        k = int(np.argmin(mags)) + 1
        raise SmallDivisorBreakdown(k, float(mags[k - 1]), divisor_floor)
    c = np.zeros_like(g.coeffs)
    c[1:] = g.coeffs[1:] / d[1:]
    return PeriodicFn(c)


def difference(f: PeriodicFn, omega: float) -> PeriodicFn:
    """``f(θ + ω) - f(θ)``."""
    return f.shift(omega) - f
