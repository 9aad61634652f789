"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class ImpactKamError(Exception):
    """Base class for numerical failures raised by this package."""


class NonzeroAverage(ImpactKamError):
    def __init__(self, average: float, tol: float):
        super().__init__(f"right-hand side has average {average:.3e} (tolerance {tol:.1e})")
        self.average = average
        self.tol = tol


class SmallDivisorBreakdown(ImpactKamError):
    def __init__(self, k: int, divisor: float, floor: float):
        super().__init__(
            f"small divisor |exp(i*k*omega) - 1| = {divisor:.3e} <= {floor:.1e} at k = {k}"
        )
        self.k = k
        self.divisor = divisor
        self.floor = floor


class NoConvergence(ImpactKamError):
    """An iterative solver exhausted its iteration budget."""


class NonPositiveRoot(ImpactKamError):
    """The impact-time equation has no admissible positive root near its dominant part."""


class SingularImpact(ImpactKamError):
    """Velocity at the section is below the grazing floor."""


class DomainEscape(ImpactKamError):
    """A point left the domain where the map is defined."""


class DegenerateAverage(ImpactKamError):
    def __init__(self, avg: float, floor: float):
        super().__init__(f"|<A>| = {abs(avg):.3e} below nondegeneracy floor {floor:.3e}")
        self.avg = avg
        self.floor = floor


class NotConverged(ImpactKamError):
    """KAM iteration failed; ``report`` carries the full iteration history."""

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report
