import warnings

import numpy as np
import pytest

from impactkam.dynamics import ForcingSpec, ScaledImpactMap, ScaledMapSpec, ValidityWarning
from impactkam.kam import solve_curve
from impactkam.rotation import GOLDEN_OMEGA, frequency_ladder

# the proven smallness condition is far stricter than the regimes explored here
warnings.simplefilter("ignore", ValidityWarning)


@pytest.fixture(autouse=True)
def _quiet_validity():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ValidityWarning)
        yield


@pytest.fixture(scope="session")
def cos_forcing():
    return ForcingSpec.cosine()


@pytest.fixture(scope="session")
def golden_curves():
    """Converged curves on the golden ladder at eps = 0.01, keyed by rung."""
    f = ForcingSpec.cosine()
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ValidityWarning)
        for r in frequency_ladder(0.01, 0.0, GOLDEN_OMEGA, range(4, 10)):
            F = ScaledImpactMap(ScaledMapSpec(r.y0_star, 0.01), f)
            curve, report = solve_curve(F, r.omega, tol=1e-11, rotation_iter=2000)
            out[r.k] = (r, F, curve, report)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
