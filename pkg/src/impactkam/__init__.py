"""Impact map and parametrization-KAM tools for ẍ + sign(x) = ε p(t)."""

__version__ = "0.1.0"
