"""Mie-series backscatter of a perfectly conducting sphere (validation oracle)."""

import numpy as np
from scipy.special import spherical_jn, spherical_yn


def _n_terms(x):
    return int(np.ceil(x + 4.0 * x ** (1.0 / 3.0) + 10))


def pec_sphere_backscatter(ka):
    """
    Normalized monostatic RCS sigma / (pi a^2) of a PEC sphere with size parameter ka.

    Uses the standard exterior series with Riccati-Bessel derivatives; tends to
    9 (ka)^4 in the Rayleigh limit and to 1 in the optical limit.
    """
    x = float(ka)
    if x <= 0:
        raise ValueError("ka must be positive")
    n = np.arange(1, _n_terms(x) + 1)
    jn = spherical_jn(n, x)
    yn = spherical_yn(n, x)
    jn_d = spherical_jn(n, x, derivative=True)
    yn_d = spherical_yn(n, x, derivative=True)
    hn = jn + 1j * yn
    hn_d = jn_d + 1j * yn_d
    a = jn / hn
    # [x z(x)]' = z + x z'
    b = (jn + x * jn_d) / (hn + x * hn_d)
    s = np.sum((-1.0) ** n * (2 * n + 1) * (b - a))
    return abs(s) ** 2 / x**2


def pec_sphere_backscatter_dbsm(radius, k):
    """Backscatter RCS in dBsm for a sphere of ``radius`` meters at wavenumber ``k``."""
    sigma = np.pi * radius**2 * pec_sphere_backscatter(k * radius)
    return 10.0 * np.log10(sigma)
