"""Special functions used by the kernel evaluators.

Thin wrappers over scipy with the domain conventions the rest of the
package relies on (principal Lambert branch with an explicit branch-cut
error, Gaussian heat kernel restricted to increasing time arguments, and
the upper-tail Airy integral).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import airy, airye, itairy
from scipy.special import lambertw as _lambertw

__all__ = ["airy_ai", "airy_ai_prime", "airy_ai_exp", "ai_integral_upper",
           "lambert_w0", "heat_kernel"]


def airy_ai(x):
    """Ai(x), vectorized, real arguments (complex accepted and passed through)."""
    return airy(x)[0]


def airy_ai_exp(a, c):
    """Ai(a) * e^c without forming either factor: pairs the exponentially
    scaled Airy function with the shifted exponent, so products like
    Ai(x) e^{|r| x} stay finite far into the right tail where Ai underflows
    and the bare exponential overflows."""
    a = np.asarray(a, dtype=float)
    c = np.broadcast_to(np.asarray(c, dtype=float), a.shape)
    ap = np.maximum(a, 0.0)
    expo = c - (2.0 / 3.0) * ap * np.sqrt(ap)
    # airye is only defined for a >= 0 on the reals; the left side needs no
    # rescue since Ai is O(1) there
    out = airye(ap)[0] * np.exp(np.minimum(expo, 709.0))
    neg = a < 0.0
    if np.any(neg):
        out = np.where(neg, airy(a)[0] * np.exp(np.minimum(c, 709.0)), out)
    return out


def airy_ai_prime(x):
    return airy(x)[1]


def ai_integral_upper(x):
    """AI1(x) = integral of Ai over [x, infinity).

    Uses int_0^inf Ai = 1/3 and scipy's itairy for the [0, x] piece, which
    stays accurate for large negative x where naive quadrature of the
    oscillatory tail would not.
    """
    x = np.asarray(x, dtype=float)
    iapt = itairy(np.abs(x))
    # itairy returns (Apt, Bpt, Ant, Bnt): integrals of Ai/Bi over [0, |x|]
    # and of Ai(-t)/Bi(-t) over [0, |x|].
    res = np.where(x >= 0, 1.0 / 3.0 - iapt[0], 1.0 / 3.0 + iapt[2])
    return res if res.ndim else float(res)


def lambert_w0(z, tol: float = 1e-13):
    """Principal Lambert branch W0(z).

    Raises ValueError on real arguments below the branch point -1/e (up to
    tol), where W0 leaves the reals; complex arguments are evaluated on the
    principal branch as scipy defines it.
    """
    z = np.asarray(z)
    if np.isrealobj(z):
        zmin = float(np.min(z)) if z.ndim else float(z)
        if zmin < -1.0 / math.e - tol:
            raise ValueError(
                f"lambert_w0: real argument {zmin} below the branch point -1/e"
            )
        w = _lambertw(np.clip(z, -1.0 / math.e, None))
        w = np.real(w)
        return w if w.ndim else float(w)
    w = _lambertw(z)
    return w if w.ndim else complex(w)


def heat_kernel(r1: float, r2: float, s1, s2):
    """Gaussian propagator V_{r1,r2}(s1,s2) = exp(-(s2-s1)^2/(4(r2-r1))) /
    sqrt(4 pi (r2-r1)), defined only for r2 > r1."""
    if not r2 > r1:
        raise ValueError(f"heat_kernel requires r2 > r1, got r1={r1}, r2={r2}")
    dr = r2 - r1
    s1 = np.asarray(s1, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    out = np.exp(-((s2 - s1) ** 2) / (4.0 * dr)) / math.sqrt(4.0 * math.pi * dr)
    return out if out.ndim else float(out)
