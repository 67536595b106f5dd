"""Piecewise-polynomial weight kernels for the level-set stability quantities.

All three kernels arise from integrating F-type surface quantities twice over
sliding dyadic windows; they are evaluated exactly (no quadrature).  `psi` and
`psi1` carry an explicit 1/a scaling law used by the rescaling identities.
"""

import numpy as np


def weight_phi(y, a, s):
    """Weight from one window integration at scale a with shift s in [0, a].

    Piecewise: a plateau on [1/(a+s), 1/a], a quadratic ramp on
    [1/(2a+2s), 1/(a+s)], zero elsewhere.
    """
    if a <= 0:
        raise ValueError("scale a must be positive")
    if s < 0 or s > a:
        raise ValueError("shift s must lie in [0, a]")
    y = np.asarray(y, dtype=float)
    lo = 1.0 / (2 * a + 2 * s)
    mid = 1.0 / (a + s)
    hi = 1.0 / a
    plateau = 0.25 * (a + s) ** -2 - 0.25 * (2 * a + 2 * s) ** -2
    ramp = 0.25 * y**2 - 0.25 * (2 * a + 2 * s) ** -2
    out = np.where((y >= lo) & (y < mid), ramp, 0.0)
    out = np.where((y >= mid) & (y <= hi), plateau, out)
    return out if out.ndim else float(out)


def weight_phi1(y, a, s):
    """Scale-8a variant of `weight_phi`, shift s in [0, 8a].

    The bulk term is still broken at a, so the plateau extends to 1/a.
    """
    if a <= 0:
        raise ValueError("scale a must be positive")
    if s < 0 or s > 8 * a:
        raise ValueError("shift s must lie in [0, 8a]")
    y = np.asarray(y, dtype=float)
    lo = 1.0 / (16 * a + 2 * s)
    mid = 1.0 / (8 * a + s)
    hi = 1.0 / a
    plateau = 0.25 * (8 * a + s) ** -2 - 0.25 * (16 * a + 2 * s) ** -2
    ramp = 0.25 * y**2 - 0.25 * (16 * a + 2 * s) ** -2
    out = np.where((y >= lo) & (y < mid), ramp, 0.0)
    out = np.where((y >= mid) & (y <= hi), plateau, out)
    return out if out.ndim else float(out)


def weight_psi(y, a):
    """Twice-integrated kernel on [1/(4a), 1/a]; continuous, value 1/(32a) at 1/(2a)."""
    if a <= 0:
        raise ValueError("scale a must be positive")
    y = np.asarray(y, dtype=float)
    b1 = 0.5 * a * y**2 - 0.25 * y + 1.0 / (32 * a)
    b2 = -0.25 * a * y**2 + 0.5 * y - 5.0 / (32 * a)
    out = np.where((y >= 1 / (4 * a)) & (y < 1 / (2 * a)), b1, 0.0)
    out = np.where((y >= 1 / (2 * a)) & (y <= 1 / a), b2, out)
    return out if out.ndim else float(out)


def weight_psi1(y, a):
    """Scale-8a twice-integrated kernel; plateau 3/(256a) on [1/(8a), 1/a]."""
    if a <= 0:
        raise ValueError("scale a must be positive")
    y = np.asarray(y, dtype=float)
    b1 = 4 * a * y**2 - 0.25 * y + 1.0 / (256 * a)
    b2 = -2 * a * y**2 + 0.5 * y - 5.0 / (256 * a)
    out = np.where((y >= 1 / (32 * a)) & (y < 1 / (16 * a)), b1, 0.0)
    out = np.where((y >= 1 / (16 * a)) & (y < 1 / (8 * a)), b2, out)
    out = np.where((y >= 1 / (8 * a)) & (y <= 1 / a), 3.0 / (256 * a), out)
    return out if out.ndim else float(out)
