"""Rotationally symmetric reductions: radial harmonic profiles and weights.

For warped products dr^2 + psi(r)^2 g_{S^2} every solve collapses to the ODE
(psi^2 b')' = 0, so b' = kappa / psi^2 with kappa fixed by boundary data.  The
profile carries the mean-curvature factor f (H = f(u0) |grad u0|) and the
modified-functional weights c1, c2, c3 in closed form; t-derivatives by
central differences on a fine grid are kept as a cross-check path.

The same file hosts the 1-D conformal pole profile (Green's function of a
radial conformal metric) used as the high-precision oracle for the pole
asymptotics experiments.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .families import RadialMetricSpec


class DegenerateProfileError(ValueError):
    pass


def _cumulative_gl(fn, nodes, n_gauss=8):
    """Cumulative integral of fn over a node table by per-panel Gauss-Legendre."""
    x0, w0 = np.polynomial.legendre.leggauss(n_gauss)
    a, b = nodes[:-1], nodes[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    xs = mid[:, None] + half[:, None] * x0[None]
    panel = (half[:, None] * w0[None] * fn(xs.ravel()).reshape(xs.shape)).sum(axis=1)
    return np.concatenate([[0.0], np.cumsum(panel)])


@dataclass
class RadialProfile:
    """b, f(b(t)) and the c1, c2, c3 weights for one warped metric + data."""

    spec: RadialMetricSpec
    kappa: float
    r_tab: np.ndarray
    b_tab: np.ndarray
    _binv: PchipInterpolator = field(repr=False, default=None)
    _b: PchipInterpolator = field(repr=False, default=None)

    def b(self, r):
        return self._b(r)

    def bprime(self, r):
        return self.kappa / self.spec.psi(np.asarray(r, dtype=float)) ** 2

    def binv(self, u):
        return self._binv(u)

    def f_of_t(self, t):
        t = np.asarray(t, dtype=float)
        return 2 * self.spec.dpsi(t) * self.spec.psi(t) / abs(self.kappa)

    def c1(self, t):
        t = np.asarray(t, dtype=float)
        return -self.spec.psi(t) ** 2 / self.kappa

    def c2(self, t):
        t = np.asarray(t, dtype=float)
        return self.spec.psi(t) ** 3 * self.spec.dpsi(t) / self.kappa**2

    def c3(self, t):
        t = np.asarray(t, dtype=float)
        return self.spec.psi(t) ** 3 * self.spec.ddpsi(t) / self.kappa**2

    # finite-difference path for the same weights (cross-check of the algebra)
    def c2_fd(self, t, h=1e-6):
        c1p = (self.c1(t + h) - self.c1(t - h)) / (2 * h)
        return (c1p - 1.5 * self.f_of_t(t)) / self.bprime(t)

    def c3_fd(self, t, h=1e-6):
        c2p = (self.c2(t + h) - self.c2(t - h)) / (2 * h)
        return c2p - 0.75 * self.f_of_t(t) ** 2

    # closed-form surface quantities of the model (u0 = b, levels are r-spheres)
    def area(self, t):
        return 4 * np.pi * self.spec.psi(np.asarray(t, dtype=float)) ** 2

    def surf_grad_sq(self, t):
        return self.bprime(t) ** 2 * self.area(t)

    def surf_H_grad(self, t):
        t = np.asarray(t, dtype=float)
        H = 2 * self.spec.dpsi(t) / self.spec.psi(t)
        return H * np.abs(self.bprime(t)) * self.area(t)


def radial_profile(spec: RadialMetricSpec, bc, n_tab=4096):
    """Solve (psi^2 b')' = 0 for the Dirichlet data bc = (r_in, v_in, r_out, v_out)."""
    r_in, v_in, r_out, v_out = bc
    lo, hi = spec.r_range
    if not (lo <= r_in < r_out <= hi):
        raise ValueError("boundary radii outside the spec range")
    if v_in == v_out:
        raise DegenerateProfileError("equal boundary data gives a constant profile")
    r_tab = np.geomspace(r_in, r_out, n_tab)
    Q = _cumulative_gl(lambda s: 1.0 / spec.psi(s) ** 2, r_tab)
    kappa = (v_out - v_in) / Q[-1]
    b_tab = v_in + kappa * Q
    if kappa >= 0:
        raise DegenerateProfileError("profile must be decreasing (v_in > v_out)")
    prof = RadialProfile(spec=spec, kappa=float(kappa), r_tab=r_tab, b_tab=b_tab)
    prof._b = PchipInterpolator(r_tab, b_tab)
    prof._binv = PchipInterpolator(b_tab[::-1], r_tab[::-1])
    return prof


def f_bar_1d(profile: RadialProfile, t):
    """Modified functional of the model itself, evaluated exactly in 1-D."""
    return (4 * np.pi * np.asarray(t, dtype=float)
            - profile.c1(t) * profile.surf_H_grad(t)
            + profile.c2(t) * profile.surf_grad_sq(t))


def f_tilde_1d(profile: RadialProfile, curv_fn, a, t, n_gauss=24):
    """F-tilde of the model: F-bar(t) - F-bar(a) - bulk terms, 1-D quadrature.

    curv_fn(r) is the scalar curvature of the warped metric.  Vanishes
    identically by the choice of c1, c2, c3 (the design identity).
    """
    t = float(t)
    x0, w0 = np.polynomial.legendre.leggauss(n_gauss)
    mid, half = 0.5 * (a + t), 0.5 * (t - a)
    rs = mid + half * x0
    psi2 = profile.spec.psi(rs) ** 2
    bulk_R = 0.5 * 4 * np.pi * np.sum(w0 * curv_fn(rs) * psi2) * half
    bulk_c3 = 4 * np.pi * np.sum(w0 * profile.c3(rs) * profile.bprime(rs) ** 2 * psi2) * half
    return float(f_bar_1d(profile, t) - f_bar_1d(profile, a) - bulk_R - bulk_c3)


# ---------------------------------------------------------------------------
# radial conformal metrics: pole profile and the small-scale functionals


@dataclass
class ConformalPoleProfile:
    """Green's profile of g = phi(|x|)^4 g_euc on the unit ball, unit-strength pole."""

    phi_r: callable          # phi as a function of radius
    dphi_r: callable
    r_tab: np.ndarray
    e_tab: np.ndarray        # e(r) = Gamma - 1/r
    e0: float

    def u0(self, r):
        r = np.asarray(r, dtype=float)
        return 1.0 / r + np.interp(r, self.r_tab, self.e_tab) - self.e0

    def du0(self, r):
        r = np.asarray(r, dtype=float)
        return -1.0 / (self.phi_r(r) ** 2 * r**2)

    def level_radius(self, u_target):
        """Solve u0(r) = u_target (u0 strictly decreasing, log-log interpolation)."""
        vals = self.u0(self.r_tab)
        return float(np.exp(np.interp(-np.log(u_target), -np.log(vals),
                                      np.log(self.r_tab))))


def conformal_pole_profile(phi_s_fns, r_min=1e-7, n_tab=6000):
    """Tabulate e(r) = int_r^1 ds/(phi^2 s^2) - 1/r for a radial conformal factor.

    phi_s_fns = (phi, dphi/ds, .) in s = |x|^2, as carried by the families.
    """
    phi_s, dphi_s = phi_s_fns[0], phi_s_fns[1]
    phi_r = lambda r: phi_s(np.asarray(r, dtype=float) ** 2)
    dphi_r = lambda r: 2 * np.asarray(r, dtype=float) * dphi_s(np.asarray(r, dtype=float) ** 2)
    r_tab = np.geomspace(r_min, 1.0, n_tab)
    # Gamma(r) = int_r^1 ds/(phi^2 s^2) and e = Gamma - 1/r give
    # e(r) = -1 + int_r^1 (1 - phi^2)/(phi^2 s^2) ds; the integrand is O(s^2)
    # near the pole so the [0, r_min] tail is negligible at r_min ~ 1e-7
    de = _cumulative_gl(lambda s: (1 - phi_r(s) ** 2) / (phi_r(s) ** 2 * s**2), r_tab)
    e_tab = -1.0 + (de[-1] - de)
    e0 = float(e_tab[0])
    return ConformalPoleProfile(phi_r=phi_r, dphi_r=dphi_r, r_tab=r_tab,
                                e_tab=e_tab, e0=e0)


def conformal_curvature_r(phi_s_fns):
    """R(r) for g = phi^4 g_euc with radial phi: R = -8 phi^-5 lap(phi)."""
    phi_s, dphi_s, ddphi_s = phi_s_fns

    def R(r):
        s = np.asarray(r, dtype=float) ** 2
        return -8.0 * phi_s(s) ** -5 * (6 * dphi_s(s) + 4 * s * ddphi_s(s))

    return R


def f_tilde_conformal_1d(profile: ConformalPoleProfile, curv_r, t, n_gauss=64):
    """Small-scale F-tilde of a radial conformal model, fully 1-D.

    All geometric quantities are conformal closed forms on round spheres; the
    bulk term integrates f |grad u0| / u0^2 from the pole to the level radius.
    """
    rt = profile.level_radius(1.0 / t)
    phi = profile.phi_r
    dphi = profile.dphi_r
    gn = np.abs(profile.du0(rt)) / phi(rt) ** 2           # |grad u0|_g
    area = 4 * np.pi * phi(rt) ** 4 * rt**2
    H = (2 / rt + 4 * dphi(rt) / phi(rt)) / phi(rt) ** 2
    surf_H = H * gn * area
    surf_2 = gn**2 * area
    bulk = _bulk_integral_conformal(profile, curv_r, profile.r_tab[0], rt, n_gauss)
    return float(4 * np.pi * t - t**2 * surf_H + t**3 * surf_2 - 0.5 * bulk)


def _bulk_integral_conformal(profile, curv_r, r_lo, r_hi, n_gauss=64):
    """int over {r_lo <= r <= r_hi} of f |grad u0|_g / u0^2 dv_g, radial."""
    x0, w0 = np.polynomial.legendre.leggauss(n_gauss)
    # integrate in ln r for resolution near the pole
    la, lb = np.log(r_lo), np.log(r_hi)
    ls = 0.5 * (la + lb) + 0.5 * (lb - la) * x0
    rs = np.exp(ls)
    phi = profile.phi_r(rs)
    gn = np.abs(profile.du0(rs)) / phi**2
    u0 = profile.u0(rs)
    integrand = curv_r(rs) * gn / u0**2 * phi**6 * 4 * np.pi * rs**2
    return float(0.5 * (lb - la) * np.sum(w0 * integrand * rs))


def m_of_a_conformal_1d(profile, curv_r, a, n_gauss=64):
    """M(a) for the radial conformal model: bulk integral over {u0 >= 1/a}."""
    ra = profile.level_radius(1.0 / a)
    return _bulk_integral_conformal(profile, curv_r, profile.r_tab[0], ra, n_gauss)
