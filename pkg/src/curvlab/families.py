"""Explicit metric families used by the experiments.

Everything here carries analytic first and second derivatives so that
curvature and the divergence-form coefficients never fall back to finite
differences.  Radially structured metrics come in two parameterizations:
smooth-at-origin fields use s = |x|^2, shell-only fields use r = |x|.
"""

from dataclasses import dataclass

import numpy as np

from .metric import MetricField, Region, _as_points

_EYE3 = np.eye(3)


# ---------------------------------------------------------------------------
# generic radial-tensor builders


def _smetric(c_fns, q_fns=None, domain=None, name="radial", conformal=None, warped=None,
             normalized=False):
    """Metric c(s) I + q(s) x x^T with s = |x|^2; c_fns = (c, c_s, c_ss)."""
    c, cs, css = c_fns
    if q_fns is None:
        q = qs = qss = lambda s: np.zeros_like(s)
    else:
        q, qs, qss = q_fns

    def ev(p):
        s = np.einsum("ni,ni->n", p, p)
        return (c(s)[:, None, None] * _EYE3[None]
                + q(s)[:, None, None] * np.einsum("ni,nj->nij", p, p))

    def dv(p):
        s = np.einsum("ni,ni->n", p, p)
        xx = np.einsum("ni,nj->nij", p, p)
        sym = np.einsum("ki,nj->nkij", _EYE3, p) + np.einsum("kj,ni->nkij", _EYE3, p)
        out = 2 * np.einsum("n,nk,ij->nkij", cs(s), p, _EYE3)
        out += 2 * np.einsum("n,nk,nij->nkij", qs(s), p, xx)
        out += q(s)[:, None, None, None] * sym
        return out

    def ddv(p):
        s = np.einsum("ni,ni->n", p, p)
        xx = np.einsum("ni,nj->nij", p, p)
        xkl = np.einsum("nk,nl->nkl", p, p)
        sym_i = np.einsum("ki,nj->nkij", _EYE3, p) + np.einsum("kj,ni->nkij", _EYE3, p)
        dd_c = (2 * np.einsum("n,kl->nlk", cs(s), _EYE3)[..., None, None] * _EYE3[None, None, None]
                + 4 * np.einsum("n,nkl->nlk", css(s), xkl)[..., None, None] * _EYE3[None, None, None])
        dd_q = (2 * np.einsum("n,kl->nlk", qs(s), _EYE3)[..., None, None] * xx[:, None, None]
                + 4 * np.einsum("n,nkl->nlk", qss(s), xkl)[..., None, None] * xx[:, None, None])
        cross = (2 * np.einsum("n,nk,nlij->nlkij", qs(s), p, sym_i)
                 + 2 * np.einsum("n,nl,nkij->nlkij", qs(s), p, sym_i))
        const = (np.einsum("ki,lj->klij", _EYE3, _EYE3) + np.einsum("kj,li->klij", _EYE3, _EYE3))
        return dd_c + dd_q + cross + q(s)[:, None, None, None, None] * const[None]

    return MetricField(ev, dv, ddv, domain=domain, name=name, conformal=conformal,
                       warped=warped, normalized=normalized)


def _rmetric(f1_fns, f2_fns, domain, name="shell-radial", warped=None):
    """Metric f1(r) I + f2(r) x x^T on a shell (r = |x| > 0); fns = (f, f', f'')."""
    f1, df1, ddf1 = f1_fns
    f2, df2, ddf2 = f2_fns

    def ev(p):
        r = np.linalg.norm(p, axis=1)
        return (f1(r)[:, None, None] * _EYE3[None]
                + f2(r)[:, None, None] * np.einsum("ni,nj->nij", p, p))

    def dv(p):
        r = np.linalg.norm(p, axis=1)
        u = p / r[:, None]
        xx = np.einsum("ni,nj->nij", p, p)
        sym = np.einsum("ki,nj->nkij", _EYE3, p) + np.einsum("kj,ni->nkij", _EYE3, p)
        out = np.einsum("n,nk,ij->nkij", df1(r), u, _EYE3)
        out += np.einsum("n,nk,nij->nkij", df2(r), u, xx)
        out += f2(r)[:, None, None, None] * sym
        return out

    def ddv(p):
        r = np.linalg.norm(p, axis=1)
        u = p / r[:, None]
        xx = np.einsum("ni,nj->nij", p, p)
        uu = np.einsum("nk,nl->nkl", u, u)
        # d_l (x_k / r) = delta_kl / r - x_k x_l / r^3
        duu = _EYE3[None] / r[:, None, None] - uu / r[:, None, None]
        sym = np.einsum("ki,nj->nkij", _EYE3, p) + np.einsum("kj,ni->nkij", _EYE3, p)
        const = (np.einsum("ki,lj->klij", _EYE3, _EYE3) + np.einsum("kj,li->klij", _EYE3, _EYE3))
        out = (np.einsum("n,nkl->nlk", ddf1(r), uu)[..., None, None] * _EYE3[None, None, None]
               + np.einsum("n,nkl->nlk", df1(r), duu)[..., None, None] * _EYE3[None, None, None])
        out = out + (np.einsum("n,nkl->nlk", ddf2(r), uu)[..., None, None] * xx[:, None, None]
                     + np.einsum("n,nkl->nlk", df2(r), duu)[..., None, None] * xx[:, None, None])
        out = out + (np.einsum("n,nk,nlij->nlkij", df2(r), u, sym)
                     + np.einsum("n,nl,nkij->nlkij", df2(r), u, sym))
        return out + f2(r)[:, None, None, None, None] * const[None]

    return MetricField(ev, dv, ddv, domain=domain, name=name, warped=warped)


def conformal_metric(phi_s_fns, domain=None, name="conformal", normalized=False):
    """g = phi^4 g_euc from (phi, dphi/ds, d2phi/ds2) with s = |x|^2."""
    f, fs, fss = phi_s_fns
    c = lambda s: f(s) ** 4
    cs = lambda s: 4 * f(s) ** 3 * fs(s)
    css = lambda s: 12 * f(s) ** 2 * fs(s) ** 2 + 4 * f(s) ** 3 * fss(s)

    def phi_pts(p):
        return f(np.einsum("ni,ni->n", p, p))

    def lap_phi_pts(p):
        s = np.einsum("ni,ni->n", p, p)
        return 6 * fs(s) + 4 * s * fss(s)

    return _smetric((c, cs, css), domain=domain, name=name,
                    conformal=(phi_pts, lap_phi_pts), normalized=normalized)


# ---------------------------------------------------------------------------
# the sharpness example family


def _eta_piecewise(rho, r):
    """C^2 radial cutoff: 1 on [0, r/2], quintic smoothstep down to 0 at r."""
    rho = np.asarray(rho, dtype=float)
    tau = np.clip((rho - r / 2) / (r / 2), 0.0, 1.0)
    val = 1.0 - (6 * tau**5 - 15 * tau**4 + 10 * tau**3)
    dtau = np.where((rho > r / 2) & (rho < r), 2.0 / r, 0.0)
    dval = -(30 * tau**4 - 60 * tau**3 + 30 * tau**2) * dtau
    ddval = -(120 * tau**3 - 180 * tau**2 + 60 * tau) * dtau**2
    return val, dval, ddval


@dataclass
class SharpnessFamily:
    """The conformal pair g0 = phi0^4 g_euc, g = phi^4 g_euc at scale r = eps^(1/4)."""

    epsilon: float
    a_coeff: float

    def __post_init__(self):
        if not 0 < self.epsilon <= 0.1:
            raise ValueError("epsilon must lie in (0, 0.1]")
        if not 0 < self.a_coeff <= 1:
            raise ValueError("a_coeff must lie in (0, 1]")
        self.r = self.epsilon**0.25
        if self.r >= 0.5:
            raise ValueError(f"scale r = eps^(1/4) = {self.r:.3f} >= 1/2 leaves the unit-ball regime")
        self.amp = self.a_coeff * np.sqrt(self.epsilon)

    # scalar pieces as functions of s = |x|^2
    def phi0(self, s):
        return 1.0 - s**2 / 20.0

    def v(self, s):
        return (self.r**2 - s) / 6.0

    def eta(self, s):
        rho = np.sqrt(np.maximum(s, 0.0))
        return _eta_piecewise(rho, self.r)[0]

    def _phi_fns(self):
        r = self.r
        amp = self.amp

        def w(s):
            rho = np.sqrt(np.maximum(s, 1e-30))
            e, _, _ = _eta_piecewise(rho, r)
            return e * (r**2 - s) / 6.0

        def ws(s):
            sg = np.maximum(s, 1e-30)
            rho = np.sqrt(sg)
            e, de, _ = _eta_piecewise(rho, r)
            es = de / (2 * rho)
            return es * (r**2 - s) / 6.0 + e * (-1.0 / 6.0)

        def wss(s):
            sg = np.maximum(s, 1e-30)
            rho = np.sqrt(sg)
            e, de, dde = _eta_piecewise(rho, r)
            es = de / (2 * rho)
            # de and dde vanish identically off the transition annulus
            ess = dde / (4 * sg) - de / (4 * sg * rho)
            return ess * (r**2 - s) / 6.0 + 2 * es * (-1.0 / 6.0)

        phi = lambda s: self.phi0(s) + amp * w(s)
        phis = lambda s: -s / 10.0 + amp * ws(s)
        phiss = lambda s: -1.0 / 10.0 + amp * wss(s)
        return phi, phis, phiss

    def pair(self):
        # the conformal factors are analytic; a hair of margin past the unit
        # sphere lets ball grids place Dirichlet nodes exactly on |x| = 1
        dom = Region(0.0, 1.0 + 1e-9)
        g0 = conformal_metric((self.phi0, lambda s: -s / 10.0, lambda s: np.full_like(s, -0.1)),
                              domain=dom, name="sharpness-g0", normalized=True)
        g = conformal_metric(self._phi_fns(), domain=dom,
                             name=f"sharpness-g(eps={self.epsilon:g},a={self.a_coeff:g})")
        return g0, g

    def critical_points(self, n_dirs=32, seed=0):
        """Origin plus rings in the cutoff annulus, where inf R_g candidates live."""
        rng = np.random.default_rng(seed)
        dirs = rng.normal(size=(n_dirs, 3))
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        radii = np.array([0.25, 0.5, 0.625, 0.75, 0.875, 1.0, 1.01, 1.25]) * self.r
        pts = (radii[:, None, None] * dirs[None]).reshape(-1, 3)
        return np.vstack([np.zeros((1, 3)), pts[np.linalg.norm(pts, axis=1) < 1.0]])


def sharpness_pair(epsilon, a_coeff=1.0 / 16):
    fam = SharpnessFamily(epsilon, a_coeff)
    g0, g = fam.pair()
    return g0, g


# ---------------------------------------------------------------------------
# warped products


@dataclass
class RadialMetricSpec:
    """Warping function with derivatives; shells only (0 excluded)."""

    psi: callable
    dpsi: callable
    ddpsi: callable
    r_range: tuple

    def __post_init__(self):
        lo, hi = self.r_range
        if lo <= 0:
            raise ValueError("r_range must exclude 0 (coordinate singularity; shells only)")
        rr = np.linspace(lo, hi, 257)
        if np.any(self.psi(rr) <= 0):
            raise ValueError("psi must be positive on r_range")


def warped_metric(spec: RadialMetricSpec):
    """Cartesian components of dr^2 + psi(r)^2 g_{S^2}."""
    psi, dpsi, ddpsi = spec.psi, spec.dpsi, spec.ddpsi

    def f1(r):
        return psi(r) ** 2 / r**2

    def df1(r):
        return 2 * psi(r) * dpsi(r) / r**2 - 2 * psi(r) ** 2 / r**3

    def ddf1(r):
        return (2 * dpsi(r) ** 2 + 2 * psi(r) * ddpsi(r)) / r**2 \
            - 8 * psi(r) * dpsi(r) / r**3 + 6 * psi(r) ** 2 / r**4

    def f2(r):
        return 1.0 / r**2 - psi(r) ** 2 / r**4

    def df2(r):
        return -2.0 / r**3 - 2 * psi(r) * dpsi(r) / r**4 + 4 * psi(r) ** 2 / r**5

    def ddf2(r):
        return (6.0 / r**4 - (2 * dpsi(r) ** 2 + 2 * psi(r) * ddpsi(r)) / r**4
                + 16 * psi(r) * dpsi(r) / r**5 - 20 * psi(r) ** 2 / r**6)

    dom = Region(*spec.r_range)
    return _rmetric((f1, df1, ddf1), (f2, df2, ddf2), dom,
                    name="warped", warped=(psi, dpsi, ddpsi))


def spec_euclid(r_range=(1e-2, 1.0)):
    return RadialMetricSpec(lambda r: r, lambda r: np.ones_like(r),
                            lambda r: np.zeros_like(r), r_range)


def spec_sin(r_range=(1e-2, 1.15)):
    return RadialMetricSpec(np.sin, np.cos, lambda r: -np.sin(r), r_range)


def spec_poly(c=0.05, r_range=(1e-2, 1.0)):
    return RadialMetricSpec(lambda r: r * (1 + c * r**2),
                            lambda r: 1 + 3 * c * r**2,
                            lambda r: 6 * c * r, r_range)


# ---------------------------------------------------------------------------
# perturbation shapes


def h_tracefree_osc():
    """sin(5 x1) (e1 x e1 - e2 x e2): trace-free oscillation, |h|_F = sqrt2 |sin|."""
    M = np.diag([1.0, -1.0, 0.0])

    def ev(p):
        return np.sin(5 * p[:, 0])[:, None, None] * M[None]

    def dv(p):
        out = np.zeros((len(p), 3, 3, 3))
        out[:, 0] = 5 * np.cos(5 * p[:, 0])[:, None, None] * M[None]
        return out

    def ddv(p):
        out = np.zeros((len(p), 3, 3, 3, 3))
        out[:, 0, 0] = -25 * np.sin(5 * p[:, 0])[:, None, None] * M[None]
        return out

    return MetricField(ev, dv, ddv, name="h-tracefree-osc")


def h_conformal(g0: MetricField):
    """h = g0: uniform conformal inflation direction."""
    return MetricField(g0._eval, g0._d, g0._dd, domain=g0.domain, name="h-conformal")


def _bump_chi(center, radius):
    """chi = (1 - |x-c|^2/rho^2)^3 on its support; C^2 with monotone profile."""
    c = np.asarray(center, dtype=float)

    def parts(p):
        d = p - c[None]
        q = np.einsum("ni,ni->n", d, d) / radius**2
        inside = q < 1.0
        om = np.where(inside, 1.0 - q, 0.0)
        return d, q, inside, om

    def chi(p):
        _, _, _, om = parts(p)
        return om**3

    def dchi(p):
        d, _, inside, om = parts(p)
        dq = 2 * d / radius**2
        return -3 * om[:, None] ** 2 * dq * inside[:, None]

    def ddchi(p):
        d, _, inside, om = parts(p)
        dq = 2 * d / radius**2
        out = 6 * om[:, None, None] * np.einsum("nk,nl->nkl", dq, dq)
        out += -3 * om[:, None, None] ** 2 * (2 / radius**2) * _EYE3[None]
        return out * inside[:, None, None]

    return chi, dchi, ddchi


def shrinking_support_family(g0: MetricField, k, delta=0.05, center=(0.3, 0.0, 0.0)):
    """g_k = g0 + delta chi_k g0/sqrt3; chi_k supported in B(center, 2^-k)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    radius = 2.0 ** (-k)
    chi, dchi, ddchi = _bump_chi(center, radius)
    amp = delta / np.sqrt(3.0)

    def ev(p):
        return (1 + amp * chi(p))[:, None, None] * g0._eval(p)

    def dv(p):
        f = 1 + amp * chi(p)
        df = amp * dchi(p)
        return f[:, None, None, None] * g0._d(p) + np.einsum("nk,nij->nkij", df, g0._eval(p))

    def ddv(p):
        f = 1 + amp * chi(p)
        df = amp * dchi(p)
        ddf = amp * ddchi(p)
        out = f[:, None, None, None, None] * g0._dd(p)
        out += np.einsum("nl,nkij->nlkij", df, g0._d(p))
        out += np.einsum("nk,nlij->nlkij", df, g0._d(p))
        out += np.einsum("nlk,nij->nlkij", ddf, g0._eval(p))
        return out

    fld = MetricField(ev, dv, ddv, domain=g0.domain, name=f"inmeasure-k{k}")
    fld.bump = dict(center=np.asarray(center, float), radius=radius, delta=delta, chi=chi)
    return fld


def perturbation_family(g0: MetricField, h: MetricField, epsilon):
    """g = g0 + eps h; SPD must be validated on the caller's grid."""
    if epsilon == 0:
        return g0

    def ev(p):
        return g0._eval(p) + epsilon * h._eval(p)

    def dv(p):
        return g0._d(p) + epsilon * h._d(p)

    def ddv(p):
        return g0._dd(p) + epsilon * h._dd(p)

    fld = MetricField(ev, dv, ddv, domain=g0.domain,
                      name=f"{g0.name}+{epsilon:g}*{h.name}")
    if h.name == "h-conformal" and g0.conformal is not None:
        phi0, lap0 = g0.conformal
        c = (1 + epsilon) ** 0.25
        fld.conformal = (lambda p: c * phi0(p), lambda p: c * lap0(p))
    return fld


def rescaled(g: MetricField, a):
    """h(x) = g(a x): the unit-shell pullback of a small-scale problem."""
    if a <= 0:
        raise ValueError("scale must be positive")

    def ev(p):
        return g._eval(a * p)

    def dv(p):
        return a * g._d(a * p)

    def ddv(p):
        return a * a * g._dd(a * p)

    dom = Region(g.domain.rho_in / a, g.domain.rho_out / a)
    fld = MetricField(ev, dv, ddv, domain=dom, name=f"rescaled({g.name},{a:g})")
    if g.conformal is not None:
        phi, lap = g.conformal
        fld.conformal = (lambda p: phi(a * p), lambda p: a * a * lap(a * p))
    return fld


def quadratic_form_metric(Q, domain=None):
    """g = (1 + x.Qx)^4 g_euc: generic smooth normal-form metric (dg(0) = 0)."""
    Q = np.asarray(Q, dtype=float)
    Q = 0.5 * (Q + Q.T)

    def ev(p):
        f = 1 + np.einsum("ni,ij,nj->n", p, Q, p)
        return f[:, None, None] ** 4 * _EYE3[None]

    def dv(p):
        f = 1 + np.einsum("ni,ij,nj->n", p, Q, p)
        df = 2 * p @ Q
        return 4 * np.einsum("n,nk,ij->nkij", f**3, df, _EYE3)

    def ddv(p):
        f = 1 + np.einsum("ni,ij,nj->n", p, Q, p)
        df = 2 * p @ Q
        out = 12 * np.einsum("n,nk,nl,ij->nlkij", f**2, df, df, _EYE3)
        out += 4 * np.einsum("n,kl,ij->nlkij", f**3, 2 * Q, _EYE3)
        return out

    def phi_pts(p):
        return 1 + np.einsum("ni,ij,nj->n", p, Q, p)

    def lap_phi(p):
        return np.full(len(p), 2 * np.trace(Q))

    return MetricField(ev, dv, ddv, domain=domain or Region(0.0, 1.0 + 1e-9),
                       name="quadratic-normal-form", conformal=(phi_pts, lap_phi),
                       normalized=True)
