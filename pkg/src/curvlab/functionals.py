"""The level-set monotonicity functionals and their integrated stability forms.

Everything is assembled from band/surface integrals of one (u, g) pair whose
pointwise geometry is cached once.  D and D1 are computed from their
closed-form band-integral displays; the nested s/t quadrature of F-tilde is
kept as an independent cross-check path.
"""

from dataclasses import dataclass, field

import numpy as np


def _safe_over_u(numer, u_values, power):
    """numer / u^power with zeros where u vanishes (outside any valid band)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = numer / u_values**power
    return np.nan_to_num(out, nan=0.0, posinf=0.0, neginf=0.0)

from .elliptic import gradient_cart
from .grid import GridFunction
from .levelset import (band_integral, band_mask, local_u_span, surface_geometry,
                       surface_integral)
from .metric import MetricField
from .radial import RadialProfile, f_bar_1d
from .weights import weight_psi, weight_psi1

TWO_PI_LN2 = 2 * np.pi * np.log(2.0)


class ResolutionError(RuntimeError):
    pass


class GeometryCache:
    """Per-(u, g) node geometry shared by every functional evaluation."""

    def __init__(self, u: GridFunction, g: MetricField):
        self.u = u
        self.g = g
        grid = u.grid
        pts = grid.points()
        gv = g.eval(pts)
        self.sq = np.sqrt(np.linalg.det(gv)).reshape(grid.shape)
        ginv = np.linalg.inv(gv)
        grad = gradient_cart(u).reshape(-1, 3)
        self.grad_norm = np.sqrt(np.einsum("nij,ni,nj->n", ginv, grad, grad)
                                 ).reshape(grid.shape)
        del gv, ginv, grad

    def band(self, c, d, integrand, **kw):
        return band_integral(self.u, self.g, c, d, integrand, sq=self.sq, **kw)

    def surface(self, level, integrand, **kw):
        return surface_integral(self.u, self.g, level, integrand,
                                gn=self.grad_norm, sq=self.sq, **kw)

    def require_band_resolution(self, c, d, min_cells=8):
        """Dyadic bands need at least `min_cells` cells across in u."""
        span = local_u_span(self.u)
        sel = (self.u.values >= c) & (self.u.values <= d)
        if not sel.any():
            raise ResolutionError(f"band [{c:g}, {d:g}] contains no cells")
        cells = (d - c) / np.median(span[sel])
        if cells < min_cells:
            raise ResolutionError(
                f"band [{c:g}, {d:g}] resolved by {cells:.1f} < {min_cells} cells")
        return cells


@dataclass
class FunctionalReport:
    """One functional value with its itemized constituents."""

    name: str
    terms: dict
    flags: dict = field(default_factory=dict)

    @property
    def total(self):
        return float(sum(self.terms.values()))

    def audit(self, tol=1e-12):
        return abs(self.total - sum(self.terms.values())) <= tol


# ---------------------------------------------------------------------------
# M(a) and the F functionals


def m_of_a(cache: GeometryCache, f_vals, a, core_safety=1.5):
    """M(a) = int_{u0 >= 1/a} f |grad u0| / u0^2 dv with a core error bar.

    The unresolved core (inside the grid's inner radius) contributes at most
    max|f| * (1 + O(rho_in^2)) * vol(B_rho_in); reported, and flagged when it
    exceeds 10% of |M(a)|.
    """
    u = cache.u
    grid = u.grid
    umax = float(u.values.max())
    integrand = _safe_over_u(np.asarray(f_vals).reshape(grid.shape) * cache.grad_norm,
                             u.values, 2)
    val, info = cache.band(1.0 / a, umax + 1.0, integrand, return_info=True)
    inner_band = np.abs(f_vals).reshape(grid.shape)[:4].max()
    core_bound = core_safety * inner_band * (4 * np.pi / 3) * grid.rho_in**3
    flagged = core_bound > 0.1 * abs(val) and val != 0.0
    return FunctionalReport("M(a)", {"band": val},
                            flags={"core_error_bound": core_bound,
                                   "core_warning": bool(flagged),
                                   "empty": info.empty})


def _surface_fields(cache, level, pad=6.0):
    """H |grad u| and |grad u|^2 integrand arrays on a padded level band."""
    u = cache.u
    span = local_u_span(u)
    sel = np.abs(u.values - level) <= np.maximum(span, 1e-300)
    width = pad * float(np.median(span[sel])) if sel.any() else 0.0
    mask = band_mask(u, level - width, level + width)
    mask[:2] = False
    mask[-2:] = False
    geo = surface_geometry(u, cache.g, mask)
    Hgrad = np.zeros(u.grid.shape)
    Hgrad[mask] = geo.H * geo.grad_norm
    return Hgrad, geo, mask


def f_functional(cache: GeometryCache, t):
    """F(t) = 4 pi t - t^2 int H|grad u| da + t^3 int |grad u|^2 da at u = 1/t."""
    level = 1.0 / t
    Hgrad, _, _ = _surface_fields(cache, level)
    sH = cache.surface(level, Hgrad)
    s2 = cache.surface(level, cache.grad_norm**2)
    return FunctionalReport("F", {"cone": 4 * np.pi * t,
                                  "mean_curv": -t**2 * sH,
                                  "grad_sq": t**3 * s2})


def f_tilde(cache: GeometryCache, f_vals, a, t, M_a):
    """F(t) minus the curvature bulk term on {1/t <= u <= 1/a} and M(a)/2."""
    if not t > a * (1 - 1e-12):
        raise ValueError("F-tilde is evaluated at t >= a")
    rep = f_functional(cache, t)
    u = cache.u
    fv = np.asarray(f_vals).reshape(u.grid.shape)
    bulk = cache.band(1.0 / t, 1.0 / a,
                      _safe_over_u(fv * cache.grad_norm, u.values, 2)) \
        if t > a else 0.0
    terms = dict(rep.terms)
    terms["bulk_f"] = -0.5 * bulk
    terms["m_half"] = -0.5 * M_a
    return FunctionalReport("F~", terms)


# ---------------------------------------------------------------------------
# the integrated quantities D and D1


def e_d_quantities(cache: GeometryCache, f_vals, band_a, m_term, f_scale=1.0,
                   min_cells=8):
    """Closed-form D at band scale `band_a`.

    `m_term` is the value of 3 M(a)/(32 a) in the coordinates of the caller;
    `f_scale` rescales the psi-weighted curvature term (a^2 under the
    unit-shell rescaling, 1 at native scale).
    """
    u = cache.u
    a = band_a
    for c, d in ((1 / (4 * a), 1 / (2 * a)), (1 / (2 * a), 1 / a)):
        cache.require_band_resolution(c, d, min_cells)
    gn3 = _safe_over_u(cache.grad_norm**3, u.values, 3)
    fv = np.asarray(f_vals).reshape(u.grid.shape)
    psi_f = weight_psi(u.values, a) * _safe_over_u(fv * cache.grad_norm, u.values, 2)
    terms = {
        "const": TWO_PI_LN2,
        "half_band": 0.5 * cache.band(1 / (4 * a), 1 / (2 * a), gn3),
        "minus_band": -cache.band(1 / (2 * a), 1 / a, gn3),
        "m_term": -m_term,
        "psi_f": -f_scale * cache.band(1 / (4 * a), 1 / a, psi_f),
    }
    return FunctionalReport("D", terms)


def d1_quantities(cache: GeometryCache, f_vals, band_a, m_term, f_scale=1.0,
                  min_cells=8):
    """Closed-form D1 (scale 8a bands, psi1 weight, plateau itemized)."""
    u = cache.u
    a = band_a
    for c, d in ((1 / (32 * a), 1 / (16 * a)), (1 / (16 * a), 1 / (8 * a))):
        cache.require_band_resolution(c, d, min_cells)
    gn3 = _safe_over_u(cache.grad_norm**3, u.values, 3)
    fv = np.asarray(f_vals).reshape(u.grid.shape)
    psi1_f = weight_psi1(u.values, a) * _safe_over_u(fv * cache.grad_norm, u.values, 2)
    terms = {
        "const": TWO_PI_LN2,
        "half_band": 0.5 * cache.band(1 / (32 * a), 1 / (16 * a), gn3),
        "minus_band": -cache.band(1 / (16 * a), 1 / (8 * a), gn3),
        "m_term": -m_term,
        "psi1_f_ramp": -f_scale * cache.band(1 / (32 * a), 1 / (8 * a), psi1_f),
        "psi1_f_plateau": -f_scale * cache.band(1 / (8 * a), 1 / a, psi1_f),
    }
    return FunctionalReport("D1", terms)


def f_tilde_spline(cache: GeometryCache, f_vals, a, M_a, t_lo, t_hi, n_t=33):
    """Cubic spline of t -> F~(t) sampled on a uniform grid (quadrature backend)."""
    from scipy.interpolate import CubicSpline
    ts = np.linspace(t_lo, t_hi, n_t)
    vals = [f_tilde(cache, f_vals, a, t, M_a).total for t in ts]
    return CubicSpline(ts, vals)


def e_of_s(cache: GeometryCache, f_vals, a, M_a, s, n_gauss=16, spline=None):
    """E(s) = int_{a+s}^{2a+2s} F~(t)/t^3 dt by direct quadrature (cross-check)."""
    if spline is None:
        spline = f_tilde_spline(cache, f_vals, a, M_a, a + s, 2 * a + 2 * s)
    x0, w0 = np.polynomial.legendre.leggauss(n_gauss)
    lo, hi = a + s, 2 * a + 2 * s
    ts = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x0
    return 0.5 * (hi - lo) * float(np.sum(w0 * spline(ts) / ts**3))


def d_from_e(cache: GeometryCache, f_vals, a, M_a, n_gauss=16, n_t=49):
    """D = int_0^a E(s) ds: the Fubini identity, nested quadrature over a
    spline of F~ samples (the independent path cross-checking the closed form)."""
    spline = f_tilde_spline(cache, f_vals, a, M_a, a, 4 * a, n_t=n_t)
    x0, w0 = np.polynomial.legendre.leggauss(n_gauss)
    ss = 0.5 * a * (x0 + 1)
    vals = [e_of_s(cache, f_vals, a, M_a, s, n_gauss, spline=spline) for s in ss]
    return 0.5 * a * float(np.sum(w0 * np.asarray(vals)))


# ---------------------------------------------------------------------------
# the derivative integrand (monotonicity mechanism)


def f_derivative_integrand(cache: GeometryCache, c, d, curvature_vals=None):
    """Pointwise lower-bound integrand of F'(t) on the band {c <= u <= d}.

    Returns the three nonnegative pieces per point plus a function evaluating
    the surface total (including R/2 when curvature values are supplied).
    """
    mask = band_mask(cache.u, c, d, pad_cells=4.0)
    mask[:2] = False
    mask[-2:] = False
    geo = surface_geometry(cache.u, cache.g, mask)
    pieces = {
        "tangential": geo.tangential_grad_sq / geo.grad_norm**2,
        "a_ring": 0.5 * geo.A_ring_sq,
        "sphere_defect": 0.75 * geo.sphere_defect**2,
    }
    total_field = np.zeros(cache.u.grid.shape)
    total_field[mask] = sum(pieces.values())
    if curvature_vals is not None:
        rv = np.asarray(curvature_vals).reshape(cache.u.grid.shape)
        total_field = total_field + np.where(mask, 0.5 * rv, 0.0)

    def surface_total(t):
        return cache.surface(1.0 / t, total_field)

    return geo, pieces, surface_total


# ---------------------------------------------------------------------------
# rotationally symmetric modified functionals (3-D evaluation path)


def modified_f(cache: GeometryCache, profile: RadialProfile, f_vals, a, t):
    """F-bar and F~ of the warped-model comparison at parameter t.

    Levels are {u = b(t)}; the bulk terms use the monotone inverse b^-1 of
    the model profile.  The subtracted constant F-bar_0(a) comes from the 1-D
    model path.
    """
    u = cache.u
    bt = float(profile.b(t))
    umin, umax = float(u.values.min()), float(u.values.max())
    if not umin < bt < umax:
        raise ValueError(f"level b({t:g}) = {bt:g} outside the range of u")
    Hgrad, _, _ = _surface_fields(cache, bt)
    sH = cache.surface(bt, Hgrad)
    s2 = cache.surface(bt, cache.grad_norm**2)
    fbar_terms = {"cone": 4 * np.pi * t,
                  "mean_curv": -float(profile.c1(t)) * sH,
                  "grad_sq": float(profile.c2(t)) * s2}
    fbar = FunctionalReport("Fbar", fbar_terms)
    ba = float(profile.b(a))
    uv = np.clip(u.values, profile.b_tab.min(), profile.b_tab.max())
    tt = profile.binv(uv)
    babs = np.abs(profile.bprime(tt))
    fv = np.asarray(f_vals).reshape(u.grid.shape)
    bulk_R = cache.band(bt, ba, fv * cache.grad_norm / babs) if ba > bt else 0.0
    bulk_c3 = cache.band(bt, ba, profile.c3(tt) / babs * cache.grad_norm**3) \
        if ba > bt else 0.0
    terms = dict(fbar_terms)
    terms["model_const"] = -float(f_bar_1d(profile, a))
    terms["bulk_R"] = -0.5 * bulk_R
    terms["bulk_c3"] = -bulk_c3
    return fbar, FunctionalReport("F~rot", terms)


def rot_d_quantities(cache: GeometryCache, profile: RadialProfile, f_vals, a,
                     scale=1, n_t=33, n_gauss=12):
    """D (scale a) or D1 (scale 8a) of the rotationally symmetric comparison.

    E(s) = int F~(t)/(t c1(t)) dt over [s0 + s, 2 s0 + 2 s], s in [0, s0] with
    s0 = scale * a; evaluated by quadrature over a spline of F~ samples.
    """
    from scipy.interpolate import CubicSpline
    s0 = scale * a
    t_lo, t_hi = s0, 4 * s0
    ts = np.linspace(t_lo, t_hi, n_t)
    vals = np.array([modified_f(cache, profile, f_vals, a, t)[1].total for t in ts])
    spline = CubicSpline(ts, vals)
    x0, w0 = np.polynomial.legendre.leggauss(n_gauss)

    def e_of(s):
        lo, hi = s0 + s, 2 * s0 + 2 * s
        tq = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x0
        return 0.5 * (hi - lo) * np.sum(w0 * spline(tq) / (tq * profile.c1(tq)))

    sq = 0.5 * s0 * (x0 + 1)
    D = 0.5 * s0 * float(np.sum(w0 * np.array([e_of(s) for s in sq])))
    return D, (ts, vals)


# ---------------------------------------------------------------------------
# small-scale asymptotics of the base metric


def bulk_asymptotics_check(cache: GeometryCache, f_vals, f_origin, a_values):
    """Per-a values of the centered curvature bulk integral and the
    level-set/radius comparison max over the band {1/(4a) <= u0 <= 1/a}."""
    u = cache.u
    grid = u.grid
    fv = np.asarray(f_vals).reshape(grid.shape)
    integrand = _safe_over_u((fv - f_origin) * cache.grad_norm, u.values, 2)
    rr = np.linalg.norm(grid.points(), axis=1).reshape(grid.shape)
    with np.errstate(divide="ignore"):
        radius_defect = np.abs(rr - 1.0 / u.values)
    bulk, defect = [], []
    for a in a_values:
        bulk.append(cache.band(1 / (4 * a), 1 / a, integrand))
        m = band_mask(u, 1 / (4 * a), 1 / a)
        defect.append(float(radius_defect[m].max()))
    return np.asarray(bulk), np.asarray(defect)
