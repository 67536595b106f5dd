"""C^2 Riemannian metric fields on ball/shell regions of R^3.

A `MetricField` bundles batched evaluation of g_ij with its first and second
coordinate derivatives (analytic when the constructing family provides them,
4th-order central differences otherwise).  On top of that sit the curvature
operator, the divergence-form coefficient field a^{ij} = g^{ij} sqrt|g|, the
C^0 distance, and the quadratic change of coordinates that kills the first
metric derivatives at the origin.
"""

from dataclasses import dataclass, field

import numpy as np

H_FD = 1e-4          # central-difference step for derivative fallbacks
TOL_FD = 1e-6        # acceptance threshold for |dg(0)| after normalization
_EYE3 = np.eye(3)


class NonSPDError(ValueError):
    """Metric failed symmetric positive definiteness at a sample point."""

    def __init__(self, point, detail=""):
        self.point = np.asarray(point, dtype=float)
        super().__init__(f"metric not SPD at {self.point.tolist()} {detail}".strip())


class OutsideDomainError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    """Ball (rho_in == 0) or shell domain descriptor, radii in coordinate units."""

    rho_in: float
    rho_out: float

    def contains(self, pts):
        r = np.linalg.norm(np.atleast_2d(pts), axis=1)
        if self.rho_in == 0.0:
            return r < self.rho_out
        return (r > self.rho_in) & (r < self.rho_out)

    def require(self, pts):
        ok = self.contains(pts)
        if not np.all(ok):
            bad = np.atleast_2d(pts)[~ok][0]
            raise OutsideDomainError(f"point {bad.tolist()} outside {self}")


def _as_points(x):
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if pts.shape[1] != 3:
        raise ValueError("positions must have shape (3,) or (N, 3)")
    return pts


def _fd_derivative(fn, pts, h=H_FD):
    """4th-order central difference of a batched field fn along each coordinate."""
    out = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        d = (
            -fn(pts + 2 * h * e)
            + 8 * fn(pts + h * e)
            - 8 * fn(pts - h * e)
            + fn(pts - 2 * h * e)
        ) / (12 * h)
        out.append(d)
    return np.stack(out, axis=1)


class MetricField:
    """Pointwise symmetric 3x3 metric with derivatives on a ball/shell region.

    Parameters
    ----------
    eval_fn : callable
        pts (N,3) -> (N,3,3) metric components.
    d_eval_fn, dd_eval_fn : callable or None
        Analytic derivatives, indexed (N,k,i,j) = d_k g_ij and
        (N,l,k,i,j) = d_l d_k g_ij.  Finite differences are substituted
        when absent.
    domain : Region
    conformal : tuple or None
        (phi, lap_phi) batched callables when g = phi^4 g_euc; enables the
        closed-form curvature path.
    warped : tuple or None
        (psi, dpsi, ddpsi) scalar-radius callables when g is a warped
        product dr^2 + psi(r)^2 g_{S^2}.
    """

    def __init__(self, eval_fn, d_eval_fn=None, dd_eval_fn=None, domain=None,
                 name="metric", conformal=None, warped=None, normalized=False):
        self._eval = eval_fn
        self._d = d_eval_fn if d_eval_fn is not None else lambda p: _fd_derivative(self._eval, p)
        if dd_eval_fn is not None:
            self._dd = dd_eval_fn
        else:
            self._dd = lambda p: _fd_derivative(self._d, p)
        self.domain = domain if domain is not None else Region(0.0, np.inf)
        self.name = name
        self.conformal = conformal
        self.warped = warped
        self.normalized = normalized

    def eval(self, x):
        g = self._eval(_as_points(x))
        return g if np.ndim(x) == 2 else g[0]

    def d_eval(self, x):
        d = self._d(_as_points(x))
        return d if np.ndim(x) == 2 else d[0]

    def dd_eval(self, x):
        dd = self._dd(_as_points(x))
        return dd if np.ndim(x) == 2 else dd[0]

    def check_spd(self, pts):
        """Raise NonSPDError naming the first offending sample."""
        pts = _as_points(pts)
        g = self._eval(pts)
        w = np.linalg.eigvalsh(g)
        bad = w[:, 0] <= 0
        if np.any(bad):
            i = int(np.argmax(bad))
            raise NonSPDError(pts[i], f"(min eigenvalue {w[i, 0]:.3e})")
        asym = np.max(np.abs(g - np.swapaxes(g, 1, 2)))
        if asym > 1e-12:
            raise NonSPDError(pts[int(np.argmax(bad))] if np.any(bad) else pts[0],
                              f"(asymmetry {asym:.3e})")
        return float(w[:, 0].min()), float(w[:, -1].max())


def euclidean(domain=None):
    def ev(p):
        return np.broadcast_to(_EYE3, (len(p), 3, 3)).copy()

    def dv(p):
        return np.zeros((len(p), 3, 3, 3))

    def ddv(p):
        return np.zeros((len(p), 3, 3, 3, 3))

    return MetricField(ev, dv, ddv, domain=domain, name="euclidean",
                       conformal=(lambda p: np.ones(len(p)), lambda p: np.zeros(len(p))),
                       normalized=True)


# ---------------------------------------------------------------------------
# curvature


def christoffel(g, dg):
    """Gamma^k_ij, batched; dg indexed (N,k,i,j) = d_k g_ij."""
    ginv = np.linalg.inv(g)
    # T_{lij} = d_i g_jl + d_j g_il - d_l g_ij; dg.transpose(0,3,1,2)[n,l,i,j] = d_i g_jl
    T = dg.transpose(0, 3, 1, 2) + dg.transpose(0, 3, 2, 1) - dg
    return 0.5 * np.einsum("nkl,nlij->nkij", ginv, T)


def scalar_curvature_general(g, dg, ddg):
    """Scalar curvature from Christoffel symbols and their first derivatives."""
    ginv = np.linalg.inv(g)
    T = dg.transpose(0, 3, 1, 2) + dg.transpose(0, 3, 2, 1) - dg.transpose(0, 1, 2, 3)
    gamma = 0.5 * np.einsum("nkl,nlij->nkij", ginv, T)
    dginv = -np.einsum("nka,nmab,nbl->nmkl", ginv, dg, ginv)
    # dT[n,m,l,i,j] = d_m T_{lij}; ddg[n,m,k,i,j] = d_m d_k g_ij
    dT = ddg.transpose(0, 1, 4, 2, 3) + ddg.transpose(0, 1, 4, 3, 2) - ddg.transpose(0, 1, 2, 3, 4)
    dgamma = 0.5 * (np.einsum("nmkl,nlij->nmkij", dginv, T)
                    + np.einsum("nkl,nmlij->nmkij", ginv, dT))
    ric = (np.einsum("nkkij->nij", dgamma)
           - np.einsum("nikkj->nij", dgamma)
           + np.einsum("nkkm,nmij->nij", gamma, gamma)
           - np.einsum("nkim,nmkj->nij", gamma, gamma))
    return np.einsum("nij,nij->n", ginv, ric)


def scalar_curvature(g: MetricField, x, check_consistency=False):
    """R_g at position(s) x.

    Conformal metrics (g = phi^4 g_euc, n = 3) take the closed-form path
    R = -8 phi^-5 lap(phi); otherwise the general Christoffel path is used.
    """
    pts = _as_points(x)
    g.domain.require(pts)
    g.check_spd(pts)
    if g.conformal is not None and not check_consistency:
        phi, lap_phi = g.conformal
        R = -8.0 * phi(pts) ** -5 * lap_phi(pts)
    else:
        R = scalar_curvature_general(g.eval(pts), g.d_eval(pts), g.dd_eval(pts))
    return R if np.ndim(x) == 2 else float(R[0])


def warped_scalar_curvature(psi, dpsi, ddpsi, r):
    """Closed form R = 2(1 - psi'^2 - 2 psi psi'')/psi^2 for dr^2 + psi^2 g_{S^2}."""
    r = np.asarray(r, dtype=float)
    return 2.0 * (1.0 - dpsi(r) ** 2 - 2.0 * psi(r) * ddpsi(r)) / psi(r) ** 2


# ---------------------------------------------------------------------------
# C^0 distance and coefficient field


def c0_distance(g: MetricField, g0: MetricField, samples):
    """Grid-sampled sup of the Frobenius norm of g - g0."""
    pts = _as_points(samples)
    if pts.shape[0] == 0:
        raise ValueError("empty sample set")
    diff = g.eval(pts) - g0.eval(pts)
    return float(np.sqrt(np.einsum("nij,nij->n", diff, diff)).max())


def coefficient_values(g: MetricField, pts):
    """a^{ij} = (g^-1)^{ij} sqrt(det g) at the given points."""
    pts = _as_points(pts)
    gv = g._eval(pts)
    det = np.linalg.det(gv)
    if np.any(det <= 0):
        i = int(np.argmax(det <= 0))
        raise NonSPDError(pts[i], f"(det {det[i]:.3e})")
    return np.linalg.inv(gv) * np.sqrt(det)[:, None, None]


def coefficient_derivatives(g: MetricField, pts):
    """d_k a^{ij} from analytic metric derivatives (feeds the Green rhs)."""
    pts = _as_points(pts)
    gv = g._eval(pts)
    dg = g._d(pts)
    ginv = np.linalg.inv(gv)
    sq = np.sqrt(np.linalg.det(gv))
    dginv = -np.einsum("nia,nkab,nbj->nkij", ginv, dg, ginv)
    trterm = 0.5 * np.einsum("nab,nkab->nk", ginv, dg)
    return sq[:, None, None, None] * (dginv + np.einsum("nk,nij->nkij", trterm, ginv))


@dataclass
class CoefficientField:
    """Divergence-form coefficients with ellipticity bounds over a sample set."""

    metric: MetricField
    lam: float = field(default=np.nan)
    Lam: float = field(default=np.nan)

    def __call__(self, pts):
        return coefficient_values(self.metric, pts)

    def derivatives(self, pts):
        return coefficient_derivatives(self.metric, pts)


def coefficient_field(g: MetricField, sample_pts=None, probes=None):
    """Build the coefficient field; ellipticity from an eigenvalue sweep."""
    cf = CoefficientField(g)
    if sample_pts is not None:
        a = cf(sample_pts)
        w = np.linalg.eigvalsh(a)
        lam, Lam = float(w[:, 0].min()), float(w[:, -1].max())
        if probes is not None:
            # probe directions cannot tighten eigenvalue bounds; sanity only
            q = np.einsum("nij,pi,pj->np", a, probes, probes) / np.einsum("pi,pi->p", probes, probes)
            lam = min(lam, float(q.min()))
            Lam = max(Lam, float(q.max()))
        if lam <= 0:
            raise NonSPDError(np.atleast_2d(sample_pts)[int(np.argmin(w[:, 0]))])
        cf.lam, cf.Lam = lam, Lam
    return cf


# ---------------------------------------------------------------------------
# coordinate changes


class QuadraticMap:
    """x = A (y - 1/2 B[y,y]) with B symmetric in its last two slots.

    Covers linear maps (B = 0), homotheties, and the quadratic normal-form
    change of coordinates.  The Jacobian is affine in y and the second
    derivative is the constant tensor -A B.
    """

    def __init__(self, A=None, B=None):
        self.A = np.array(A, dtype=float) if A is not None else _EYE3.copy()
        self.B = np.array(B, dtype=float) if B is not None else np.zeros((3, 3, 3))
        self.B = 0.5 * (self.B + self.B.transpose(0, 2, 1))
        # hess[a,i,j] = d^2 Phi^a / dy_i dy_j
        self.hess = -np.einsum("ak,kij->aij", self.A, self.B)

    def __call__(self, y):
        y = _as_points(y)
        quad = 0.5 * np.einsum("kij,ni,nj->nk", self.B, y, y)
        return (y - quad) @ self.A.T

    def jac(self, y):
        y = _as_points(y)
        inner = _EYE3[None] - np.einsum("kim,nm->nki", self.B, y)
        return np.einsum("ak,nki->nai", self.A, inner)

    def inverse(self, x, tol=1e-14, maxit=60):
        """Newton inversion; valid in the neighbourhood where DPhi stays regular."""
        x = _as_points(x)
        y = x @ np.linalg.inv(self.A).T
        for _ in range(maxit):
            res = self(y) - x
            if np.max(np.abs(res)) < tol:
                return y
            J = self.jac(y)
            if np.min(np.abs(np.linalg.det(J))) < 1e-14:
                raise FloatingPointError("singular Jacobian during map inversion")
            y = y - np.linalg.solve(J, res[..., None])[..., 0]
        raise FloatingPointError("quadratic map inversion did not converge")


def pullback(g: MetricField, qmap: QuadraticMap, domain=None, name=None):
    """(F*g)_ij(y) = dF^a_i dF^b_j g_ab(F(y)) with exact chain-rule derivatives."""
    H = qmap.hess  # (a,i,c), constant

    def ev(y):
        J = qmap.jac(y)
        G = g._eval(qmap(y))
        return np.einsum("nai,nab,nbj->nij", J, G, J)

    def dv(y):
        x = qmap(y)
        J = qmap.jac(y)
        G = g._eval(x)
        dGx = g._d(x)                       # (n,m,a,b) = d_m G_ab at x
        dGy = np.einsum("nmab,nmc->ncab", dGx, J)
        t1 = np.einsum("aic,nab,nbj->ncij", H, G, J)
        t2 = np.einsum("nai,ncab,nbj->ncij", J, dGy, J)
        t3 = np.einsum("nai,nab,bjc->ncij", J, G, H)
        return t1 + t2 + t3

    def ddv(y):
        x = qmap(y)
        J = qmap.jac(y)
        G = g._eval(x)
        dGx = g._d(x)
        ddGx = g._dd(x)                     # (n,l,m,a,b)
        dGy = np.einsum("nmab,nmc->ncab", dGx, J)         # d_c (G o Phi)
        ddGy = (np.einsum("nlmab,nld,nmc->ndcab", ddGx, J, J)
                + np.einsum("nmab,mcd->ndcab", dGx, H))   # d_d d_c (G o Phi)
        out = (np.einsum("aic,ndab,nbj->ndcij", H, dGy, J)
               + np.einsum("aic,nab,bjd->ndcij", H, G, H)
               + np.einsum("aid,ncab,nbj->ndcij", H, dGy, J)
               + np.einsum("nai,ndcab,nbj->ndcij", J, ddGy, J)
               + np.einsum("nai,ncab,bjd->ndcij", J, dGy, H)
               + np.einsum("aid,nab,bjc->ndcij", H, G, H)
               + np.einsum("nai,ndab,bjc->ndcij", J, dGy, H))
        return out

    return MetricField(ev, dv, ddv, domain=domain or g.domain,
                       name=name or f"pullback({g.name})")


def normalize_coordinates(g: MetricField):
    """Compose a linear factor with the quadratic normal-form map.

    Returns the pulled-back metric (g~(0) = I exactly, |dg~(0)| < TOL_FD for
    analytic-derivative inputs) and the reusable map record.
    """
    origin = np.zeros((1, 3))
    g0 = g._eval(origin)[0]
    w, Q = np.linalg.eigh(g0)
    if w.min() <= 0:
        raise NonSPDError(origin[0], "(at origin)")
    L = (Q * (w**-0.5)) @ Q.T          # symmetric inverse square root
    g_lin = pullback(g, QuadraticMap(A=L))
    gamma0 = christoffel(g_lin._eval(origin), g_lin._d(origin))[0]
    qmap = QuadraticMap(A=L, B=gamma0)
    g_norm = pullback(g, qmap, name=f"normalized({g.name})")
    g_norm.normalized = True
    if g.conformal is not None:
        # linear factor phi0(0)^-2 Q with Q orthogonal keeps conformal structure
        phi, lap = g.conformal
        if abs(np.linalg.norm(L - _EYE3)) < 1e-13 and np.max(np.abs(gamma0)) < 1e-13:
            g_norm.conformal = g.conformal
    return g_norm, qmap
