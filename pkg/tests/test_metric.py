import numpy as np
import pytest

from curvlab import families as fam
from curvlab import metric as cm


def rand_shell_points(n, lo, hi, seed=0):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    r = rng.uniform(lo, hi, size=n)
    return d * r[:, None]


def fd_check(field, pts, tol=1e-7):
    """Analytic derivatives must match 4th-order finite differences."""
    dg_fd = cm._fd_derivative(field._eval, pts)
    assert np.max(np.abs(field._d(pts) - dg_fd)) < tol
    ddg_fd = cm._fd_derivative(field._d, pts)
    assert np.max(np.abs(field._dd(pts) - ddg_fd)) < tol


# ---------------------------------------------------------------------------
# curvature oracles


def test_flat_curvature_zero():
    g = cm.euclidean()
    pts = rand_shell_points(40, 0.05, 0.9, seed=1)
    assert np.max(np.abs(cm.scalar_curvature(g, pts))) < 1e-12
    assert np.max(np.abs(cm.scalar_curvature(g, pts, check_consistency=True))) < 1e-12


def test_sharpness_base_curvature():
    g0, _ = fam.sharpness_pair(1e-4, 1 / 16)
    # R(0) = 0 and R(x) >= |x|^2 sampled on |x| <= 0.5
    assert abs(cm.scalar_curvature(g0, np.zeros(3))) < 1e-12
    pts = rand_shell_points(200, 1e-3, 0.5, seed=2)
    R = cm.scalar_curvature(g0, pts)
    assert np.all(R >= np.sum(pts**2, axis=1) - 1e-12)


def test_conformal_path_matches_general():
    g0, g = fam.sharpness_pair(1e-2, 1 / 16)
    for field in (g0, g):
        pts = rand_shell_points(100, 0.01, 0.95, seed=3)
        r_closed = cm.scalar_curvature(field, pts)
        r_general = cm.scalar_curvature(field, pts, check_consistency=True)
        scale = np.maximum(np.abs(r_closed), 1e-10)
        assert np.max(np.abs(r_closed - r_general) / scale) < 1e-6


def test_warped_round_sphere_curvature():
    g = fam.warped_metric(fam.spec_sin((0.05, 1.1)))
    pts = rand_shell_points(60, 0.1, 1.0, seed=4)
    R = cm.scalar_curvature(g, pts)
    assert np.max(np.abs(R - 6.0)) < 1e-6
    # closed form at a single radius
    x = np.array([0.3, 0.0, 0.0])
    assert cm.scalar_curvature(g, x) == pytest.approx(6.0, abs=1e-8)
    closed = cm.warped_scalar_curvature(np.sin, np.cos, lambda r: -np.sin(r), 0.3)
    assert closed == pytest.approx(6.0, abs=1e-12)


def test_warped_poly_curvature_sign_matches_closed_form():
    sp = fam.spec_poly(0.05)
    g = fam.warped_metric(sp)
    rr = np.array([0.15, 0.2, 0.3])
    closed = cm.warped_scalar_curvature(sp.psi, sp.dpsi, sp.ddpsi, rr)
    pts = np.column_stack([rr, np.zeros(3), np.zeros(3)])
    general = cm.scalar_curvature(g, pts)
    assert np.allclose(general, closed, rtol=1e-6)
    assert np.all(np.sign(general) == np.sign(closed))


def test_curvature_domain_and_spd_errors():
    g0, _ = fam.sharpness_pair(1e-2)
    with pytest.raises(cm.OutsideDomainError):
        cm.scalar_curvature(g0, np.array([1.5, 0, 0]))
    bad = cm.MetricField(lambda p: np.broadcast_to(np.diag([1.0, 1.0, -1.0]), (len(p), 3, 3)).copy())
    with pytest.raises(cm.NonSPDError):
        cm.scalar_curvature(bad, np.array([0.1, 0, 0]))


# ---------------------------------------------------------------------------
# analytic derivatives vs finite differences


def test_family_derivatives_match_fd():
    g0, g = fam.sharpness_pair(1e-2, 1 / 16)
    pts = rand_shell_points(25, 0.05, 0.9, seed=5)
    fd_check(g0, pts)
    fd_check(g, pts, tol=2e-6)  # cutoff annulus has large third derivatives
    w = fam.warped_metric(fam.spec_sin((0.05, 1.1)))
    fd_check(w, rand_shell_points(25, 0.1, 1.0, seed=6))
    h = fam.h_tracefree_osc()
    fd_check(h, rand_shell_points(25, 0.1, 0.9, seed=7))
    q = fam.quadratic_form_metric(np.array([[0.2, 0.05, 0], [0.05, -0.1, 0.02], [0, 0.02, 0.3]]))
    fd_check(q, rand_shell_points(25, 0.05, 0.5, seed=8))
    gk = fam.shrinking_support_family(g0, 3)
    fd_check(gk, rand_shell_points(25, 0.1, 0.6, seed=9), tol=1e-5)


# ---------------------------------------------------------------------------
# C0 distance


def test_c0_distance_basics():
    g0, g = fam.sharpness_pair(1e-3, 1 / 16)
    pts = rand_shell_points(500, 0.0, 0.99, seed=10)
    assert cm.c0_distance(g0, g0, pts) == 0.0
    with pytest.raises(ValueError):
        cm.c0_distance(g0, g0, np.zeros((0, 3)))
    # uniform scaling: distance = delta * max |g0|_F
    delta = 1e-3
    gs = fam.perturbation_family(g0, fam.h_conformal(g0), delta)
    gnorms = np.sqrt(np.einsum("nij,nij->n", g0.eval(pts), g0.eval(pts)))
    assert cm.c0_distance(gs, g0, pts) == pytest.approx(delta * gnorms.max(), rel=1e-12)


def test_c0_distance_triangle_inequality():
    g0, g1 = fam.sharpness_pair(1e-2, 1 / 16)
    g2 = fam.perturbation_family(g0, fam.h_tracefree_osc(), 5e-3)
    pts = rand_shell_points(200, 0.0, 0.95, seed=11)
    d01 = cm.c0_distance(g0, g1, pts)
    d12 = cm.c0_distance(g1, g2, pts)
    d02 = cm.c0_distance(g0, g2, pts)
    assert d02 <= d01 + d12 + 1e-15


def test_sharpness_distance_linear_in_eps():
    # ||g - g0||_C0 = O(eps): ratio stable across two decades
    ratios = []
    for eps in (1e-2, 1e-3, 1e-4):
        g0, g = fam.sharpness_pair(eps, 1 / 16)
        pts = np.vstack([rand_shell_points(800, 0.0, eps**0.25, seed=12),
                         np.zeros((1, 3))])
        ratios.append(cm.c0_distance(g, g0, pts) / eps)
    assert max(ratios) / min(ratios) < 2.0


# ---------------------------------------------------------------------------
# coefficient field


def test_coefficient_euclid_identity():
    g = cm.euclidean()
    pts = rand_shell_points(50, 0.1, 0.9, seed=13)
    a = cm.coefficient_values(g, pts)
    assert np.max(np.abs(a - np.eye(3))) == 0.0
    cf = cm.coefficient_field(g, pts)
    assert cf.lam == pytest.approx(1.0) and cf.Lam == pytest.approx(1.0)


def test_coefficient_conformal_identity():
    # a^{ij} = phi^2 delta^{ij} for g = phi^4 g_euc
    g0, _ = fam.sharpness_pair(1e-2, 1 / 16)
    pts = rand_shell_points(50, 0.05, 0.9, seed=14)
    a = cm.coefficient_values(g0, pts)
    phi = g0.conformal[0](pts)
    assert np.max(np.abs(a - phi[:, None, None] ** 2 * np.eye(3))) < 1e-12


def test_coefficient_ellipticity_ratio_near_one():
    eps = 1e-2
    g0, g = fam.sharpness_pair(eps, 1 / 16)
    pts = rand_shell_points(400, 0.0, 0.95, seed=15)
    rng = np.random.default_rng(0)
    probes = rng.normal(size=(16, 3))
    cf = cm.coefficient_field(g, pts, probes=probes)
    assert cf.Lam / cf.lam <= 1 + 10 * eps


def test_coefficient_derivatives_match_fd():
    g0, g = fam.sharpness_pair(1e-2, 1 / 16)
    pts = rand_shell_points(20, 0.1, 0.8, seed=16)
    da = cm.coefficient_derivatives(g, pts)
    da_fd = cm._fd_derivative(lambda p: cm.coefficient_values(g, p), pts)
    assert np.max(np.abs(da - da_fd)) < 1e-6


# ---------------------------------------------------------------------------
# coordinate normalization and pullback


def _linear_metric(C):
    """g = I + sum_m x_m C[m] with each C[m] symmetric: analytic derivatives."""
    C = np.asarray(C, dtype=float)

    def ev(p):
        return np.eye(3)[None] + np.einsum("nm,mij->nij", p, C)

    def dv(p):
        return np.broadcast_to(C, (len(p), 3, 3, 3)).copy()

    def ddv(p):
        return np.zeros((len(p), 3, 3, 3, 3))

    return cm.MetricField(ev, dv, ddv, name="linear-test")


def test_normalize_already_normal_is_identity():
    g0, _ = fam.sharpness_pair(1e-2, 1 / 16)
    gt, qmap = cm.normalize_coordinates(g0)
    assert np.allclose(qmap.A, np.eye(3), atol=1e-13)
    assert np.max(np.abs(qmap.B)) < 1e-12
    pts = rand_shell_points(20, 0.05, 0.5, seed=17)
    assert np.allclose(gt.eval(pts), g0.eval(pts), atol=1e-12)


def test_normalize_linear_metric():
    rng = np.random.default_rng(18)
    C = rng.normal(scale=0.2, size=(3, 3, 3))
    C = 0.5 * (C + C.transpose(0, 2, 1))
    g = _linear_metric(C)
    gt, qmap = cm.normalize_coordinates(g)
    assert np.max(np.abs(gt.eval(np.zeros(3)) - np.eye(3))) < 1e-14
    assert np.max(np.abs(gt.d_eval(np.zeros(3)))) < 1e-8


def test_normalize_fd_fallback_metric():
    rng = np.random.default_rng(19)
    C = rng.normal(scale=0.1, size=(3, 3, 3))
    C = 0.5 * (C + C.transpose(0, 2, 1))
    base = _linear_metric(C)
    g_fd = cm.MetricField(base._eval)   # derivatives via finite differences
    gt, _ = cm.normalize_coordinates(g_fd)
    assert np.max(np.abs(gt.d_eval(np.zeros(3)))) < 1e-6


def test_pullback_identity_and_scaling():
    g0, _ = fam.sharpness_pair(1e-2, 1 / 16)
    ident = cm.QuadraticMap()
    pts = rand_shell_points(20, 0.05, 0.8, seed=20)
    assert np.allclose(cm.pullback(g0, ident).eval(pts), g0.eval(pts), atol=1e-14)
    # homothety on the flat metric
    r = 0.37
    gs = cm.pullback(cm.euclidean(), cm.QuadraticMap(A=r * np.eye(3)))
    assert np.allclose(gs.eval(pts), r**2 * np.eye(3), atol=1e-14)


def test_pullback_quadratic_map_on_euclid():
    # direct composition check: for x = y - B[y,y]/2 on g_euc,
    # g~(0) = I and d_m g~_ij(0) = -(B_ijm + B_jim)
    rng = np.random.default_rng(21)
    B = rng.normal(scale=0.3, size=(3, 3, 3))
    qmap = cm.QuadraticMap(B=B)
    gt = cm.pullback(cm.euclidean(), qmap)
    assert np.max(np.abs(gt.eval(np.zeros(3)) - np.eye(3))) < 1e-14
    Bs = qmap.B
    dg0 = gt.d_eval(np.zeros(3))
    for m in range(3):
        for i in range(3):
            for j in range(3):
                assert dg0[m, i, j] == pytest.approx(-(Bs[i, j, m] + Bs[j, i, m]), abs=1e-13)
    fd_check(gt, rand_shell_points(15, 0.01, 0.2, seed=22))


def test_pullback_round_trip():
    rng = np.random.default_rng(23)
    C = rng.normal(scale=0.15, size=(3, 3, 3))
    g = _linear_metric(0.5 * (C + C.transpose(0, 2, 1)))
    gt, qmap = cm.normalize_coordinates(g)
    pts = rand_shell_points(100, 0.01, 0.1, seed=24)
    # g~ = Phi* g evaluated back through the inverse must reproduce g
    y = qmap.inverse(pts)
    assert np.max(np.abs(qmap(y) - pts)) < 1e-12
    Jinv = np.linalg.inv(qmap.jac(y))
    back = np.einsum("nia,nij,njb->nab", Jinv, gt.eval(y), Jinv)
    assert np.max(np.abs(back - g.eval(pts))) < 1e-10


def test_normalized_derivative_check_against_christoffel_rule():
    # Appendix-C transformation: new Christoffels vanish at 0, hence dg~(0) = 0
    rng = np.random.default_rng(25)
    C = rng.normal(scale=0.2, size=(3, 3, 3))
    g = _linear_metric(0.5 * (C + C.transpose(0, 2, 1)))
    gt, qmap = cm.normalize_coordinates(g)
    gam = cm.christoffel(gt.eval(np.zeros((1, 3))), gt.d_eval(np.zeros((1, 3))))
    assert np.max(np.abs(gam)) < 1e-9


def test_ellipticity_ratio_trend_to_one():
    # coefficient ellipticity ratio -> 1 monotonically as c0 distance -> 0
    base = cm.euclidean()
    h = fam.h_tracefree_osc()
    pts = rand_shell_points(300, 0.05, 0.95, seed=30)
    ratios = []
    for eps in (3e-2, 1e-2, 3e-3, 1e-3):
        cf = cm.coefficient_field(fam.perturbation_family(base, h, eps), pts)
        ratios.append(cf.Lam / cf.lam)
    assert all(x > y for x, y in zip(ratios[:-1], ratios[1:]))
    assert abs(ratios[-1] - 1) < 5e-3
