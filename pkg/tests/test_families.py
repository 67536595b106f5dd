import numpy as np
import pytest

from curvlab import families as fam
from curvlab import metric as cm


def sphere_points(radii, n_dirs=64, seed=0):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n_dirs, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return (np.asarray(radii)[:, None, None] * d[None]).reshape(-1, 3)


def test_sharpness_family_scalars():
    f = fam.SharpnessFamily(1e-4, 1 / 16)
    assert f.r == pytest.approx(1e-1)
    s = np.array([0.0, 0.01, 0.25])
    assert np.allclose(f.phi0(s), 1 - s**2 / 20)
    # v solves the torsion problem: v = (r^2 - |x|^2)/6, Laplacian -1
    assert f.v(np.array([f.r**2]))[0] == pytest.approx(0.0)
    # eta: 1 inside B_{r/2}, 0 outside B_r
    assert f.eta(np.array([(0.4 * f.r) ** 2]))[0] == 1.0
    assert f.eta(np.array([(1.1 * f.r) ** 2]))[0] == 0.0


def test_sharpness_eta_bounds_scale_free():
    # |grad eta| <= C/r and |hess eta| <= C/r^2 with C independent of r
    consts = []
    for eps in (1e-2, 1e-4):
        f = fam.SharpnessFamily(eps, 1 / 16)
        rho = np.linspace(f.r / 2, f.r, 4001)
        val, dval, ddval = fam._eta_piecewise(rho, f.r)
        consts.append((np.max(np.abs(dval)) * f.r, np.max(np.abs(ddval)) * f.r**2))
    (c1a, c2a), (c1b, c2b) = consts
    assert c1a == pytest.approx(c1b, rel=1e-3)
    assert c2a == pytest.approx(c2b, rel=1e-3)
    assert c1a < 5 and c2a < 60


def test_sharpness_sup_bound_on_phi():
    # ||phi - phi0||_inf <= a eps^(1/2) r^2 / 6
    f = fam.SharpnessFamily(1e-3, 1 / 16)
    s = np.linspace(0, f.r**2 * 1.2, 20001)
    diff = np.abs(f.amp * f.eta(s) * f.v(s))
    assert diff.max() <= f.amp * f.r**2 / 6 + 1e-15
    assert diff.max() == pytest.approx(f.amp * f.r**2 / 6, rel=1e-12)  # attained at 0


def test_sharpness_three_regime_curvature_bounds():
    eps, a = 1e-4, 1 / 16
    g0, g = fam.sharpness_pair(eps, a)
    r = eps**0.25
    rt = np.sqrt(eps)
    inner = sphere_points(np.linspace(1e-3, 0.49 * r, 8), seed=1)
    annulus = sphere_points(np.linspace(0.5 * r, r, 12), seed=2)
    outer = sphere_points(np.linspace(1.001 * r, 0.99, 12), seed=3)
    R_in = cm.scalar_curvature(g, np.vstack([np.zeros(3), *inner[None]]).reshape(-1, 3))
    assert np.all(R_in >= a * rt - 1e-12)
    R_ann = cm.scalar_curvature(g, annulus)
    assert np.all(R_ann >= rt / 8 - 1e-12)
    R_out = cm.scalar_curvature(g, outer)
    assert np.all(R_out >= rt - 1e-12)
    # degenerate family: a_coeff -> 0 gives g = g0
    g0b, gb = fam.sharpness_pair(eps, 1e-30)
    pts = sphere_points([0.3 * r, 0.7 * r], seed=4)
    assert np.max(np.abs(gb.eval(pts) - g0b.eval(pts))) < 1e-25


def test_sharpness_laplacian_of_cutoff_torsion_product():
    # analytic Laplacian of eta*v (via the conformal tag) matches an FD Laplacian
    f = fam.SharpnessFamily(1e-2, 1.0)
    phi, phis, phiss = f._phi_fns()

    def w_of_pts(p):
        s = np.einsum("ni,ni->n", p, p)
        return (phi(s) - f.phi0(s)) / f.amp

    def lap_w(p):
        s = np.einsum("ni,ni->n", p, p)
        ws = (phis(s) - (-s / 10)) / f.amp
        wss = (phiss(s) + 0.1) / f.amp
        return 6 * ws + 4 * s * wss

    pts = sphere_points(np.linspace(0.2 * f.r, 1.3 * f.r, 9), n_dirs=8, seed=5)
    h = 1e-4
    lap_fd = np.zeros(len(pts))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        lap_fd += (w_of_pts(pts + e) - 2 * w_of_pts(pts) + w_of_pts(pts - e)) / h**2
    assert np.max(np.abs(lap_fd - lap_w(pts))) < 5e-5 / h**0  # O(h^2) of a C^2 function


def test_sharpness_argument_errors():
    with pytest.raises(ValueError):
        fam.SharpnessFamily(0.09, 1 / 16)  # r = 0.548 >= 1/2
    with pytest.raises(ValueError):
        fam.SharpnessFamily(1e-4, 0.0)
    with pytest.raises(ValueError):
        fam.SharpnessFamily(0.2, 1 / 16)


def test_warped_euclid_instance_is_flat():
    g = fam.warped_metric(fam.spec_euclid((0.01, 1.0)))
    pts = sphere_points(np.linspace(0.05, 0.95, 10), n_dirs=100, seed=6)
    assert np.max(np.abs(g.eval(pts) - np.eye(3))) < 1e-12


def test_warped_spec_validation():
    with pytest.raises(ValueError):
        fam.RadialMetricSpec(np.sin, np.cos, lambda r: -np.sin(r), (0.0, 1.0))
    with pytest.raises(ValueError):
        fam.RadialMetricSpec(np.cos, lambda r: -np.sin(r), lambda r: -np.cos(r), (0.01, 3.0))


def test_perturbation_family_basics():
    g0, _ = fam.sharpness_pair(1e-2, 1 / 16)
    assert fam.perturbation_family(g0, fam.h_tracefree_osc(), 0.0) is g0
    eps = 1e-3
    g = fam.perturbation_family(g0, fam.h_tracefree_osc(), eps)
    pts = sphere_points(np.linspace(0.05, 0.9, 12), seed=7)
    d = cm.c0_distance(g, g0, pts)
    assert d <= eps * np.sqrt(2) + 1e-15
    g.check_spd(pts)  # SPD preserved at this amplitude


def test_shrinking_support_geometry():
    g0, _ = fam.sharpness_pair(1e-2, 1 / 16)
    delta = 0.05
    pts = np.vstack([sphere_points(np.linspace(0.02, 0.9, 24), n_dirs=48, seed=8),
                     np.array([[0.3, 0.0, 0.0]])])
    d_last = None
    for k in (2, 4, 6):
        gk = fam.shrinking_support_family(g0, k, delta=delta)
        dist = cm.c0_distance(gk, g0, pts)
        # c0 distance stays ~ delta because the center is in the sample set
        assert delta / 2 <= dist <= delta
        # support measure shrinks like 8^-k: radii are exactly 2^-k
        assert gk.bump["radius"] == 2.0**-k
        d_last = dist
    # bi-Lipschitz eigenvalue ratio <= 1 + 2 delta
    gk = fam.shrinking_support_family(g0, 2, delta=delta)
    w0 = np.linalg.eigvalsh(g0.eval(pts))
    wk = np.linalg.eigvalsh(gk.eval(pts))
    assert np.max(wk / w0) <= 1 + 2 * delta
    assert np.min(wk / w0) >= 1 / (1 + 2 * delta)


def test_shrinking_support_volume_ratio():
    # {|g_k - g0| > delta/2} is {chi > c} for a fixed threshold: radii scale by 2^-k
    g0, _ = fam.sharpness_pair(1e-2, 1 / 16)
    g3 = fam.shrinking_support_family(g0, 3)
    g6 = fam.shrinking_support_family(g0, 6)
    rng = np.random.default_rng(9)
    for gk, other in ((g3, g6),):
        c = gk.bump["center"]
        # sampled measure of the half-amplitude set inside the bump ball
        u = rng.uniform(-1, 1, size=(200000, 3)) * gk.bump["radius"] + c
        m3 = np.mean(np.sqrt(np.einsum("nij,nij->n", *(lambda d: (d, d))(gk.eval(u) - g0.eval(u))))
                     > gk.bump["delta"] / 2) * (2 * gk.bump["radius"]) ** 3
        u6 = (u - c) / 8 + c
        m6 = np.mean(np.sqrt(np.einsum("nij,nij->n", *(lambda d: (d, d))(other.eval(u6) - g0.eval(u6))))
                     > other.bump["delta"] / 2) * (2 * other.bump["radius"]) ** 3
        assert m3 / m6 == pytest.approx(8.0**3, rel=0.05)


def test_shrinking_support_delta_zero():
    g0, _ = fam.sharpness_pair(1e-2, 1 / 16)
    gk = fam.shrinking_support_family(g0, 4, delta=0.0)
    pts = sphere_points([0.28, 0.3, 0.32], seed=10)
    assert np.max(np.abs(gk.eval(pts) - g0.eval(pts))) == 0.0


def test_rescaled_field_identities():
    g0, _ = fam.sharpness_pair(1e-2, 1 / 16)
    a = 1 / 80
    h0 = fam.rescaled(g0, a)
    pts = sphere_points(np.linspace(1.0, 70.0, 8), seed=11)
    assert np.allclose(h0.eval(pts), g0.eval(a * pts), atol=1e-15)
    assert np.allclose(h0.d_eval(pts), a * g0.d_eval(a * pts), atol=1e-15)
    # curvature of the pointwise-rescaled coefficients: R_h(x) = a^2 R_g(ax)
    sub = pts[:5]
    assert np.allclose(cm.scalar_curvature(h0, sub),
                       a**2 * cm.scalar_curvature(g0, a * sub), rtol=1e-10)
