import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmtf.cutoff import make_profile
from mmtf.energy import (D_eps, D_eps_grid, b_field, decomposed_stray, f_eps, local_energies,
                         mask_ops, pair_energy, stray_fourier, stray_pair, total_G_eps, potential,
                         exchange_energy, SELF_CELL)
from mmtf.fields import Magnetization, boundary_trace, grid_for, make_field
from mmtf.geometry import OutsideTube, ResolutionError, make_domain
from mmtf.limits import RegimeParams

# D_eps on disk(1) with the linear profile: adaptive double quadrature in
# polar coordinates with the azimuthal integral in closed form (elliptic integrals)
D_DISK_ORACLE = {2**-4: 56.80123363776102, 2**-6: 72.77214161213433, 2**-8: 89.73005711667285,
                 2**-10: 107.00965269129692, 2**-12: 124.38869642099279}
# f_eps on disk(1) at radius r, linear profile: int_0^1 rho 4 K(m) / (r + rho) dt with
# rho = 1 + eps t, m = 4 r rho / (r + rho)^2, evaluated in extended precision
F_DISK_ORACLE = {(1.0, 1e-2): 15.410063238508862, (1.0, 1e-3): 19.979636116725832,
                 (1.0, 1e-4): 24.580203302295992, (0.5, 1e-4): 6.742947252820367,
                 (0.9, 1e-2): 9.04743490148536, (0.9, 1e-4): 9.121419609666884}


@pytest.fixture(scope="module")
def disk():
    return make_domain("disk", {"r": 1.0})


@pytest.fixture(scope="module")
def lin():
    return make_profile("linear")


def test_self_cell_weight():
    # int over [-1/2, 1/2]^2 of 1/|x|
    from scipy.integrate import dblquad
    v = 4 * dblquad(lambda y, x: 1 / math.hypot(x, y), 0, 0.5, 0, lambda x: x)[0] * 2
    assert SELF_CELL == pytest.approx(v, rel=1e-9)


def test_uniform_local_terms(disk, lin):
    eps = 0.1
    g = grid_for(disk, 96, margin=eps)
    f = make_field(g, disk, "uniform", eps=eps)
    reg = RegimeParams("gj", alpha=1.0, beta_z=0.5)
    br = local_energies(f, lin, disk, eps, reg)
    assert br.exchange == 0.0 and br.anisotropy == 0.0 and br.dmi == 0.0
    # -2 beta (|Omega| + int_layer eta) and the layer adds eps L / 2 + O(eps^2)
    expected = -2 * 0.5 * (math.pi + eps * math.pi + math.pi * eps**2 / 3)
    assert br.zeeman == pytest.approx(expected, rel=5e-3)


def test_dmi_odd_in_m_par(disk, lin):
    g = grid_for(disk, 64, margin=0.2)
    f = make_field(g, disk, "random", eps=0.2, seed=2, smooth=0.2)
    flipped = f.values * np.array([1.0, 1.0, -1.0])
    a = local_energies(f, lin, disk, 0.2).dmi
    b = local_energies(f.with_values(flipped), lin, disk, 0.2).dmi
    assert b == pytest.approx(-a, rel=1e-13)


def test_uniform_stray_identity(disk, lin):
    eps = 0.15
    g = grid_for(disk, 96, margin=eps)
    f = make_field(g, disk, "uniform", eps=eps)
    V, Vt = stray_pair(f, lin, disk, eps)
    assert V == 0.0
    assert Vt == D_eps_grid(f, disk, lin, eps)


def test_direct_and_fft_agree(disk, lin):
    eps = 0.2
    g = grid_for(disk, 64, margin=eps)
    f = make_field(g, disk, "random", eps=eps, seed=11, smooth=0.15)
    a = stray_pair(f, lin, disk, eps, "fft")
    b = stray_pair(f, lin, disk, eps, "direct")
    np.testing.assert_allclose(a, b, rtol=1e-10)


def test_potential_matches_dense_sum():
    rng = np.random.default_rng(0)
    rho = rng.standard_normal((9, 7))
    h = 0.3
    I, J = np.meshgrid(np.arange(9), np.arange(7), indexing="ij")
    P = np.zeros_like(rho)
    for i in range(9):
        for j in range(7):
            r = np.hypot(I - i, J - j) * h
            w = np.where(r > 0, h * h / np.where(r > 0, r, 1.0), SELF_CELL * h)
            P[i, j] = np.sum(w * rho)
    np.testing.assert_allclose(potential(rho, h, "fft"), P, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(potential(rho, h, "direct"), P, rtol=1e-12, atol=1e-12)


def test_grid_too_coarse(disk, lin):
    g = grid_for(disk, 24, margin=0.05)
    f = make_field(g, disk, "uniform", eps=0.05)
    with pytest.raises(ResolutionError):
        stray_pair(f, lin, disk, 0.05)


def test_fourier_reference_state(disk):
    g = grid_for(disk, 32)
    f = make_field(g, disk, "uniform", u=(0, 0, -1))
    tot, parts = stray_fourier(f, 1.0)
    assert tot == 0.0 and parts == (0.0, 0.0, 0.0)


def test_fourier_plancherel(disk):
    g = grid_for(disk, 96)
    f = make_field(g, disk, "neel_skyrmion", r0=0.2, polarity=1, r_cut=0.8)
    _, (tv, _, _) = stray_fourier(f, 0.5)
    mp2 = g.h**2 * np.sum(f.values[..., :2] ** 2)
    assert tv == pytest.approx(-mp2, rel=1e-6)


def test_fourier_requires_decay(disk):
    f = make_field(grid_for(disk, 32), disk, "neel_skyrmion", r0=0.3, polarity=1)
    full = np.ones_like(f.mask)
    X, Y = f.grid.centres()
    v = np.stack([np.zeros_like(X), np.zeros_like(X), np.where(X > 0, 1.0, -1.0)], axis=-1)
    f = Magnetization(f.grid, v, full, f.dist)
    with pytest.raises(ValueError):
        stray_fourier(f, 1.0)


def test_decomposition_uniform(disk):
    f = make_field(grid_for(disk, 64), disk, "uniform")
    dec = decomposed_stray(f, disk)
    assert dec.V_bulk_bulk == 0 and dec.V_bnd_bulk == 0
    assert dec.Vt_bulk_bulk == 0 and dec.Vt_bnd_bulk == 0
    assert dec.bnd_norm_inplane == 0 and abs(dec.bnd_defect_outofplane) < 1e-15


def test_decomposition_hedgehog_boundary_norm(disk):
    f = make_field(grid_for(disk, 96), disk, "hedgehog")
    dec = decomposed_stray(f, disk, n_nodes=512)
    assert dec.bnd_norm_inplane == pytest.approx(2 * math.pi, rel=5e-3)


def test_decomposition_zero_trace_factor(disk):
    # m_par is a radial bump vanishing on the boundary, so the boundary-bulk term is 0
    g = grid_for(disk, 64)
    f = make_field(g, disk, "uniform")
    X, Y = g.centres()
    r = np.hypot(X, Y)
    mz = np.clip(1 - r**2, 0, 1) ** 2
    mx = np.sqrt(1 - mz**2)
    v = np.stack([mx, np.zeros_like(mx), mz], axis=-1)
    f = f.with_values(v)
    tr = boundary_trace(f, disk, 256)
    tr = tr._replace(m_par=np.zeros_like(tr.m_par))
    dec = decomposed_stray(f, disk, tr, n_nodes=256)
    assert dec.Vt_bnd_bulk == 0.0


@pytest.mark.parametrize("eps", sorted(D_DISK_ORACLE))
def test_D_eps_disk_oracle(disk, lin, eps):
    assert D_eps(disk, lin, eps) == pytest.approx(D_DISK_ORACLE[eps], rel=2e-7)


def test_D_eps_leading_coefficient(disk, lin):
    a, b = D_eps(disk, lin, 1e-6), D_eps(disk, lin, 1e-8)
    assert (b - a) / (2 * math.log(10)) == pytest.approx(4 * math.pi, rel=2e-3)


def test_D_eps_profiles_share_leading_coefficient(disk):
    slopes = []
    for kind in ("linear", "smoothstep"):
        p = make_profile(kind)
        slopes.append((D_eps(disk, p, 1e-4) - D_eps(disk, p, 1e-3)) / math.log(10))
    assert slopes[0] / slopes[1] == pytest.approx(1.0, rel=1e-2)


def test_D_eps_outside_tube(disk, lin):
    with pytest.raises(OutsideTube):
        D_eps(disk, lin, disk.eps_bar)


@pytest.mark.parametrize("key", sorted(F_DISK_ORACLE))
def test_f_eps_disk_oracle(disk, lin, key):
    r, eps = key
    assert f_eps(disk, lin, eps, [[r, 0.0]])[0] == pytest.approx(F_DISK_ORACLE[key], rel=1e-8)


def test_f_eps_centre(disk, lin):
    for eps in (1e-1, 1e-3):
        assert f_eps(disk, lin, eps, [[0.0, 0.0]])[0] == pytest.approx(2 * math.pi, rel=1e-10)


def test_f_eps_rotation_invariant(disk, lin):
    th = np.linspace(0, 2 * np.pi, 7)
    v = f_eps(disk, lin, 1e-3, np.stack([np.cos(th), np.sin(th)], axis=1))
    np.testing.assert_allclose(v, F_DISK_ORACLE[(1.0, 1e-3)], rtol=1e-8)


def test_f_eps_outside_layer(disk, lin):
    with pytest.raises(ValueError):
        f_eps(disk, lin, 0.01, [[1.02, 0.0]])


def test_b_field_centre_and_growth(disk):
    np.testing.assert_allclose(b_field(disk, 1.0, [[0.0, 0.0]]), [[0.0, 0.0]], atol=1e-12)
    dist = np.array([1e-1, 1e-2, 1e-3, 1e-4])
    b = b_field(disk, 1.0, np.stack([1 - dist, 0 * dist], axis=1))
    assert np.all(np.abs(b[:, 1]) < 1e-10)
    slopes = np.diff(b[:, 0]) / np.diff(np.abs(np.log(dist)))
    assert np.all(slopes > 0)
    # the slope settles to 2 (a line source of unit strength)
    assert slopes[-1] == pytest.approx(2.0, rel=2e-2)


def test_b_field_outside(disk):
    with pytest.raises(ValueError):
        b_field(disk, 1.0, [[1.5, 0.0]])


def test_nonlocal_uniform_cancellation(disk, lin):
    eps = 0.1
    f = make_field(grid_for(disk, 96, margin=eps), disk, "uniform", eps=eps)
    br = total_G_eps(f, lin, disk, RegimeParams("nonlocal", nu=1.3), eps)
    assert br.total_G_eps + br.offset == 0.0


def test_gamma_regime_uniform(disk, lin):
    eps = 0.1
    f = make_field(grid_for(disk, 96, margin=eps), disk, "uniform", eps=eps)
    br = total_G_eps(f, lin, disk, RegimeParams("ks", gamma=1.0), eps)
    D = D_eps_grid(f, disk, lin, eps)
    assert br.total_G_eps == pytest.approx(-D / (2 * abs(math.log(eps))), rel=1e-14)


def test_gamma_regime_uniform_limit(disk, lin):
    # -gamma D_eps / (2 |ln eps|) approaches -gamma H^1(boundary) as eps -> 0
    vals = [-D_eps(disk, lin, e) / (2 * abs(math.log(e))) for e in (1e-4, 1e-8, 1e-16)]
    errs = [abs(v + 2 * math.pi) for v in vals]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.06 * 2 * math.pi


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_lambda_term_linear(disk, lin, seed):
    eps = 0.2
    f = make_field(grid_for(disk, 64, margin=eps), disk, "random", eps=eps, seed=seed, smooth=0.2)
    a = total_G_eps(f, lin, disk, RegimeParams("ks", gamma=1.0, lam=0.0), eps)
    b = total_G_eps(f, lin, disk, RegimeParams("ks", gamma=1.0, lam=2.5), eps)
    assert b.total_G_eps - a.total_G_eps == pytest.approx(2.5 * a.dmi, rel=1e-12, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), smooth=st.floats(0.05, 0.3))
def test_stray_terms_nonnegative(seed, smooth):
    dom = make_domain("disk", {"r": 1.0})
    p = make_profile("linear")
    eps = 0.2
    f = make_field(grid_for(dom, 64, margin=eps), dom, "random", eps=eps, seed=seed, smooth=smooth)
    V, Vt = stray_pair(f, p, dom, eps)
    assert V >= -1e-10 * (1 + abs(V))
    assert Vt >= -1e-10 * (1 + abs(Vt))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_pair_energy_positive_definite(seed):
    rng = np.random.default_rng(seed)
    rho = rng.standard_normal((12, 10))
    assert pair_energy(rho, 0.1) > 0


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_exchange_rotation_invariant(seed):
    # a global rotation of all spins leaves the exchange energy unchanged
    dom = make_domain("disk", {"r": 1.0})
    f = make_field(grid_for(dom, 24), dom, "random", seed=seed, smooth=0.2)
    ops = mask_ops(f.mask, f.grid.h)
    rng = np.random.default_rng(seed + 1)
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    a = exchange_energy(f.values, ops)
    b = exchange_energy(f.values @ Q.T, ops)
    assert b == pytest.approx(a, rel=1e-12)
