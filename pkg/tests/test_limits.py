import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mmtf.cutoff import make_profile
from mmtf.fields import grid_for, make_field
from mmtf.geometry import make_domain
from mmtf.limits import (InfeasibleBoundary, RegimeParams, gamma_sweep, limit_energy, limit_parts,
                         recovery_sequence, scaling_map, sweep_csv, CSV_COLUMNS)


@pytest.fixture(scope="module")
def disk():
    return make_domain("disk", {"r": 1.0})


@pytest.fixture(scope="module")
def uniform(disk):
    return make_field(grid_for(disk, 64), disk, "uniform")


def test_uniform_limits(disk, uniform):
    assert limit_energy(uniform, RegimeParams("gj"), disk) == 0.0
    assert limit_energy(uniform, RegimeParams("ks", gamma=1.0), disk) == pytest.approx(-2 * math.pi, rel=1e-13)
    assert limit_energy(uniform, RegimeParams("clamped"), disk) == 0.0
    assert limit_energy(uniform, RegimeParams("nonlocal", nu=1.0), disk) == 0.0


def test_clamped_rejects_free_trace(disk):
    f = make_field(grid_for(disk, 64), disk, "tilted", angle=0.5)
    with pytest.raises(InfeasibleBoundary):
        limit_energy(f, RegimeParams("clamped"), disk)


def test_perturbations_are_optional(disk, uniform):
    reg = RegimeParams("gj", beta_z=0.5)
    assert limit_energy(uniform, reg, disk) == 0.0
    p = limit_parts(uniform, reg, disk)
    assert limit_energy(uniform, reg, disk, include_perturbations=True) == p.zeeman


def test_regime_validation():
    with pytest.raises(ValueError):
        RegimeParams("ks")
    with pytest.raises(ValueError):
        RegimeParams("ks", gamma=1.0, nu=1.0)
    with pytest.raises(ValueError):
        RegimeParams("nonlocal", gamma=1.0)
    with pytest.raises(ValueError):
        RegimeParams("cubic")
    with pytest.raises(ValueError):
        RegimeParams("gj", schedule="linear")


def test_thickness_from_gamma():
    reg = scaling_map("forward", "ks", {"gamma": 1.0}, 0.01)
    assert reg.physical.delta == pytest.approx(math.sqrt(2 * math.pi * 0.01 / math.log(100)), rel=1e-15)
    assert reg.physical.delta == pytest.approx(0.11681, abs=5e-6)


def test_nu_regime_gamma():
    reg = RegimeParams("nonlocal", nu=2.0)
    assert reg.gamma_eps(1e-3) == pytest.approx(13.8155, abs=5e-5)
    assert reg.stray_prefactor(1e-3) == 1.0


@settings(max_examples=40, deadline=None)
@given(tag=st.sampled_from(["gj", "ks", "clamped", "nonlocal"]),
       Q=st.floats(1.0, 5.0), hh=st.floats(-1.0, 1.0), kap=st.floats(0.0, 2.0),
       delta=st.floats(0.01, 1.0), eps=st.floats(1e-6, 0.5))
def test_scaling_roundtrip(tag, Q, hh, kap, delta, eps):
    phys = {"Q": Q, "h": hh, "kappa": kap, "delta": delta}
    red = scaling_map("inverse", tag, phys, eps)
    strength = {"nu": red.nu} if red.nu is not None else {"gamma": red.gamma_eps(eps)}
    back = scaling_map("forward", tag, dict(alpha=red.alpha, beta_z=red.beta_z, lam=red.lam, **strength), eps)
    got = back.physical
    assert got.Q == pytest.approx(Q, rel=1e-12, abs=1e-12)
    assert got.h == pytest.approx(hh, rel=1e-12, abs=1e-12)
    assert got.kappa == pytest.approx(kap, rel=1e-12, abs=1e-12)
    assert got.delta == pytest.approx(delta, rel=1e-12)


def test_recovery_restriction_and_norm(disk):
    eps = 0.1
    g = grid_for(disk, 96, margin=eps)
    f = make_field(g, disk, "tilted", angle=lambda X, Y: 0.4 + 0.3 * X)
    ext = recovery_sequence(f, disk, eps, "reflect")
    assert np.array_equal(ext.values[f.mask], f.values[f.mask])
    np.testing.assert_allclose(np.linalg.norm(ext.values[ext.mask], axis=1), 1.0, atol=1e-14)
    assert np.all(ext.mask == (ext.dist < eps))


def test_constant_e3_extension_of_uniform(disk):
    eps = 0.1
    g = grid_for(disk, 96, margin=eps)
    ext = recovery_sequence(make_field(g, disk, "uniform"), disk, eps, "constant_e3")
    assert np.array_equal(ext.values, make_field(g, disk, "uniform", eps=eps).values)


def test_nonlocal_uniform_gap_is_zero(disk, uniform):
    lin = make_profile("linear")
    reg = RegimeParams("nonlocal", nu=1.0)
    rows = gamma_sweep(uniform, disk, lin, reg, [2**-4, 2**-8, 2**-12], n_nodes=256)
    assert [r.gap for r in rows] == [0.0, 0.0, 0.0]
    g = grid_for(disk, 96, margin=0.12)
    rows = gamma_sweep(make_field(g, disk, "uniform"), disk, lin, reg, [0.12, 0.1], path="grid")
    assert [r.gap for r in rows] == [0.0, 0.0]


def test_sweep_requires_decreasing_eps(disk, uniform):
    with pytest.raises(ValueError):
        gamma_sweep(uniform, disk, make_profile("linear"), RegimeParams("gj"), [0.01, 0.1])


def test_ks_gap_shrinks(disk):
    f = make_field(grid_for(disk, 64), disk, "tilted", angle=lambda X, Y: 0.9 + 0.3 * X)
    rows = gamma_sweep(f, disk, make_profile("linear"), RegimeParams("ks", gamma=1.0),
                       [2**-4, 2**-8, 2**-16], n_nodes=256)
    gaps = [abs(r.gap) for r in rows]
    assert gaps[0] > gaps[1] > gaps[2]


def test_sweep_csv_layout(disk, uniform):
    rows = gamma_sweep(uniform, disk, make_profile("linear"), RegimeParams("nonlocal", nu=1.0),
                       [0.1], n_nodes=128)
    text = sweep_csv(rows, header="config: {}")
    lines = text.splitlines()
    assert lines[0] == "# config: {}"
    assert lines[1] == ",".join(CSV_COLUMNS)
    assert len(lines[2].split(",")) == len(CSV_COLUMNS)
