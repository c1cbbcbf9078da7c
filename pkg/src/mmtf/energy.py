"""Energy terms of the regularized thin-film functional on cell-centred grids.

Local terms use midpoint quadrature. Exchange is the edge form
sum over neighbouring cell pairs of w_e |m_i - m_j|^2, which is second order and
free of the checkerboard null space of centred differences. DMI and the charge
densities use centred differences, one-sided at the edge of the mask.

Stray-field double integrals ``int int rho(x) rho(y) / |x - y|`` are discretized
with the kernel h^2 / |x_i - x_j| off the diagonal and the exact self-cell
integral 4 h ln(1 + sqrt 2) on it. The direct and FFT paths share this table.
Reductions go through ``math.fsum``, so totals do not depend on summation order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field as dc_field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp

from .cutoff import CutoffProfile, check_eps, eta_from_distance
from .fields import BoundaryTrace, Grid, Magnetization, boundary_trace
from .geometry import DomainGeometry, ResolutionError, locate
from .layer import LayerPairIntegrator, layer_potential

SELF_CELL = 4.0 * math.log(1.0 + math.sqrt(2.0))  # int over the unit square of 1/|r|


def fsum(a) -> float:
    return math.fsum(np.asarray(a, dtype=float).ravel().tolist())


# ---------------------------------------------------------------- operators
@dataclass
class MaskOps:
    """Finite-difference operators restricted to a mask, acting on arrays
    flattened in C order from shape (nx, ny)."""

    shape: tuple
    h: float
    Dx: sp.csr_matrix
    Dy: sp.csr_matrix
    edges: np.ndarray  # (E, 2) flat indices of neighbouring masked cells


def _diff_1d(mask, axis, h):
    nx, ny = mask.shape
    idx = np.arange(nx * ny).reshape(nx, ny)
    rows, cols, vals = [], [], []
    fwd = np.zeros_like(mask)
    bwd = np.zeros_like(mask)
    if axis == 0:
        fwd[:-1] = mask[1:]
        bwd[1:] = mask[:-1]
        step = ny
    else:
        fwd[:, :-1] = mask[:, 1:]
        bwd[:, 1:] = mask[:, :-1]
        step = 1
    both = mask & fwd & bwd
    onlyf = mask & fwd & ~bwd
    onlyb = mask & bwd & ~fwd
    for sel, entries in ((both, ((step, 0.5), (-step, -0.5))),
                         (onlyf, ((step, 1.0), (0, -1.0))),
                         (onlyb, ((0, 1.0), (-step, -1.0)))):
        r = idx[sel]
        for off, v in entries:
            rows.append(r)
            cols.append(r + off)
            vals.append(np.full(len(r), v / h))
    n = nx * ny
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def mask_ops(mask: np.ndarray, h: float) -> MaskOps:
    nx, ny = mask.shape
    idx = np.arange(nx * ny).reshape(nx, ny)
    ex = mask[:-1] & mask[1:]
    ey = mask[:, :-1] & mask[:, 1:]
    edges = np.concatenate([
        np.stack([idx[:-1][ex], idx[1:][ex]], axis=1),
        np.stack([idx[:, :-1][ey], idx[:, 1:][ey]], axis=1),
    ])
    return MaskOps(mask.shape, h, _diff_1d(mask, 0, h), _diff_1d(mask, 1, h), edges)


# ------------------------------------------------------------------ kernels
@lru_cache(maxsize=16)
def _kernel_spectrum(nx: int, ny: int, h: float):
    """FFT of the zero-padded (circulant-embedded) kernel table."""
    ix = np.arange(2 * nx)
    iy = np.arange(2 * ny)
    ix = np.where(ix <= nx, ix, ix - 2 * nx).astype(float)
    iy = np.where(iy <= ny, iy, iy - 2 * ny).astype(float)
    r = np.hypot(ix[:, None], iy[None, :])
    with np.errstate(divide="ignore"):
        k = h / r
    k[0, 0] = SELF_CELL * h
    return sfft.rfft2(k)


def kernel_weight(di, dj, h):
    r = np.hypot(di, dj)
    with np.errstate(divide="ignore"):
        return np.where(r == 0, SELF_CELL * h, h / np.where(r == 0, 1.0, r))


def potential(rho: np.ndarray, h: float, method: str = "fft") -> np.ndarray:
    """phi_i = sum_j W_{i-j} rho_j, i.e. int rho(y) / |x_i - y| dy."""
    nx, ny = rho.shape
    if method == "fft":
        spec = _kernel_spectrum(nx, ny, h)
        out = sfft.irfft2(sfft.rfft2(rho, s=(2 * nx, 2 * ny)) * spec, s=(2 * nx, 2 * ny))
        return out[:nx, :ny]
    if method == "direct":
        out = np.zeros_like(rho)
        nzx, nzy = np.nonzero(np.abs(rho) > 0)
        if len(nzx) == 0:
            return out
        X = np.arange(nx)[:, None]
        Y = np.arange(ny)[None, :]
        for i, j in zip(nzx, nzy):
            out += rho[i, j] * kernel_weight(X - i, Y - j, h)
        return out
    raise ValueError(f"unknown method {method!r}")


def pair_energy(rho, h, method="fft", rho2=None) -> float:
    """h^2 sum_i rho_i (W rho2)_i."""
    rho2 = rho if rho2 is None else rho2
    return h * h * fsum(rho * potential(rho2, h, method))


# ------------------------------------------------------------------ cutoff on grid
@dataclass
class GridLayer:
    """eta_eps and its exact gradient at cell centres."""

    eps: float
    eta: np.ndarray
    grad: np.ndarray  # (nx, ny, 2)


def cutoff_on_grid(field: Magnetization, dom: DomainGeometry, profile: CutoffProfile,
                   eps: float, min_cells: float = 4.0) -> GridLayer:
    check_eps(dom, eps)
    if eps < min_cells * field.grid.h:
        raise ResolutionError(
            f"grid spacing {field.grid.h:.3g} resolves eps={eps:.3g} with fewer than "
            f"{min_cells:g} cells; refine the grid or use boundary coordinates")
    X, Y = field.grid.centres()
    loc = locate(dom, np.stack([X.ravel(), Y.ravel()], axis=1))
    d = loc.d.reshape(X.shape)
    n = loc.n.reshape(X.shape + (2,))
    eta, g = eta_from_distance(profile, d, eps)
    return GridLayer(eps, eta, -g[..., None] * n)


# ------------------------------------------------------------------ local terms
def exchange_energy(values, ops: MaskOps, cell_weight=None) -> float:
    m = values.reshape(-1, 3)
    e = ops.edges
    diff = m[e[:, 0]] - m[e[:, 1]]
    sq = np.einsum("ij,ij->i", diff, diff)
    if cell_weight is not None:
        w = cell_weight.ravel()
        sq = sq * 0.5 * (w[e[:, 0]] + w[e[:, 1]])
    return fsum(sq)


def divergence(values, ops: MaskOps):
    m = values.reshape(-1, 3)
    return (ops.Dx @ m[:, 0] + ops.Dy @ m[:, 1]).reshape(ops.shape)


def gradient_par(values, ops: MaskOps):
    mz = values.reshape(-1, 3)[:, 2]
    return np.stack([(ops.Dx @ mz).reshape(ops.shape), (ops.Dy @ mz).reshape(ops.shape)], axis=-1)


def dmi_energy(values, ops: MaskOps, cell_weight=None) -> float:
    """int w (m_par div m_perp - m_perp . grad m_par)."""
    div = divergence(values, ops)
    gz = gradient_par(values, ops)
    dens = values[..., 2] * div - np.einsum("ijk,ijk->ij", values[..., :2], gz)
    if cell_weight is not None:
        dens = dens * cell_weight
    return ops.h ** 2 * fsum(dens)


# ------------------------------------------------------------------ results
@dataclass
class EnergyBreakdown:
    exchange: float
    anisotropy: float
    zeeman: float
    dmi: float
    V_inplane: float = float("nan")
    Vtilde_outofplane: float = float("nan")
    W_eps: float = float("nan")
    total_G_eps: float = float("nan")
    offset: float = 0.0
    extras: dict = dc_field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("extras"))
        return d


@dataclass
class StrayDecomposition:
    V_bulk_bulk: float
    V_bnd_bulk: float
    Vt_bulk_bulk: float
    Vt_bnd_bulk: float
    bnd_norm_inplane: float
    bnd_defect_outofplane: float


def _regime_check(regime):
    if regime is None:
        return
    if getattr(regime, "gamma", None) is not None and getattr(regime, "nu", None) is not None:
        raise ValueError("regime sets both gamma and nu")


def local_energies(field: Magnetization, profile: CutoffProfile, dom: DomainGeometry,
                   eps: float, regime=None, layer: GridLayer | None = None,
                   ops: MaskOps | None = None) -> EnergyBreakdown:
    """Exchange, anisotropy, Zeeman and DMI with cutoff weights eta_eps^2 (eta_eps for Zeeman)."""
    _regime_check(regime)
    layer = layer or cutoff_on_grid(field, dom, profile, eps)
    ops = ops or mask_ops(field.mask, field.grid.h)
    alpha = getattr(regime, "alpha", 0.0) if regime is not None else 0.0
    beta = getattr(regime, "beta_z", 0.0) if regime is not None else 0.0
    m = field.values
    h2 = field.grid.h ** 2
    eta2 = layer.eta ** 2
    exch = exchange_energy(m, ops, eta2)
    anis = alpha * h2 * fsum(eta2 * np.einsum("ijk,ijk->ij", m[..., :2], m[..., :2]))
    zee = -2.0 * beta * h2 * fsum(layer.eta * m[..., 2] * field.mask)
    dmi = dmi_energy(m, ops, eta2)
    return EnergyBreakdown(exch, anis, zee, dmi)


def charge_densities(field: Magnetization, layer: GridLayer, ops: MaskOps):
    """rho = div(eta m_perp) and G = grad(eta m_par) by the product rule."""
    m = field.values
    rho = layer.eta * divergence(m, ops) + np.einsum("ijk,ijk->ij", layer.grad, m[..., :2])
    G = layer.eta[..., None] * gradient_par(m, ops) + m[..., 2:3] * layer.grad
    rho = np.where(field.mask, rho, 0.0)
    G = np.where(field.mask[..., None], G, 0.0)
    return rho, G


def stray_pair(field: Magnetization, profile: CutoffProfile, dom: DomainGeometry, eps: float,
               method: str = "fft", layer: GridLayer | None = None,
               ops: MaskOps | None = None):
    """(V, Vtilde) of the cutoff-weighted field on the grid."""
    layer = layer or cutoff_on_grid(field, dom, profile, eps)
    ops = ops or mask_ops(field.mask, field.grid.h)
    rho, G = charge_densities(field, layer, ops)
    h = field.grid.h
    V = pair_energy(rho, h, method)
    Vt = pair_energy(G[..., 0], h, method) + pair_energy(G[..., 1], h, method)
    return V, Vt


def D_eps_grid(field_or_grid, dom: DomainGeometry, profile: CutoffProfile, eps: float,
               method: str = "fft") -> float:
    """D_eps from the grid charge table; identical arithmetic to Vtilde of eta_eps * 1."""
    if isinstance(field_or_grid, Grid):
        from .fields import make_field
        field_or_grid = make_field(field_or_grid, dom, "uniform", eps=eps)
    uni = Magnetization(field_or_grid.grid, np.where(field_or_grid.mask[..., None], [0.0, 0.0, 1.0], 0.0),
                        field_or_grid.mask, field_or_grid.dist)
    return stray_pair(uni, profile, dom, eps, method)[1]


# ------------------------------------------------------------------ Fourier form
def stray_fourier(field: Magnetization, delta: float, pad: int = 2, tol: float = 1e-3):
    """Whole-plane stray energy in Fourier form, relative to m0 = (0, 0, -1).

    Returns ``(total, (t_volume, t_bulk, t_surface))`` with
    t_volume = -int |m_perp^|^2, t_bulk = (delta/2) int |k . m_perp^|^2 / |k| and
    t_surface = -(delta/2) int |k| |(m_par + 1)^|^2, all over dk / (2 pi)^2.
    """
    m = field.values
    u = np.where(field.mask[..., None], m - np.array([0.0, 0.0, -1.0]), 0.0)
    edge = np.concatenate([u[0], u[-1], u[:, 0], u[:, -1]])
    if np.max(np.abs(edge)) > tol:
        raise ValueError("field has not decayed to m0 at the edge of the grid")
    nx, ny = field.grid.nx, field.grid.ny
    h = field.grid.h
    Nx, Ny = pad * nx, pad * ny
    F = [sfft.fft2(u[..., c], s=(Nx, Ny)) * h * h for c in range(3)]
    kx = 2 * np.pi * sfft.fftfreq(Nx, d=h)
    ky = 2 * np.pi * sfft.fftfreq(Ny, d=h)
    KX, KY = np.meshgrid(kx, ky, indexing="ij")
    K = np.hypot(KX, KY)
    dk = 1.0 / (Nx * h * Ny * h)  # (dk_x dk_y) / (2 pi)^2
    t_vol = -dk * fsum(np.abs(F[0]) ** 2 + np.abs(F[1]) ** 2)
    kdotm = KX * F[0] + KY * F[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        bulk = np.where(K > 0, np.abs(kdotm) ** 2 / np.where(K > 0, K, 1.0), 0.0)
    # The symbol |k.m|^2/|k| vanishes linearly at k = 0, so the zero mode adds nothing.
    t_bulk = 0.5 * delta * dk * fsum(bulk)
    t_surf = -0.5 * delta * dk * fsum(K * np.abs(F[2]) ** 2)
    return t_vol + t_bulk + t_surf, (t_vol, t_bulk, t_surf)


# ------------------------------------------------------------------ boundary-coordinate quantities
_PAIR_CACHE: dict = {}


def _pair_integrator(dom: DomainGeometry, n_nodes: int) -> LayerPairIntegrator:
    key = (id(dom), n_nodes)
    if key not in _PAIR_CACHE:
        if len(_PAIR_CACHE) > 4:
            _PAIR_CACHE.clear()
        _PAIR_CACHE[key] = (dom, LayerPairIntegrator(dom, n_nodes))
    return _PAIR_CACHE[key][1]


def D_eps(dom: DomainGeometry, profile: CutoffProfile, eps: float, n_nodes: int = 1024) -> float:
    """D_eps = int int grad eta_eps(x) . grad eta_eps(y) / |x - y| in boundary coordinates."""
    check_eps(dom, eps)
    return _pair_integrator(dom, n_nodes).integrate(profile, eps)


def f_eps(dom: DomainGeometry, profile: CutoffProfile, eps: float, x, n_nodes: int = 2048):
    """f_eps(x) = int |grad eta_eps(y)| / |y - x| dy for points of Omega_eps."""
    check_eps(dom, eps)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    loc = locate(dom, x)
    if np.any(loc.d >= eps):
        raise ValueError("f_eps is evaluated on Omega_eps only")
    out = layer_potential(dom, profile, eps, x, n_nodes=n_nodes, aligned=True, n_z=32)
    return out


def trace_function(trace: BoundaryTrace, values: np.ndarray, L: float):
    """Periodic linear interpolation of trace samples in arc length."""
    s = np.concatenate([trace.s, [trace.s[0] + L]])
    v = np.concatenate([values, values[:1]])
    return lambda q: np.interp(np.mod(q, L), s, v)


def b_field(dom: DomainGeometry, trace_mpar, x, n_nodes: int = 2048):
    """b(x) = int m_par(sigma) n(sigma) / |x - sigma| dH^1 for x inside the domain.

    ``trace_mpar`` is a :class:`BoundaryTrace`, a callable of arc length, or a
    constant.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    loc = locate(dom, x)
    if np.any(loc.d >= 0):
        raise ValueError("b is defined inside the domain only")
    a = _as_boundary_function(dom, trace_mpar)
    close = np.abs(loc.d) < 4 * dom.perimeter / n_nodes
    out = np.zeros((len(x), 2))
    if np.any(~close):
        out[~close] = layer_potential(dom, None, 0.0, x[~close], a=a, vector=True, n_nodes=n_nodes)
    if np.any(close):
        out[close] = layer_potential(dom, None, 0.0, x[close], a=a, vector=True,
                                     n_nodes=n_nodes, aligned=True)
    return out


def _as_boundary_function(dom, a):
    if isinstance(a, BoundaryTrace):
        return trace_function(a, a.m_par, dom.perimeter)
    if callable(a):
        return a
    c = float(a)
    return lambda s: np.full(np.shape(s), c)


# ------------------------------------------------------------------ decomposition
def bulk_densities(field: Magnetization, ops: MaskOps | None = None):
    ops = ops or mask_ops(field.mask, field.grid.h)
    div = np.where(field.mask, divergence(field.values, ops), 0.0)
    gz = np.where(field.mask[..., None], gradient_par(field.values, ops), 0.0)
    return div, gz


def boundary_cell_potentials(field: Magnetization, dom: DomainGeometry, weights_fn, cells,
                             vector: bool, profile=None, eps: float = 0.0, n_nodes: int = 1024):
    """Layer (eps > 0) or boundary (eps = 0) potential at the selected cell centres."""
    X, Y = field.grid.centres()
    pts = np.stack([X[cells], Y[cells]], axis=1)
    if len(pts) == 0:
        return np.zeros((0, 2) if vector else 0)
    return layer_potential(dom, profile, eps, pts, a=weights_fn, vector=vector, n_nodes=n_nodes)


def decomposed_stray(field: Magnetization, dom: DomainGeometry, trace: BoundaryTrace | None = None,
                     method: str = "fft", n_nodes: int = 1024) -> StrayDecomposition:
    """Bulk-bulk and boundary-bulk pieces of V and Vtilde for a field on the domain."""
    if np.any(field.mask & (field.dist >= 0)):
        raise ValueError("decomposed_stray expects a field restricted to the domain (d < 0)")
    trace = trace or boundary_trace(field, dom)
    h = field.grid.h
    L = dom.perimeter
    div, gz = bulk_densities(field)
    Vbb = pair_energy(div, h, method)
    Vtbb = pair_energy(gz[..., 0], h, method) + pair_energy(gz[..., 1], h, method)
    a_perp = trace_function(trace, trace.m_perp_n, L)
    a_par = trace_function(trace, trace.m_par, L)
    cells = field.mask & (np.abs(div) > 0)
    P = boundary_cell_potentials(field, dom, a_perp, cells, False, n_nodes=n_nodes)
    Vbnd = h * h * fsum(div[cells] * P)
    cells = field.mask & (np.any(np.abs(gz) > 0, axis=-1))
    B = boundary_cell_potentials(field, dom, a_par, cells, True, n_nodes=n_nodes)
    Vtbnd = h * h * fsum(np.einsum("ij,ij->i", gz[cells], B))
    w = trace.weight
    return StrayDecomposition(
        V_bulk_bulk=Vbb, V_bnd_bulk=Vbnd, Vt_bulk_bulk=Vtbb, Vt_bnd_bulk=Vtbnd,
        bnd_norm_inplane=w * fsum(trace.m_perp_n ** 2),
        bnd_defect_outofplane=w * fsum(1.0 - trace.m_par ** 2),
    )


# ------------------------------------------------------------------ assembly
def total_G_eps(field: Magnetization, profile: CutoffProfile, dom: DomainGeometry, regime,
                eps: float | None = None, method: str = "fft") -> EnergyBreakdown:
    """G_eps = exchange + lambda dmi + gamma_eps W_eps on the grid, plus the regime offset.

    The offset is gamma_eps H^1(boundary) in the clamped local regime and
    (nu/2) D_eps in the clamped nonlocal regime, where D_eps is computed with
    the same grid arithmetic as Vtilde so that exact identities survive.
    """
    _regime_check(regime)
    eps = regime.eps if eps is None else eps
    layer = cutoff_on_grid(field, dom, profile, eps)
    ops = mask_ops(field.mask, field.grid.h)
    br = local_energies(field, profile, dom, eps, regime, layer=layer, ops=ops)
    V, Vt = stray_pair(field, profile, dom, eps, method, layer=layer, ops=ops)
    br.V_inplane, br.Vtilde_outofplane = V, Vt
    lneps = abs(math.log(eps))
    br.W_eps = (V - Vt) / (2.0 * lneps)
    pref = regime.stray_prefactor(eps)
    br.total_G_eps = br.exchange + regime.lam * br.dmi + pref * (V - Vt)
    br.offset = regime.offset(dom, lambda: D_eps_grid(field, dom, profile, eps, method))
    return br
