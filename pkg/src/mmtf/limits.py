"""Limit functionals, parameter scaling, recovery sequences and epsilon sweeps.

Four regimes are distinguished by how the stray-field strength gamma_eps
behaves as eps -> 0:

* ``GJ``: gamma_eps -> 0 (default schedule 1 / |ln eps|).
* ``KS``: gamma_eps = gamma fixed.
* ``ClampedLocal``: gamma_eps -> inf with gamma_eps / |ln eps| -> 0
  (default schedule |ln eps|^(1/2)).
* ``ClampedNonlocal``: gamma_eps = nu |ln eps|.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .cutoff import CutoffProfile, check_eps
from .energy import (D_eps, D_eps_grid, MaskOps, bulk_densities, decomposed_stray, dmi_energy,
                     exchange_energy, fsum, mask_ops, pair_energy, total_G_eps, trace_function)
from .fields import BoundaryTrace, Magnetization, boundary_trace, interpolate, make_field
from .geometry import DomainGeometry, locate
from .layer import LayerPairIntegrator, layer_potential

REGIMES = ("GJ", "KS", "ClampedLocal", "ClampedNonlocal")
ALIASES = {"gj": "GJ", "ks": "KS", "clamped": "ClampedLocal", "clampedlocal": "ClampedLocal",
           "nonlocal": "ClampedNonlocal", "clampednonlocal": "ClampedNonlocal"}

CLAMP_TOL = 0.999

SCHEDULES: dict[str, Callable[[float], float]] = {
    "inv_log": lambda eps: 1.0 / abs(math.log(eps)),
    "sqrt_log": lambda eps: math.sqrt(abs(math.log(eps))),
}


class InfeasibleBoundary(ValueError):
    """The trace violates the clamped boundary condition; the functional is +inf."""


def regime_tag(name: str) -> str:
    if name in REGIMES:
        return name
    key = name.lower().replace("_", "").replace("-", "")
    if key not in ALIASES:
        raise ValueError(f"unknown regime {name!r}")
    return ALIASES[key]


@dataclass
class PhysicalParams:
    """Quality factor Q, reduced field h, DMI strength kappa and film thickness delta."""

    Q: float
    h: float
    kappa: float
    delta: float
    dilation: float = float("nan")  # delta / eps, the scale of the physical domain


@dataclass
class RegimeParams:
    regime: str
    alpha: float = 0.0
    beta_z: float = 0.0
    lam: float = 0.0
    gamma: float | None = None
    nu: float | None = None
    schedule: str | Callable[[float], float] | None = None
    eps: float | None = None
    physical: PhysicalParams | None = None

    def __post_init__(self):
        self.regime = regime_tag(self.regime)
        if self.regime in ("GJ", "ClampedLocal") and self.schedule is None and self.gamma is None \
                and self.nu is None:
            self.schedule = "inv_log" if self.regime == "GJ" else "sqrt_log"
        given = [k for k in ("gamma", "nu", "schedule") if getattr(self, k) is not None]
        want = {"GJ": "schedule", "KS": "gamma", "ClampedLocal": "schedule",
                "ClampedNonlocal": "nu"}[self.regime]
        if given != [want]:
            raise ValueError(f"regime {self.regime} takes exactly `{want}`, got {given or 'none'}")
        if isinstance(self.schedule, str) and self.schedule not in SCHEDULES:
            raise ValueError(f"unknown gamma_eps schedule {self.schedule!r}")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.nu is not None and not self.nu >= 0:
            raise ValueError("nu must be nonnegative")
        if self.eps is not None and not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")

    def at(self, eps: float) -> "RegimeParams":
        return RegimeParams(self.regime, self.alpha, self.beta_z, self.lam, self.gamma, self.nu,
                            self.schedule, eps, None)

    def gamma_eps(self, eps: float | None = None) -> float:
        eps = self.eps if eps is None else eps
        if self.gamma is not None:
            return float(self.gamma)
        if self.nu is not None:
            return self.nu * abs(math.log(eps))
        fn = SCHEDULES[self.schedule] if isinstance(self.schedule, str) else self.schedule
        return float(fn(eps))

    def stray_prefactor(self, eps: float | None = None) -> float:
        """gamma_eps / (2 |ln eps|), the factor in front of V - Vtilde."""
        eps = self.eps if eps is None else eps
        if self.nu is not None:
            return 0.5 * self.nu
        return self.gamma_eps(eps) / (2.0 * abs(math.log(eps)))

    def offset(self, dom: DomainGeometry, d_eps: Callable[[], float] | float, eps=None) -> float:
        if self.regime == "ClampedLocal":
            return self.gamma_eps(eps) * dom.perimeter
        if self.regime == "ClampedNonlocal":
            return 0.5 * self.nu * (d_eps() if callable(d_eps) else d_eps)
        return 0.0


# ------------------------------------------------------------------ scaling maps
def scaling_map(direction: str, regime: RegimeParams | str, inputs: dict, eps: float):
    """Map reduced constants to physical ones (``forward``) or back (``inverse``).

    With c = eps |ln eps| / (2 pi gamma_eps): Q = 1 + c alpha, h = c beta,
    kappa = c^(1/2) lambda and delta = (2 pi eps gamma_eps / |ln eps|)^(1/2).
    In the nu regime gamma_eps = nu |ln eps| and c = eps / (2 pi nu).
    ``inputs`` holds alpha, beta_z, lam and gamma or nu (forward) or Q, h,
    kappa, delta (inverse); the inverse returns the strength in whichever of
    gamma / nu the regime uses.
    """
    if not 0 < eps < 1:
        raise ValueError("scaling maps need 0 < eps < 1")
    lne = abs(math.log(eps))
    tag = regime_tag(regime.regime if isinstance(regime, RegimeParams) else regime)
    use_nu = tag == "ClampedNonlocal"
    if direction == "forward":
        if use_nu:
            nu = float(inputs["nu"])
            if not nu > 0:
                raise ValueError("nu must be positive")
            c = eps / (2 * math.pi * nu)
            delta = math.sqrt(2 * math.pi * eps * nu)
            kw = {"nu": nu}
        else:
            g = float(inputs["gamma"])
            if not g > 0:
                raise ValueError("gamma must be positive")
            c = eps * lne / (2 * math.pi * g)
            delta = math.sqrt(2 * math.pi * eps * g / lne)
            kw = {"gamma": g} if tag == "KS" else {"schedule": lambda e, g=g: g}
        alpha = float(inputs.get("alpha", 0.0))
        beta = float(inputs.get("beta_z", 0.0))
        lam = float(inputs.get("lam", 0.0))
        phys = PhysicalParams(1 + c * alpha, c * beta, math.sqrt(c) * lam, delta, delta / eps)
        return RegimeParams(tag, alpha, beta, lam, eps=eps, physical=phys, **kw)
    if direction == "inverse":
        Q, hh, kap, delta = (float(inputs[k]) for k in ("Q", "h", "kappa", "delta"))
        if not delta > 0:
            raise ValueError("delta must be positive")
        c = eps * eps / (delta * delta)
        gam = delta * delta * lne / (2 * math.pi * eps)
        phys = PhysicalParams(Q, hh, kap, delta, delta / eps)
        kw = {"nu": gam / lne} if use_nu else (
            {"gamma": gam} if tag == "KS" else {"schedule": lambda e, g=gam: g})
        return RegimeParams(tag, (Q - 1) / c, hh / c, kap / math.sqrt(c), eps=eps, physical=phys, **kw)
    raise ValueError(f"direction must be 'forward' or 'inverse', not {direction!r}")


# ------------------------------------------------------------------ limit functionals
def clamp_sign(trace: BoundaryTrace, tol: float = CLAMP_TOL) -> float:
    """+1 or -1 if the trace is clamped to +-e3; raises otherwise."""
    if np.all(trace.m_par >= tol):
        return 1.0
    if np.all(trace.m_par <= -tol):
        return -1.0
    raise InfeasibleBoundary(
        f"trace is not clamped: m_par ranges over [{trace.m_par.min():.4g}, {trace.m_par.max():.4g}]")


@dataclass
class LimitParts:
    dirichlet: float
    dmi: float
    anisotropy: float
    zeeman: float
    boundary: float = 0.0
    b_term: float = 0.0
    V_bulk: float = 0.0
    Vt_bulk: float = 0.0
    total: float = 0.0


def limit_parts(field: Magnetization, regime: RegimeParams, dom: DomainGeometry,
                trace: BoundaryTrace | None = None, method: str = "fft",
                ops: MaskOps | None = None, decomposition=None) -> LimitParts:
    if field.dist is not None and np.any(field.mask & (field.dist >= 0)):
        raise ValueError("limit functionals take a field on the domain (d < 0)")
    ops = ops or mask_ops(field.mask, field.grid.h)
    m = field.values
    h2 = field.grid.h ** 2
    p = LimitParts(
        dirichlet=exchange_energy(m, ops),
        dmi=dmi_energy(m, ops),
        anisotropy=regime.alpha * h2 * fsum(np.einsum("ijk,ijk->ij", m[..., :2], m[..., :2])),
        zeeman=-2.0 * regime.beta_z * h2 * fsum(m[..., 2]),
    )
    tag = regime.regime
    if tag != "GJ":
        trace = trace or boundary_trace(field, dom)
    if tag == "KS":
        p.boundary = regime.gamma * trace.weight * fsum(trace.m_perp_n ** 2 - trace.m_par ** 2)
    elif tag in ("ClampedLocal", "ClampedNonlocal"):
        clamp_sign(trace)
    if tag == "ClampedNonlocal" and regime.nu != 0:
        dec = decomposition or decomposed_stray(field, dom, trace, method)
        p.b_term = regime.nu * dec.Vt_bnd_bulk
        p.V_bulk = 0.5 * regime.nu * dec.V_bulk_bulk
        p.Vt_bulk = -0.5 * regime.nu * dec.Vt_bulk_bulk
    p.total = p.dirichlet + regime.lam * p.dmi + p.boundary + p.b_term + p.V_bulk + p.Vt_bulk
    return p


def limit_energy(field: Magnetization, regime: RegimeParams, dom: DomainGeometry,
                 trace: BoundaryTrace | None = None, method: str = "fft",
                 include_perturbations: bool = False) -> float:
    """Value of the regime's limit functional.

    GJ: Dirichlet + lambda DMI. KS adds gamma int ((m_perp.n)^2 - m_par^2) dH^1.
    ClampedLocal is GJ restricted to traces m_par = +-1. ClampedNonlocal adds
    nu int b . grad m_par + (nu/2) V_OmegaOmega - (nu/2) Vtilde_OmegaOmega.
    Anisotropy and Zeeman are added when ``include_perturbations`` is set.
    """
    p = limit_parts(field, regime, dom, trace, method)
    return p.total + (p.anisotropy + p.zeeman if include_perturbations else 0.0)


# ------------------------------------------------------------------ recovery sequences
def recovery_sequence(field: Magnetization, dom: DomainGeometry, eps: float,
                      mode: str = "reflect") -> Magnetization:
    """Extend a field on the domain to Omega_eps on the same grid.

    ``reflect`` sets m(x) = m(pi(x) - max(d(x), h) n(pi(x))) in the layer
    (bilinear interpolation, renormalized); ``constant_e3`` fills the layer with the
    clamped value +-e3. Cells inside the domain are copied bit for bit.
    """
    check_eps(dom, eps)
    X, Y = field.grid.centres()
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    loc = locate(dom, pts)
    d = loc.d.reshape(X.shape)
    layer = (d >= 0) & (d < eps)
    vals = field.values.copy()
    if mode == "reflect":
        if not eps < 0.5 * dom.eps_bar:
            raise ValueError("reflection needs eps < eps_bar / 2")
        sel = layer.ravel()
        # mirror image p - d n, taken at least one cell deep so the
        # interpolation stencil lies inside the mask
        depth = np.maximum(loc.d[sel], field.grid.h)
        y = loc.p[sel] - depth[:, None] * loc.n[sel]
        v = interpolate(field, y)
        vals[layer] = v / np.linalg.norm(v, axis=1, keepdims=True)
    elif mode == "constant_e3":
        sgn = clamp_sign(boundary_trace(field, dom))
        vals[layer] = (0.0, 0.0, sgn)
    else:
        raise ValueError(f"unknown recovery mode {mode!r}")
    return Magnetization(field.grid, vals, field.mask | layer, d)


# ------------------------------------------------------------------ sweeps
@dataclass
class SweepRow:
    eps: float
    G_eps: float
    offset: float
    limit: float
    gap: float
    R_perp: float
    R_par: float
    gap_unperturbed: float = float("nan")
    parts: dict = dc_field(default_factory=dict)


CSV_COLUMNS = ("eps", "G_eps", "offset", "limit", "gap", "R_perp", "R_par")


def sweep_csv(rows, header: str | None = None) -> str:
    buf = io.StringIO()
    if header:
        for ln in header.splitlines():
            buf.write("# " + ln + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([f"{getattr(r, c):.17g}" for c in CSV_COLUMNS])
    return buf.getvalue()


def _profile_moments(profile: CutoffProfile, n: int = 64):
    """int_0^1 eta^2 (1 + s t) and int_0^1 eta (1 + s t) split into (const, t) parts."""
    z, w = np.polynomial.legendre.leggauss(n)
    t, w = 0.5 * (z + 1), 0.5 * w
    e = profile.eta(t)
    return (float(np.sum(w * e * e)), float(np.sum(w * e * e * t)),
            float(np.sum(w * e)), float(np.sum(w * e * t)))


def _periodic_derivative(v, ds):
    return (np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0)) / (2 * ds)


class LayerSweep:
    """G_eps of a field on the domain extended into the layer, with the layer
    handled in boundary coordinates so that eps far below the grid spacing is
    accessible.

    In the layer the field is the boundary trace extended constantly along the
    normals (or +-e3 in ``constant_e3`` mode). The tangential in-layer charges
    eta div m_perp and eta d_s m_par are O(eps) in area and are not included
    in the stray terms; they vanish for clamped and for uniform traces.
    """

    def __init__(self, field: Magnetization, dom: DomainGeometry, profile: CutoffProfile,
                 mode: str = "normal", n_nodes: int = 1024, method: str = "fft", n_z: int = 12):
        if field.dist is None or np.any(field.mask & (field.dist >= 0)):
            raise ValueError("sweeps take a field on the domain (d < 0)")
        self.field, self.dom, self.profile = field, dom, profile
        self.method, self.n_z = method, n_z
        self.ops = mask_ops(field.mask, field.grid.h)
        self.trace = boundary_trace(field, dom, n_nodes)
        self.pair = LayerPairIntegrator(dom, n_nodes)
        tr = self.trace
        L = dom.perimeter
        if mode == "constant_e3":
            sgn = clamp_sign(tr)
            self.layer_vals = np.tile([0.0, 0.0, sgn], (n_nodes, 1))
        elif mode == "normal":
            mv = np.stack([tr.m_perp_n * tr.normals[:, 0] + tr.m_perp_t * tr.tangents[:, 0],
                           tr.m_perp_n * tr.normals[:, 1] + tr.m_perp_t * tr.tangents[:, 1],
                           tr.m_par], axis=1)
            self.layer_vals = mv / np.linalg.norm(mv, axis=1, keepdims=True)
        else:
            raise ValueError(f"unknown layer mode {mode!r}")
        lv = self.layer_vals
        self.a_perp = np.einsum("ij,ij->i", lv[:, :2], tr.normals)
        self.a_par = lv[:, 2]
        self.kap = self.pair.nodes.curvature
        # Tangential derivatives of the layer field along the boundary.
        dm = _periodic_derivative(lv, tr.weight)
        self.dm2 = np.einsum("ij,ij->i", dm, dm)
        self.dmi_line = lv[:, 2] * np.einsum("ij,ij->i", dm[:, :2], tr.tangents) \
            - np.einsum("ij,ij->i", lv[:, :2], tr.tangents) * dm[:, 2]
        self.perp2 = np.einsum("ij,ij->i", lv[:, :2], lv[:, :2])

        h = field.grid.h
        self.div, self.gz = bulk_densities(field, self.ops)
        self.V_bb = pair_energy(self.div, h, method)
        self.Vt_bb = pair_energy(self.gz[..., 0], h, method) + pair_energy(self.gz[..., 1], h, method)
        X, Y = field.grid.centres()
        self.cells_div = field.mask & (np.abs(self.div) > 0)
        self.cells_gz = field.mask & np.any(np.abs(self.gz) > 0, axis=-1)
        self.pts_div = np.stack([X[self.cells_div], Y[self.cells_div]], axis=1)
        self.pts_gz = np.stack([X[self.cells_gz], Y[self.cells_gz]], axis=1)
        self.fa_perp = trace_function(tr, self.a_perp, L)
        self.fa_par = trace_function(tr, self.a_par, L)
        # eps-independent boundary-bulk pieces (eps = 0 potentials)
        self.V_bnd = self._cross(0.0, None, perp=True)
        self.Vt_bnd = self._cross(0.0, None, perp=False)
        self.bnd_norm = tr.weight * fsum(tr.m_perp_n ** 2)
        self.bnd_defect = tr.weight * fsum(1.0 - tr.m_par ** 2)

    def _cross(self, eps, profile, perp: bool) -> float:
        """int_Omega div m_perp P[m_perp.n] or int_Omega grad m_par . P[m_par n]."""
        h2 = self.field.grid.h ** 2
        if perp:
            if len(self.pts_div) == 0:
                return 0.0
            P = layer_potential(self.dom, profile, eps, self.pts_div, a=self.fa_perp,
                                n_nodes=self.pair.N, n_z=self.n_z)
            return h2 * fsum(self.div[self.cells_div] * P)
        if len(self.pts_gz) == 0:
            return 0.0
        P = layer_potential(self.dom, profile, eps, self.pts_gz, a=self.fa_par, vector=True,
                            n_nodes=self.pair.N, n_z=self.n_z)
        return h2 * fsum(np.einsum("ij,ij->i", self.gz[self.cells_gz], P))

    def D_eps(self, eps: float) -> float:
        return self.pair.integrate(self.profile, eps)

    def evaluate(self, regime: RegimeParams, eps: float) -> SweepRow:
        check_eps(self.dom, eps)
        lne = abs(math.log(eps))
        w = self.trace.weight
        e2, e2t, e1, e1t = _profile_moments(self.profile)
        # layer local terms in (s, t): area element eps (1 + eps t kappa) ds dt
        ex_layer = eps * self._eta2_weighted(eps, self.dm2, inverse_jac=True)
        dmi_layer = eps * e2 * w * fsum(self.dmi_line)
        an_layer = regime.alpha * eps * w * fsum(self.perp2 * (e2 + eps * e2t * self.kap))
        ze_layer = -2 * regime.beta_z * eps * w * fsum(self.layer_vals[:, 2] * (e1 + eps * e1t * self.kap))

        f = self.field
        h2 = f.grid.h ** 2
        m = f.values
        ex_bulk = exchange_energy(m, self.ops)
        dmi_bulk = dmi_energy(m, self.ops)
        an_bulk = regime.alpha * h2 * fsum(np.einsum("ijk,ijk->ij", m[..., :2], m[..., :2]))
        ze_bulk = -2 * regime.beta_z * h2 * fsum(m[..., 2])

        # stray terms: bulk-bulk + 2 bulk-layer + layer-layer
        X_perp = -self._cross(eps, self.profile, perp=True)
        X_par = -self._cross(eps, self.profile, perp=False)
        L_perp = self.pair.integrate(self.profile, eps, a=self.a_perp, dot_normals=False) \
            if np.any(self.a_perp != 0) else 0.0
        D = self.D_eps(eps)
        # For a clamped layer a_par^2 = 1 and the integral is D_eps bit for bit.
        L_par = D if np.all(self.a_par * self.a_par == 1.0) else \
            self.pair.integrate(self.profile, eps, a=self.a_par, dot_normals=True)
        V = self.V_bb + 2 * X_perp + L_perp
        Vt = self.Vt_bb + 2 * X_par + L_par

        pref = regime.stray_prefactor(eps)
        G = ex_bulk + ex_layer + regime.lam * (dmi_bulk + dmi_layer) + pref * (V - Vt)
        pert = an_bulk + an_layer + ze_bulk + ze_layer
        offset = regime.offset(self.dom, D, eps)
        lp = limit_parts(f, regime, self.dom, self.trace, self.method, self.ops,
                         decomposition=_Dec(self.V_bb, self.V_bnd, self.Vt_bb, self.Vt_bnd))
        limit0 = lp.total
        limit = limit0 + lp.anisotropy + lp.zeeman
        R_perp = V - self.V_bb + 2 * self.V_bnd - 2 * lne * self.bnd_norm
        R_par = Vt - self.Vt_bb + 2 * self.Vt_bnd - D + 2 * lne * self.bnd_defect
        gap0 = G + offset - limit0
        return SweepRow(eps, G + pert, offset, limit, (G + pert) + offset - limit, R_perp, R_par,
                        gap_unperturbed=gap0,
                        parts=dict(V=V, Vt=Vt, D_eps=D, exchange_layer=ex_layer, dmi_layer=dmi_layer,
                                   X_perp=X_perp, X_par=X_par, L_perp=L_perp, L_par=L_par))

    def _eta2_weighted(self, eps, g, inverse_jac):
        z, wq = np.polynomial.legendre.leggauss(32)
        t, wq = 0.5 * (z + 1), 0.5 * wq
        e2 = self.profile.eta(t) ** 2
        jac = 1 + eps * np.outer(t, self.kap)
        fac = 1 / jac if inverse_jac else jac
        return self.trace.weight * fsum((wq * e2)[:, None] * fac * g[None, :])


@dataclass
class _Dec:
    V_bulk_bulk: float
    V_bnd_bulk: float
    Vt_bulk_bulk: float
    Vt_bnd_bulk: float


def gamma_sweep(field: Magnetization, dom: DomainGeometry, profile: CutoffProfile,
                regime: RegimeParams, eps_list, mode: str = "normal", path: str = "layer",
                n_nodes: int = 1024, method: str = "fft"):
    """Rows (eps, G_eps, offset, limit, gap, R_perp, R_par) along a decreasing eps list.

    ``path="layer"`` evaluates the layer in boundary coordinates (see
    :class:`LayerSweep`; ``mode`` is ``normal`` or ``constant_e3``).
    ``path="grid"`` builds the recovery sequence on the grid (``mode`` is
    ``reflect`` or ``constant_e3``) and needs at least 4 cells across eps.
    G_eps and limit include anisotropy and Zeeman; ``gap_unperturbed`` omits them.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing")
    for e in eps_list:
        check_eps(dom, e)
    if path == "layer":
        sw = LayerSweep(field, dom, profile, mode, n_nodes, method)
        return [sw.evaluate(regime.at(e), e) for e in eps_list]
    if path != "grid":
        raise ValueError(f"unknown sweep path {path!r}")
    if mode == "normal":
        mode = "reflect"
    rows = []
    trace = boundary_trace(field, dom)
    dec = decomposed_stray(field, dom, trace, method)
    lp = limit_parts(field, regime, dom, trace, method, decomposition=dec)
    for e in eps_list:
        reg = regime.at(e)
        ext = recovery_sequence(field, dom, e, mode)
        br = total_G_eps(ext, profile, dom, reg, e, method)
        lne = abs(math.log(e))
        D = D_eps_grid(ext, dom, profile, e, method)
        G = br.total_G_eps + br.anisotropy + br.zeeman
        lim = lp.total + lp.anisotropy + lp.zeeman
        R_perp = br.V_inplane - dec.V_bulk_bulk + 2 * dec.V_bnd_bulk - 2 * lne * dec.bnd_norm_inplane
        R_par = (br.Vtilde_outofplane - dec.Vt_bulk_bulk + 2 * dec.Vt_bnd_bulk - D
                 + 2 * lne * dec.bnd_defect_outofplane)
        rows.append(SweepRow(e, G, br.offset, lim, G + br.offset - lim, R_perp, R_par,
                             gap_unperturbed=br.total_G_eps + br.offset - lp.total,
                             parts=dict(V=br.V_inplane, Vt=br.Vtilde_outofplane, D_eps=D)))
    return rows
