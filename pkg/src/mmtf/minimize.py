"""Projected gradient descent on the sphere for the discrete energies.

All functionals are written as explicit sparse-linear maps of the cell values,
so the gradient is the exact adjoint of the energy: the Dirichlet term is
|B m|^2 with the edge incidence matrix B, the charge densities are D m with
the same difference operators as in :mod:`mmtf.energy`, and the stray pairs
reuse the FFT kernel table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from .cutoff import CutoffProfile
from .energy import cutoff_on_grid, fsum, mask_ops, potential, trace_function
from .fields import Magnetization, project_to_sphere, trace_operator
from .geometry import DomainGeometry
from .layer import layer_potential
from .limits import CLAMP_TOL, InfeasibleBoundary, RegimeParams


class DivergentStep(RuntimeError):
    """The line search could not find a step that decreases the energy."""


@dataclass
class MinimizeOptions:
    step_rule: str = "backtracking"  # or "fixed"
    max_iter: int = 2000
    tol: float = 1e-6
    boundary: str = "free"  # free | clamped_up | clamped_down
    step: float | None = None  # continuous step; default h^2/8 (fixed) or 1.0 (backtracking)
    max_halvings: int = 50
    seed_tag: str = ""
    trial_step: str = "bb"  # first trial after an accepted step: "bb" or "double"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.boundary not in ("free", "clamped_up", "clamped_down"):
            raise ValueError(f"unknown boundary handling {self.boundary!r}")
        if self.trial_step not in ("bb", "double"):
            raise ValueError(f"unknown trial step {self.trial_step!r}")


def clamped_cells(field: Magnetization, width: float = 2.0) -> np.ndarray:
    """Masked cells within ``width`` cells of the boundary (d > -width h).

    With width 2 every cell in the bilinear stencil of the trace points is
    frozen, so the trace equals the clamp value exactly.
    """
    return field.mask & (field.dist > -width * field.grid.h)


class DiscreteFunctional:
    """Energy with cell weights c (exchange, DMI, anisotropy), Zeeman weight
    eta, stray densities rho = eta div m_perp + grad eta . m_perp and
    G = eta grad m_par + m_par grad eta, plus the limit-only boundary terms.

    Use :meth:`limit` for the four limit functionals on the domain and
    :meth:`regularized` for G_eps on Omega_eps.
    """

    def __init__(self, field: Magnetization, dom: DomainGeometry, regime: RegimeParams, *,
                 eta=None, grad_eta=None, stray_pref: float = 0.0, ks_gamma: float = 0.0,
                 b_nu: float = 0.0, b_sign: float | None = None, clamp_check: bool = False,
                 n_nodes: int | None = None):
        self.dom, self.regime = dom, regime
        self.grid = field.grid
        self.mask = field.mask
        self.shape = field.mask.shape
        h = field.grid.h
        self.h2 = h * h
        ops = mask_ops(field.mask, h)
        self.Dx, self.Dy = ops.Dx, ops.Dy
        n = field.mask.size
        e = ops.edges
        E = len(e)
        self.B = sp.csr_matrix((np.concatenate([np.ones(E), -np.ones(E)]),
                                (np.concatenate([np.arange(E)] * 2), np.concatenate([e[:, 0], e[:, 1]]))),
                               shape=(E, n))
        one = np.ones(self.shape)
        self.eta = np.where(field.mask, one if eta is None else eta, 0.0).ravel()
        self.c = self.eta ** 2
        self.edge_w = 0.5 * (self.c[e[:, 0]] + self.c[e[:, 1]])
        gx = np.zeros(n) if grad_eta is None else np.where(field.mask, grad_eta[..., 0], 0.0).ravel()
        gy = np.zeros(n) if grad_eta is None else np.where(field.mask, grad_eta[..., 1], 0.0).ravel()
        Eta = sp.diags(self.eta)
        self.Ax = (Eta @ self.Dx + sp.diags(gx)).tocsr()
        self.Ay = (Eta @ self.Dy + sp.diags(gy)).tocsr()
        self.stray_pref = stray_pref
        self.ks_gamma = ks_gamma
        self.b_nu = b_nu
        self.clamp_check = clamp_check
        self.T = None
        if ks_gamma != 0 or b_nu != 0 or clamp_check:
            self.nodes, self.T = trace_operator(field, dom, n_nodes)
            self.node_w = self.nodes.weight
        self.bx = self.by = None
        if b_nu != 0:
            self._init_b(field)

    # -------------------------------------------------------------- constructors
    @classmethod
    def limit(cls, field: Magnetization, dom: DomainGeometry, regime: RegimeParams, **kw):
        tag = regime.regime
        if field.dist is not None and np.any(field.mask & (field.dist >= 0)):
            raise ValueError("limit functionals take a field on the domain (d < 0)")
        args = dict(clamp_check=tag in ("ClampedLocal", "ClampedNonlocal"))
        if tag == "KS":
            args["ks_gamma"] = regime.gamma
        if tag == "ClampedNonlocal" and regime.nu != 0:
            args.update(stray_pref=0.5 * regime.nu, b_nu=regime.nu)
        args.update(kw)
        return cls(field, dom, regime, **args)

    @classmethod
    def regularized(cls, field: Magnetization, dom: DomainGeometry, profile: CutoffProfile,
                    regime: RegimeParams, eps: float | None = None, **kw):
        eps = regime.eps if eps is None else eps
        layer = cutoff_on_grid(field, dom, profile, eps)
        return cls(field, dom, regime, eta=layer.eta, grad_eta=layer.grad,
                   stray_pref=regime.stray_prefactor(eps), **kw)

    def _init_b(self, field):
        """b at all masked cells from the current trace of m_par (held fixed)."""
        tr = self.T @ field.values.reshape(-1, 3)[:, 2]
        self._check_clamp(tr)
        L = self.dom.perimeter
        s = np.concatenate([self.nodes.s, [L]])
        v = np.concatenate([tr, tr[:1]])
        a = lambda q: np.interp(np.mod(q, L), s, v)
        X, Y = self.grid.centres()
        pts = np.stack([X[self.mask], Y[self.mask]], axis=1)
        B = layer_potential(self.dom, None, 0.0, pts, a=a, vector=True,
                            n_nodes=max(1024, len(self.nodes.s)))
        bx = np.zeros(self.shape)
        by = np.zeros(self.shape)
        bx[self.mask], by[self.mask] = B[:, 0], B[:, 1]
        self.bx, self.by = bx.ravel(), by.ravel()

    def _check_clamp(self, mz_trace):
        if not (np.all(mz_trace >= CLAMP_TOL) or np.all(mz_trace <= -CLAMP_TOL)):
            raise InfeasibleBoundary("trace is not clamped to +-e3")

    # -------------------------------------------------------------- evaluation
    def energy_and_gradient(self, values: np.ndarray):
        """Energy and its Euclidean gradient with respect to the cell values."""
        m = values.reshape(-1, 3)
        mx, my, mz = m[:, 0], m[:, 1], m[:, 2]
        h2 = self.h2
        reg = self.regime
        g = np.zeros_like(m)
        parts = {}

        # exchange: sum_e w_e |m_i - m_j|^2
        Bm = self.B @ m
        parts["exchange"] = fsum(self.edge_w[:, None] * Bm * Bm)
        g += 2.0 * (self.B.T @ (self.edge_w[:, None] * Bm))

        # DMI: h^2 sum c (mz div m_perp - m_perp . grad mz)
        c = self.c
        div = self.Dx @ mx + self.Dy @ my
        gzx, gzy = self.Dx @ mz, self.Dy @ mz
        parts["dmi"] = h2 * fsum(c * (mz * div - mx * gzx - my * gzy))
        if reg.lam != 0:
            lam = reg.lam * h2
            g[:, 0] += lam * (self.Dx.T @ (c * mz) - c * gzx)
            g[:, 1] += lam * (self.Dy.T @ (c * mz) - c * gzy)
            g[:, 2] += lam * (c * div - self.Dx.T @ (c * mx) - self.Dy.T @ (c * my))

        parts["anisotropy"] = reg.alpha * h2 * fsum(c * (mx * mx + my * my))
        g[:, 0] += 2 * reg.alpha * h2 * c * mx
        g[:, 1] += 2 * reg.alpha * h2 * c * my
        parts["zeeman"] = -2 * reg.beta_z * h2 * fsum(self.eta * mz)
        g[:, 2] += -2 * reg.beta_z * h2 * self.eta

        if self.stray_pref != 0:
            h = self.grid.h
            rho = (self.Ax @ mx + self.Ay @ my).reshape(self.shape)
            Gx = (self.Ax @ mz).reshape(self.shape)
            Gy = (self.Ay @ mz).reshape(self.shape)
            prho = potential(rho, h).ravel()
            pgx = potential(Gx, h).ravel()
            pgy = potential(Gy, h).ravel()
            V = h2 * fsum(rho.ravel() * prho)
            Vt = h2 * (fsum(Gx.ravel() * pgx) + fsum(Gy.ravel() * pgy))
            parts["V"], parts["Vt"] = V, Vt
            k = self.stray_pref * 2 * h2
            g[:, 0] += k * (self.Ax.T @ prho)
            g[:, 1] += k * (self.Ay.T @ prho)
            g[:, 2] -= k * (self.Ax.T @ pgx + self.Ay.T @ pgy)
        else:
            V = Vt = 0.0

        bnd = 0.0
        if self.T is not None and (self.ks_gamma != 0 or self.clamp_check):
            tr = self.T @ m
            if self.clamp_check:
                self._check_clamp(tr[:, 2])
            if self.ks_gamma != 0:
                nrm = self.nodes.normals
                mn = tr[:, 0] * nrm[:, 0] + tr[:, 1] * nrm[:, 1]
                w = self.ks_gamma * self.node_w
                bnd = w * fsum(mn * mn - tr[:, 2] ** 2)
                gt = np.stack([2 * w * mn * nrm[:, 0], 2 * w * mn * nrm[:, 1], -2 * w * tr[:, 2]], axis=1)
                g += self.T.T @ gt
        parts["boundary"] = bnd

        bterm = 0.0
        if self.b_nu != 0:
            bterm = self.b_nu * h2 * fsum(gzx * self.bx + gzy * self.by)
            g[:, 2] += self.b_nu * h2 * (self.Dx.T @ self.bx + self.Dy.T @ self.by)
        parts["b_term"] = bterm

        E = (parts["exchange"] + reg.lam * parts["dmi"] + parts["anisotropy"] + parts["zeeman"]
             + self.stray_pref * (V - Vt) + bnd + bterm)
        g[~self.mask.ravel()] = 0.0
        return E, g.reshape(values.shape), parts

    def energy(self, values) -> float:
        return self.energy_and_gradient(values)[0]


def tangential(values, g):
    return g - np.sum(g * values, axis=-1, keepdims=True) * values


def energy_and_gradient(field: Magnetization, functional: DiscreteFunctional):
    """(E, g, g_tan) with g the Euclidean gradient and g_tan = g - (g.m) m."""
    E, g, _ = functional.energy_and_gradient(field.values)
    return E, g, tangential(field.values, g)


@dataclass
class MinimizeResult:
    field: Magnetization
    history: list = dc_field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def minimize(field0: Magnetization, functional: DiscreteFunctional,
             opts: MinimizeOptions | None = None) -> MinimizeResult:
    """Projected gradient descent m <- (m - tau g_tan / h^2) / |...|.

    ``tau`` is the step in continuous units (g / h^2 approximates the L^2
    gradient). The fixed rule caps tau at h^2/8; backtracking halves tau
    until the energy does not increase (Armijo with constant 1e-4). The first
    trial after an accepted step is either the Barzilai-Borwein step
    h^2 (s.s)/(s.y) (``trial_step="bb"``, capped at 100 times the previous
    step) or twice the previous step. Frozen cells never change.
    """
    opts = opts or MinimizeOptions()
    h2 = field0.grid.h ** 2
    frozen = np.zeros(field0.mask.shape, dtype=bool)
    m = field0.values.copy()
    if opts.boundary != "free":
        sgn = 1.0 if opts.boundary == "clamped_up" else -1.0
        frozen = clamped_cells(field0)
        if not np.all(m[frozen, 2] == sgn):
            raise InfeasibleBoundary("initial field does not satisfy the clamped boundary")
    free = field0.mask & ~frozen
    tau_max = h2 / 8 if opts.step_rule == "fixed" else math.inf
    tau = min(opts.step if opts.step is not None else (h2 / 8 if opts.step_rule == "fixed" else 1e-2),
              tau_max)

    def egrad(v):
        E, g, _ = functional.energy_and_gradient(v)
        gt = tangential(v, g)
        gt[~free] = 0.0
        return E, gt

    def step_to(v, gt, t):
        w = v.copy()
        w[free] = v[free] - (t / h2) * gt[free]
        w[free] /= np.linalg.norm(w[free], axis=-1, keepdims=True)
        return w

    E, gt = egrad(m)
    history = [E]
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        gnorm2 = float(np.sum(gt * gt))
        if math.sqrt(gnorm2 / h2) < opts.tol:
            converged = True
            it -= 1
            break
        if opts.step_rule == "fixed":
            m = step_to(m, gt, tau)
            E, gt = egrad(m)
        else:
            for _ in range(opts.max_halvings):
                trial = step_to(m, gt, tau)
                E_new, gt_new = egrad(trial)
                if E_new <= E - 1e-4 * (tau / h2) * gnorm2:
                    break
                tau *= 0.5
            else:
                if E_new <= E:
                    # progress is below round-off: accept and stop
                    m, E, gt = trial, E_new, gt_new
                    history.append(E)
                    converged = True
                    break
                raise DivergentStep("line search failed to decrease the energy")
            sk, yk = trial - m, gt_new - gt
            m, E, gt = trial, E_new, gt_new
            sy = float(np.sum(sk * yk))
            if opts.trial_step == "bb" and sy > 0:
                tau = min(h2 * float(np.sum(sk * sk)) / sy, 100.0 * tau)
            else:
                tau *= 2.0
        history.append(E)
    out = Magnetization(field0.grid, m, field0.mask, field0.dist)
    return MinimizeResult(out, history, converged, it)
