"""Boundary-layer integrals in tubular coordinates (s, t).

A point of the cutoff layer is X(s, t) = sigma(s) + eps t n(s) with area
element eps (1 + eps t kappa(s)) ds dt, and |grad eta_eps| = |eta'(t)| / eps.
Integrals against |eta'(t)| dt are taken in the profile variable z of
:meth:`CutoffProfile.layer_map`, which keeps the integrand smooth for cusp
profiles.

The 1/|x - y| kernel is nearly singular along the diagonal s = s'. We
subtract w / sqrt(w c(u)^2 + delta^2), where c(u) = (L/pi) sin(pi u / L) is the
chord of a circle with the same perimeter and w the local metric factor. Its
integral over one period is a complete elliptic integral of the first kind,
and what remains is bounded and integrated by the periodic trapezoid rule.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ellipkm1

from .cutoff import CutoffProfile
from .geometry import BoundaryNodes, DomainGeometry, ResolutionError, locate


def chord_integral(L: float, w, delta):
    """Integral over one period of 1 / sqrt(w c(u)^2 + delta^2); needs delta > 0."""
    A = w * (L / np.pi) ** 2
    r2 = A + delta * delta
    p = delta * delta / r2
    return (L / np.pi) * 2.0 * ellipkm1(p) / np.sqrt(r2)


def gauss01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def duffy_pairs(n_outer: int, n_inner: int, power: int = 3):
    """Nodes and weights for the integral of a symmetric function over [0,1]^2
    with a logarithmic singularity on the diagonal.

    Uses 2 * int_0^1 dz int_0^z dz' with z' = z (1 - y^power).
    """
    zo, wo = gauss01(n_outer)
    yi, wi = gauss01(n_inner)
    Z = np.repeat(zo, n_inner)
    Y = np.tile(yi, n_outer)
    Zp = Z * (1.0 - Y**power)
    W = 2.0 * np.repeat(wo, n_inner) * Z * power * Y ** (power - 1) * np.tile(wi, n_outer)
    return Z, Zp, W


def graded_toward(z0: float, n: int, power: int = 3):
    """Nodes/weights on [0, 1] clustered on both sides of z0 (a log singularity)."""
    y, wy = gauss01(n)
    zs, ws = [], []
    if z0 > 0:
        zs.append(z0 - z0 * y**power)
        ws.append(z0 * power * y ** (power - 1) * wy)
    if z0 < 1:
        zs.append(z0 + (1 - z0) * y**power)
        ws.append((1 - z0) * power * y ** (power - 1) * wy)
    return np.concatenate(zs), np.concatenate(ws)


class LayerPairIntegrator:
    """Double layer integrals

        I[a] = int int |eta'(t)| |eta'(t')| sum a(s) a(s') k(s, s') J / |X(s,t) - X(s',t')|

    with k = n(s).n(s') (``dot_normals``) or 1, J = (1 + eps t kappa)(1 + eps t' kappa').
    ``a`` is sampled at ``n_nodes`` arc-length nodes.
    """

    def __init__(self, dom: DomainGeometry, n_nodes: int = 1024):
        self.dom = dom
        self.nodes = dom.boundary.nodes(n_nodes)
        nd = self.nodes
        self.N = n_nodes
        self.L = dom.perimeter
        self.h = nd.weight
        dsig = nd.points[:, None, :] - nd.points[None, :, :]
        self.P0 = np.einsum("ijk,ijk->ij", dsig, dsig)
        self.Pi = np.einsum("ijk,ik->ij", dsig, nd.normals)
        self.Pj = np.einsum("ijk,jk->ij", dsig, nd.normals)
        self.Q = nd.normals @ nd.normals.T
        k = np.arange(n_nodes)
        u = (k[None, :] - k[:, None]) * self.h
        self.C2 = ((self.L / np.pi) * np.sin(np.pi * u / self.L)) ** 2
        self.offdiag = ~np.eye(n_nodes, dtype=bool)

    def integrate(self, profile: CutoffProfile, eps: float, a=None, dot_normals: bool = True,
                  n_outer: int = 40, n_inner: int = 40, n_outer_r: int = 8, n_inner_r: int = 8):
        if min(n_outer, n_inner, n_outer_r, n_inner_r) < 4:
            raise ResolutionError("fewer than 4 quadrature nodes across the layer")
        nd = self.nodes
        a = np.ones(self.N) if a is None else np.asarray(a, dtype=float)
        kap = nd.curvature
        h, L = self.h, self.L

        # Singular part: analytic chord integral, fine Duffy rule.
        Z, Zp, W = duffy_pairs(n_outer, n_inner)
        t, w1 = profile.layer_map(Z)
        tp, w2 = profile.layer_map(Zp)
        delta = eps * np.abs(t - tp)
        wloc = (1 + eps * np.outer(t, kap)) * (1 + eps * np.outer(tp, kap))
        S = h * np.sum((a * a)[None, :] * wloc * chord_integral(L, wloc, delta[:, None]), axis=1)
        sing = float(np.sum(W * w1 * w2 * S))

        # Bounded remainder, coarser Duffy rule; O(N^2) per node pair.
        Z, Zp, W = duffy_pairs(n_outer_r, n_inner_r)
        t, w1 = profile.layer_map(Z)
        tp, w2 = profile.layer_map(Zp)
        aa = np.outer(a, a)
        kern = self.Q if dot_normals else 1.0
        rem = 0.0
        for tt, ttp, ww in zip(t, tp, W * w1 * w2):
            d2 = (self.P0 + 2 * eps * (tt * self.Pi - ttp * self.Pj)
                  + eps * eps * (tt * tt + ttp * ttp - 2 * tt * ttp * self.Q))
            Jij = np.outer(1 + eps * tt * kap, 1 + eps * ttp * kap)
            wi = (1 + eps * tt * kap) * (1 + eps * ttp * kap)
            dl = eps * abs(tt - ttp)
            g = aa * Jij * kern / np.sqrt(np.where(self.offdiag, d2, 1.0))
            sub = (a * a * wi)[:, None] / np.sqrt(wi[:, None] * self.C2 + dl * dl + (~self.offdiag))
            r = np.where(self.offdiag, g - sub, 0.0)
            rem += ww * h * h * r.sum()
        return sing + rem


def _subtraction_terms(L, a0, kap0, d, et, c2):
    """Singular model for points in the tube: kernel values on the nodes and
    its exact integral over one period."""
    dl = np.abs(et - d)
    wj = 1 + et * kap0
    wm = wj * (1 + d * kap0)
    sub = (a0 * wj)[..., None] / np.sqrt(wm[..., None] * c2 + (dl * dl)[..., None])
    return sub, a0 * wj * chord_integral(L, wm, dl)


def layer_potential(dom: DomainGeometry, profile: CutoffProfile | None, eps: float, x,
                    a=None, vector: bool = False, n_nodes: int = 1024,
                    n_z: int = 24, aligned: bool = False, chunk: int = 256):
    """P(x) = int |eta'(t)| dt int ds (1 + eps t kappa) a(s) [n(s)] / |x - X(s, t)|.

    With ``eps = 0`` (or ``profile=None``) this is the boundary potential
    int a(s) [n(s)] / |x - sigma(s)| ds. ``a`` is a callable of arc length or
    None for a = 1; ``vector=True`` puts the normal n(s) in the integrand.

    ``aligned=True`` places the trapezoid nodes symmetrically about each
    point's projection and clusters the t-nodes at the point's own level, as
    needed for points inside the layer or on the boundary. The default
    vectorized path assumes points at d <= 0 (or far away) and clusters the
    t-nodes toward the boundary.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    M = len(x)
    L = dom.perimeter
    curve = dom.boundary
    loc = locate(dom, x)
    use_layer = profile is not None and eps > 0
    afun = (lambda s: np.ones_like(s)) if a is None else a
    out = np.zeros((M, 2) if vector else M)
    kap0_all = curve.frame_t(curve.param_of(loc.s))[3]
    a0_all = afun(loc.s)

    def trule(z0):
        if not use_layer:
            return np.zeros(1), np.ones(1)
        zq, wq = graded_toward(z0, n_z)
        tq, om = profile.layer_map(zq)
        return tq, wq * om

    def accumulate(sel, nd, A, tq, wq, zero_first):
        xs, d, tube = x[sel], loc.d[sel], loc.in_tube[sel]
        s0, n0, kap0, a0 = loc.s[sel], loc.n[sel], kap0_all[sel], a0_all[sel]
        u = np.mod(nd.s[None, :] - s0[:, None] + 0.5 * L, L) - 0.5 * L
        c2 = ((L / np.pi) * np.sin(np.pi * u / L)) ** 2
        acc = np.zeros((len(sel), 2) if vector else len(sel))
        for tt, ww in zip(tq, wq):
            et = eps * tt if use_layer else 0.0
            X = nd.points + et * nd.normals
            r = np.linalg.norm(xs[:, None, :] - X[None, :, :], axis=2)
            if zero_first:
                r[:, 0] = 1.0
            g = (A * (1 + et * nd.curvature))[None, :] / r
            sub, sub_int = _subtraction_terms(L, a0, kap0, d, et, c2)
            sub = np.where(tube[:, None], sub, 0.0)
            sub_int = np.where(tube, sub_int, 0.0)
            if vector:
                rem = g[..., None] * nd.normals[None] - sub[..., None] * n0[:, None, :]
                if zero_first:
                    rem[:, 0] = 0.0
                val = nd.weight * rem.sum(axis=1) + sub_int[:, None] * n0
            else:
                rem = g - sub
                if zero_first:
                    rem[:, 0] = 0.0
                val = nd.weight * rem.sum(axis=1) + sub_int
            acc += ww * val
        return acc

    if aligned:
        for k in range(M):
            s = loc.s[k] + np.arange(n_nodes) * (L / n_nodes)
            tpar = curve.param_of(s)
            p, tau, nrm, kap = curve.frame_t(tpar)
            nd = BoundaryNodes(s, tpar, p, tau, nrm, kap, L / n_nodes)
            dk = loc.d[k]
            if use_layer and loc.in_tube[k] and dk > -eps:
                z0 = float(profile.layer_inverse(np.clip(dk / eps, 0.0, 1.0)))
                # a node interval narrower than round-off would put nodes on the point itself
                z0 = 0.0 if z0 < 1e-9 else (1.0 if z0 > 1 - 1e-9 else z0)
            else:
                z0 = 0.0 if not use_layer or dk < 0.5 * eps else 1.0
            tq, wq = trule(z0)
            out[k] = accumulate(np.array([k]), nd, afun(np.mod(s, L)), tq, wq,
                                zero_first=bool(loc.in_tube[k]))[0]
        return out

    nd = curve.nodes(n_nodes)
    A = afun(nd.s)
    tq, wq = trule(0.0)
    # Points at least 20 eps away see a t-integrand that is smooth on the scale
    # of the layer, so a short Gauss rule in z is enough there.
    far = -loc.d >= 20 * eps if use_layer else np.zeros(M, dtype=bool)
    if use_layer:
        zf, wf = gauss01(6)
        tf, om = profile.layer_map(zf)
        rules = ((~far, (tq, wq)), (far, (tf, wf * om)))
    else:
        rules = ((~far, (tq, wq)),)
    for group, (tr, wr) in rules:
        idx = np.nonzero(group)[0]
        for start in range(0, len(idx), chunk):
            sel = idx[start:start + chunk]
            out[sel] = accumulate(sel, nd, A, tr, wr, zero_first=False)
    return out
