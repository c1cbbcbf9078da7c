"""Planar C^2 domains: arc-length parameterization, signed distance, projection.

The boundary is traversed counterclockwise. ``n`` is the outward normal and
the curvature convention is ``tau' = -kappa n``, so a convex domain has
``kappa > 0``. The signed distance is negative inside the domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np
from scipy.spatial import cKDTree


class OutsideTube(ValueError):
    """A boundary projection was requested where it is not single-valued."""


class ResolutionError(ValueError):
    """A grid or quadrature rule is too coarse for the requested computation."""


# Fourier modes of the speed kept for the arc-length map; enough for the
# shapes we support to reach round-off.
_SPEED_SAMPLES = 4096
_SEARCH_SAMPLES = 8192


def _shape_functions(kind: str, params: dict):
    """Return phi, phi', phi'' as functions of the parameter t in [0, 2pi)."""
    if kind == "disk":
        r = float(params.get("r", params.get("a", 1.0)))
        if not r > 0:
            raise ValueError("disk radius must be positive")

        def phi(t):
            return np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)

        def dphi(t):
            return np.stack([-r * np.sin(t), r * np.cos(t)], axis=-1)

        def ddphi(t):
            return np.stack([-r * np.cos(t), -r * np.sin(t)], axis=-1)

        return phi, dphi, ddphi, {"r": r}

    if kind == "ellipse":
        a = float(params.get("a", 1.0))
        b = float(params.get("b", 1.0))
        if not (a > 0 and b > 0):
            raise ValueError("ellipse semi-axes must be positive")

        def phi(t):
            return np.stack([a * np.cos(t), b * np.sin(t)], axis=-1)

        def dphi(t):
            return np.stack([-a * np.sin(t), b * np.cos(t)], axis=-1)

        def ddphi(t):
            return np.stack([-a * np.cos(t), -b * np.sin(t)], axis=-1)

        return phi, dphi, ddphi, {"a": a, "b": b}

    if kind in ("star", "smooth-star"):
        a = float(params.get("a", 1.0))
        e = float(params.get("star_eps", params.get("eps", 0.1)))
        k = int(params.get("star_k", params.get("k", 5)))
        if not a > 0 or k < 1:
            raise ValueError("star needs a > 0 and integer frequency k >= 1")
        if abs(e) >= 1.0:
            raise ValueError(
                f"star amplitude {e} makes the radius vanish; the curve is not C^2 there"
            )

        def rr(t):
            return a * (1.0 + e * np.cos(k * t)), -a * e * k * np.sin(k * t), -a * e * k * k * np.cos(k * t)

        def phi(t):
            r, _, _ = rr(t)
            return np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)

        def dphi(t):
            r, r1, _ = rr(t)
            c, s = np.cos(t), np.sin(t)
            return np.stack([r1 * c - r * s, r1 * s + r * c], axis=-1)

        def ddphi(t):
            r, r1, r2 = rr(t)
            c, s = np.cos(t), np.sin(t)
            return np.stack([r2 * c - 2 * r1 * s - r * c, r2 * s + 2 * r1 * c - r * s], axis=-1)

        return phi, dphi, ddphi, {"a": a, "star_eps": e, "star_k": k}

    raise ValueError(f"unknown domain kind {kind!r}")


@dataclass
class BoundaryCurve:
    kind: str
    params: dict
    phi: Callable = field(repr=False)
    dphi: Callable = field(repr=False)
    ddphi: Callable = field(repr=False)
    arclength_total: float = 0.0
    max_curvature: float = 0.0
    _modes: np.ndarray = field(default=None, repr=False)
    _mean_speed: float = field(default=0.0, repr=False)

    # -- arc-length map -------------------------------------------------
    def arclength(self, t):
        """Arc length from t=0 to t (not reduced modulo the perimeter)."""
        t = np.asarray(t, dtype=float)
        k = np.arange(1, len(self._modes) + 1)
        ph = np.exp(1j * np.multiply.outer(t, k)) - 1.0
        corr = 2.0 * np.real(ph @ (self._modes / (1j * k)))
        return self._mean_speed * t + corr

    def speed(self, t):
        return np.linalg.norm(self.dphi(np.asarray(t, dtype=float)), axis=-1)

    def param_of(self, s):
        """Invert the arc-length map: t with arclength(t) = s mod L."""
        s = np.mod(np.asarray(s, dtype=float), self.arclength_total)
        t = s / self._mean_speed
        for _ in range(50):
            step = (self.arclength(t) - s) / self.speed(t)
            t = t - step
            if np.all(np.abs(step) < 1e-15):
                break
        return t

    # -- frame in terms of the parameter t ------------------------------
    def frame_t(self, t):
        t = np.asarray(t, dtype=float)
        p, d1, d2 = self.phi(t), self.dphi(t), self.ddphi(t)
        sp = np.linalg.norm(d1, axis=-1)
        tau = d1 / sp[..., None]
        nrm = np.stack([tau[..., 1], -tau[..., 0]], axis=-1)
        cross = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
        kappa = cross / sp**3
        return p, tau, nrm, kappa

    def nodes(self, n: int):
        """n points equispaced in arc length, starting at s=0."""
        s = np.arange(n) * (self.arclength_total / n)
        t = self.param_of(s)
        p, tau, nrm, kappa = self.frame_t(t)
        return BoundaryNodes(s=s, t=t, points=p, tangents=tau, normals=nrm,
                             curvature=kappa, weight=self.arclength_total / n)


class BoundaryNodes(NamedTuple):
    s: np.ndarray
    t: np.ndarray
    points: np.ndarray
    tangents: np.ndarray
    normals: np.ndarray
    curvature: np.ndarray
    weight: float


def _build_curve(kind: str, params: dict) -> BoundaryCurve:
    phi, dphi, ddphi, clean = _shape_functions(kind, params)
    t = np.arange(_SPEED_SAMPLES) * (2 * np.pi / _SPEED_SAMPLES)
    sp = np.linalg.norm(dphi(t), axis=-1)
    c = np.fft.rfft(sp) / _SPEED_SAMPLES
    mean = c[0].real
    modes = c[1:_SPEED_SAMPLES // 2]
    # FFT round-off fills the tail near 1e-16; modes below that carry no information
    keep = np.nonzero(np.abs(modes) > 1e-15 * mean)[0]
    modes = modes[: keep[-1] + 1] if len(keep) else modes[:0]
    curve = BoundaryCurve(kind=kind, params=clean, phi=phi, dphi=dphi, ddphi=ddphi,
                          arclength_total=2 * np.pi * mean, _modes=modes, _mean_speed=mean)
    _, _, _, kappa = curve.frame_t(t)
    curve.max_curvature = float(np.max(np.abs(kappa)))
    return curve


@dataclass
class DomainGeometry:
    boundary: BoundaryCurve
    eps_bar: float
    bounding_box: tuple  # (xmin, xmax, ymin, ymax)

    @property
    def perimeter(self) -> float:
        return self.boundary.arclength_total

    @property
    def diameter(self) -> float:
        x0, x1, y0, y1 = self.bounding_box
        return float(np.hypot(x1 - x0, y1 - y0))

    @cached_property
    def _search(self):
        t = np.arange(_SEARCH_SAMPLES) * (2 * np.pi / _SEARCH_SAMPLES)
        return t, cKDTree(self.boundary.phi(t))

    @cached_property
    def area(self) -> float:
        # Green's theorem with the spectrally accurate periodic trapezoid rule.
        t = np.arange(_SPEED_SAMPLES) * (2 * np.pi / _SPEED_SAMPLES)
        p, d = self.boundary.phi(t), self.boundary.dphi(t)
        return float(0.5 * np.mean(p[:, 0] * d[:, 1] - p[:, 1] * d[:, 0]) * 2 * np.pi)


def make_domain(kind: str, shape_params: dict | None = None, eps_cap: float = 0.25) -> DomainGeometry:
    """Build a domain of the given kind.

    ``eps_bar`` is the smaller of ``eps_cap`` and half the minimal radius of
    curvature, so the nearest-point projection is single valued on the tube.
    """
    curve = _build_curve(kind, dict(shape_params or {}))
    t = np.arange(_SEARCH_SAMPLES) * (2 * np.pi / _SEARCH_SAMPLES)
    pts = curve.phi(t)
    xmin, ymin = pts.min(axis=0)
    xmax, ymax = pts.max(axis=0)
    diam = float(np.hypot(xmax - xmin, ymax - ymin))
    if curve.max_curvature * diam > 1e4:
        raise ValueError("curvature too large for the boundary-layer computations")
    eps_bar = min(float(eps_cap), 0.5 / curve.max_curvature)
    return DomainGeometry(boundary=curve, eps_bar=eps_bar,
                          bounding_box=(float(xmin), float(xmax), float(ymin), float(ymax)))


class Location(NamedTuple):
    d: np.ndarray
    p: np.ndarray
    s: np.ndarray
    n: np.ndarray
    in_tube: np.ndarray


def locate(dom: DomainGeometry, x, require_projection: bool = False) -> Location:
    """Signed distance and nearest boundary point for one point or an (M, 2) array.

    The nearest point is seeded from a dense sample search and polished by
    Newton iteration on ``(x - phi(t)) . phi'(t) = 0``. ``in_tube`` marks points
    with ``|d| < eps_bar``; passing ``require_projection=True`` raises
    :class:`OutsideTube` if any point lies outside the tube.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    curve = dom.boundary
    ts, tree = dom._search
    _, idx = tree.query(xs)
    t = ts[idx].copy()
    max_step = 2 * np.pi / _SEARCH_SAMPLES
    active = np.ones(len(t), dtype=bool)
    for _ in range(40):
        ta = t[active]
        xa = xs[active]
        r = xa - curve.phi(ta)
        d1 = curve.dphi(ta)
        d2 = curve.ddphi(ta)
        F = np.einsum("ij,ij->i", r, d1)
        dF = -np.einsum("ij,ij->i", d1, d1) + np.einsum("ij,ij->i", r, d2)
        # Only take Newton steps toward a distance minimum; degenerate points
        # (centres of curvature) keep their sampled seed.
        step = np.where(dF < 0, -F / np.where(dF < 0, dF, -1.0), 0.0)
        step = np.clip(step, -max_step, max_step)
        ta = ta + step
        t[active] = ta
        done = np.abs(step) < 1e-15
        ai = np.nonzero(active)[0]
        active[ai[done]] = False
        if not active.any():
            break
    t = np.mod(t, 2 * np.pi)
    p, _, nrm, _ = curve.frame_t(t)
    d = np.einsum("ij,ij->i", xs - p, nrm)
    # Exact reconstruction: distance measured along the normal; any residual
    # tangential component is round-off from the Newton polish.
    s = np.mod(curve.arclength(t), curve.arclength_total)
    in_tube = np.abs(d) < dom.eps_bar
    if require_projection and not np.all(in_tube):
        raise OutsideTube("projection requested for a point outside the tubular neighbourhood")
    if single:
        return Location(d[0], p[0], s[0], nrm[0], bool(in_tube[0]))
    return Location(d, p, s, nrm, in_tube)


def signed_distance(dom: DomainGeometry, x) -> np.ndarray:
    return locate(dom, x).d


def boundary_frame(dom: DomainGeometry, s):
    """Point, unit tangent, outward normal and curvature at arc length s."""
    t = dom.boundary.param_of(s)
    return dom.boundary.frame_t(t)


def boundary_integral(dom: DomainGeometry, g, n: int = 1024) -> float:
    """Integral of g over the boundary with respect to arc length.

    ``g`` is either a callable taking ``BoundaryNodes`` fields ``(s, points)``
    and returning values, or an array of samples at ``len(g)`` points
    equispaced in arc length. The periodic trapezoid rule converges
    spectrally for smooth integrands.
    """
    if callable(g):
        nodes = dom.boundary.nodes(n)
        vals = np.asarray(g(nodes.s, nodes.points), dtype=float)
        w = nodes.weight
    else:
        vals = np.asarray(g, dtype=float)
        if vals.size == 0:
            raise ValueError("empty boundary sample set")
        w = dom.perimeter / vals.shape[0]
    return float(np.sum(vals, axis=0) * w)
