"""Edge cutoff profiles eta and the rescaled family eta_eps = eta(d / eps)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DomainGeometry, OutsideTube, locate

# Declared integrability exponent for profiles with bounded derivative.
BOUNDED_Q = 1.0e6


@dataclass(frozen=True)
class CutoffProfile:
    kind: str
    a: float = 1.0
    q: float = BOUNDED_Q

    def eta(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        if self.kind == "linear":
            return 1.0 - t
        if self.kind == "smoothstep":
            return 1.0 - t * t * (3.0 - 2.0 * t)
        return (1.0 - t) ** self.a

    def deta(self, t):
        """eta'(t); zero outside (0, 1). The cusp derivative is -inf at t = 1."""
        t = np.asarray(t, dtype=float)
        inside = (t > 0.0) & (t < 1.0)
        tc = np.where(inside, t, 0.5)
        if self.kind == "linear":
            v = -np.ones_like(tc)
        elif self.kind == "smoothstep":
            v = -6.0 * tc * (1.0 - tc)
        else:
            v = -self.a * (1.0 - tc) ** (self.a - 1.0)
        return np.where(inside, v, 0.0)

    # The layer integrals are computed in the variable z in [0, 1] with
    # t = T(z) and |eta'(t)| dt = w(z) dz, chosen so that T and w are smooth.
    def layer_map(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "linear":
            return z, np.ones_like(z)
        if self.kind == "smoothstep":
            return z, 6.0 * z * (1.0 - z)
        return 1.0 - (1.0 - z) ** (1.0 / self.a), np.ones_like(z)

    def layer_inverse(self, t):
        """z with T(z) = t."""
        t = np.asarray(t, dtype=float)
        if self.kind in ("linear", "smoothstep"):
            return t
        return 1.0 - (1.0 - t) ** self.a


def make_profile(kind: str = "linear", a: float = 0.5) -> CutoffProfile:
    """Build a cutoff profile.

    ``power-cusp`` is eta(t) = (1 - t)^a on [0, 1] for 0 < a <= 1; its
    derivative lies in L^q for every q < 1/(1 - a). We record the midpoint of
    the admissible range (1, 1/(1 - a)) as the declared exponent.
    """
    if kind in ("linear", "smoothstep"):
        return CutoffProfile(kind=kind)
    if kind == "power-cusp":
        a = float(a)
        if not 0.0 < a <= 1.0:
            raise ValueError(f"cusp exponent must lie in (0, 1], got {a}")
        q = BOUNDED_Q if a == 1.0 else 0.5 * (1.0 + 1.0 / (1.0 - a))
        return CutoffProfile(kind=kind, a=a, q=q)
    raise ValueError(f"unknown cutoff profile {kind!r}")


def check_eps(dom: DomainGeometry, eps: float) -> None:
    if not 0.0 < eps < dom.eps_bar:
        raise OutsideTube(f"eps={eps} must lie in (0, eps_bar={dom.eps_bar})")


def eta_from_distance(profile: CutoffProfile, d, eps: float):
    """eta_eps and |grad eta_eps| given signed distances."""
    d = np.asarray(d, dtype=float)
    t = d / eps
    val = np.where(d <= 0, 1.0, np.where(d >= eps, 0.0, profile.eta(t)))
    g = -profile.deta(t) / eps
    return val, g


def cutoff_eval(profile: CutoffProfile, dom: DomainGeometry, eps: float, x):
    """eta_eps(x) and grad eta_eps(x) = eps^-1 eta'(d/eps) n(pi(x))."""
    check_eps(dom, eps)
    loc = locate(dom, x)
    val, g = eta_from_distance(profile, loc.d, eps)
    grad = -np.asarray(g)[..., None] * loc.n
    return val, grad
