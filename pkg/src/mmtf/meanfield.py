"""Mean-field model behind the edge regularization.

The free energy of a spin density closes on the average magnetization through
the inverse Langevin function f, with L(f) = coth f - 1/f. Its local part is
the potential U_beta, which develops a nonzero well s0(beta) once
beta_T J0 > 3. Near an edge where the magnetization must vanish, the
one-dimensional gradient model has an explicit wall profile phi with
x(phi) = int_0^phi sqrt(g / (U(p) - U(s0))) dp, the first integral of
g phi'^2 = U(phi) - U(s0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicHermiteSpline

FOUR_PI = 4.0 * math.pi
CRITICAL_COUPLING = 3.0  # beta_T J0 at the bifurcation, from f'(0) = 3


# ------------------------------------------------------------------ Langevin inverse
def langevin(f):
    """L(f) = coth f - 1/f, with its Taylor series near 0."""
    f = np.asarray(f, dtype=float)
    small = np.abs(f) < 0.1
    fs = np.where(small, f, 1.0)
    big = 1.0 / np.tanh(np.where(small, 1.0, f)) - 1.0 / np.where(small, 1.0, f)
    f2 = fs * fs
    ser = fs * (1 / 3 - f2 * (1 / 45 - f2 * (2 / 945 - f2 * (1 / 4725 - f2 * 2 / 93555))))
    return np.where(small, ser, big)


def langevin_prime(f):
    f = np.asarray(f, dtype=float)
    small = np.abs(f) < 0.1
    fs = np.where(small, f, 1.0)
    fb = np.where(small, 1.0, f)
    e2 = np.exp(-2 * np.abs(fb))
    big = 1.0 / (fb * fb) - 4 * e2 / np.expm1(-2 * np.abs(fb)) ** 2
    f2 = fs * fs
    ser = 1 / 3 - f2 * (1 / 15 - f2 * (2 / 189 - f2 * (1 / 675 - f2 * 2 / 10395)))
    return np.where(small, ser, big)


def langevin_inv(s):
    """The unique f >= 0 with coth f - 1/f = s, for 0 <= s < 1."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or np.any(s_arr >= 1) or np.any(~np.isfinite(s_arr)):
        raise ValueError("langevin_inv needs 0 <= s < 1")
    f = np.where(s_arr < 0.5, 3 * s_arr + 1.8 * s_arr ** 3, 1.0 / (1.0 - s_arr))
    for _ in range(60):
        r = langevin(f) - s_arr
        step = r / langevin_prime(f)
        f_new = np.maximum(f - step, 0.5 * f)
        done = np.all(np.abs(f_new - f) <= 1e-15 * np.maximum(f, 1e-300))
        f = f_new
        if done:
            break
    f = np.where(s_arr == 0, 0.0, f)
    return float(f) if np.ndim(s) == 0 else f


def _log_f_over_sinh(f):
    """ln(f / sinh f), stable for large f and equal to 0 at f = 0."""
    f = np.asarray(f, dtype=float)
    big = f > 0.05
    fp = np.where(big, f, 1.0)
    val = np.log(fp) - fp - np.log1p(-np.exp(-2 * fp)) + math.log(2.0)
    f2 = np.where(big, 0.0, f) ** 2
    ser = -f2 * (1 / 6 - f2 * (1 / 180 - f2 / 2835))
    return np.where(big, val, ser)


# ------------------------------------------------------------------ parameters
def default_shape(r):
    return np.where(np.abs(r) < 1, 1.0 - r * r, 0.0)


@dataclass
class MeanFieldParams:
    """Inverse temperature ``beta_t``, interaction mass ``j0``, range ``delta``
    and a kernel shape psi supported in [0, 1]."""

    beta_t: float
    j0: float = 1.0
    delta: float = 1.0
    shape: Callable = default_shape
    c_psi: float = dc_field(init=False)
    g_delta: float = dc_field(init=False)

    def __post_init__(self):
        if not (self.beta_t > 0 and self.j0 > 0 and self.delta > 0):
            raise ValueError("beta_t, j0 and delta must be positive")
        m1 = integrate.quad(lambda r: r * self.shape(r), 0, 1, epsabs=1e-14, epsrel=1e-13)[0]
        m3 = integrate.quad(lambda r: r ** 3 * self.shape(r), 0, 1, epsabs=1e-14, epsrel=1e-13)[0]
        self.c_psi = self.j0 / (2 * math.pi * m1)
        self.g_delta = 0.25 * math.pi * self.delta ** 2 * self.c_psi * m3

    def kernel(self, r):
        """J_delta(r) = delta^-2 c_psi psi(r / delta)."""
        return self.c_psi * self.shape(np.asarray(r, dtype=float) / self.delta) / self.delta ** 2


# ------------------------------------------------------------------ potential
def potential_U(params: MeanFieldParams, s):
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or np.any(s_arr >= 1):
        raise ValueError("U is defined for 0 <= s < 1")
    f = langevin_inv(s_arr)
    b = params.beta_t
    u = (_log_f_over_sinh(f) - math.log(FOUR_PI) + s_arr * f) / b - 0.5 * params.j0 * s_arr ** 2
    return float(u) if np.ndim(s) == 0 else u


def potential_dU(params: MeanFieldParams, s):
    """U'(s) = f(s)/beta_T - J0 s."""
    return np.asarray(langevin_inv(s)) / params.beta_t - params.j0 * np.asarray(s)


def saturation_s0(params: MeanFieldParams) -> float:
    """Global minimizer of U on [0, 1): 0 at or below the bifurcation, else the
    positive root of f(s) = beta_T J0 s."""
    k = params.beta_t * params.j0
    if k <= CRITICAL_COUPLING:
        return 0.0
    # f(s)/s increases from 3 to infinity, so the positive root is unique.
    g = lambda s: langevin_inv(s) - k * s
    lo = 1e-300
    lo = 1e-8 if g(1e-8) < 0 else lo
    hi = 1.0 - 1e-16
    while g(hi) <= 0:
        hi = 0.5 * (1 + hi)
    s0 = optimize.brentq(g, lo, hi, xtol=1e-16, rtol=1e-15, maxiter=500)
    if potential_U(params, s0) > potential_U(params, 0.0):
        return 0.0
    return float(s0)


def closure_multipliers(mbar, beta_t: float):
    """(mu, lambda) with rho(m) = exp(beta_T (mu + lambda . m)) normalized on the
    sphere and with first moment ``mbar``."""
    m = np.asarray(mbar, dtype=float)
    s = float(np.linalg.norm(m))
    if s >= 1:
        raise ValueError("|mbar| must be < 1")
    if not beta_t > 0:
        raise ValueError("beta_t must be positive")
    f = langevin_inv(s)
    lam = np.zeros(3) if s == 0 else m * f / (beta_t * s)
    # 4 pi e^{beta mu} sinh(f) / f = 1
    mu = (_log_f_over_sinh(f) - math.log(FOUR_PI)) / beta_t
    return float(mu), lam


def sphere_rule(n_theta: int = 64, n_phi: int = 128):
    """Points and weights on the unit sphere (Gauss in cos theta, trapezoid in phi)."""
    x, w = np.polynomial.legendre.leggauss(n_theta)
    ph = np.arange(n_phi) * (2 * np.pi / n_phi)
    C, P = np.meshgrid(x, ph, indexing="ij")
    S = np.sqrt(1 - C * C)
    pts = np.stack([S * np.cos(P), S * np.sin(P), C], axis=-1).reshape(-1, 3)
    wts = np.repeat(w, n_phi) * (2 * np.pi / n_phi)
    return pts, wts


def closure_density(mbar, beta_t, pts):
    mu, lam = closure_multipliers(mbar, beta_t)
    return np.exp(beta_t * (mu + pts @ lam))


def entropy_closed_form(s):
    """int rho ln rho over the sphere at the closure optimum, |mbar| = s."""
    f = langevin_inv(s)
    return _log_f_over_sinh(f) - math.log(FOUR_PI) + np.asarray(s) * f


# ------------------------------------------------------------------ wall profile
@dataclass
class WallProfile:
    x: np.ndarray
    phi: np.ndarray
    u: np.ndarray
    minimal_energy: float
    s0: float

    @property
    def m(self):
        return self.phi[:, None] * self.u[None, :]


def _well_depth(params: MeanFieldParams, s0: float, phi):
    """U(phi) - U(s0) as int_phi^s0 (J0 s - f(s)/beta_T) ds, free of cancellation."""
    z, w = np.polynomial.legendre.leggauss(24)
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    a = phi[:, None]
    s = a + (s0 - a) * 0.5 * (z + 1)[None, :]
    integrand = params.j0 * s - langevin_inv(np.minimum(s, s0)) / params.beta_t
    return 0.5 * (s0 - phi) * np.sum(w[None, :] * integrand, axis=1)


def minimal_wall_energy(params: MeanFieldParams, s0: float | None = None) -> float:
    """2 int_0^s0 sqrt(g (U(phi) - U(s0))) dphi."""
    s0 = saturation_s0(params) if s0 is None else s0
    if s0 <= 0:
        raise ValueError("no wall below the bifurcation")
    g = params.g_delta
    val = integrate.quad(lambda p: math.sqrt(g * max(_well_depth(params, s0, p)[0], 0.0)),
                         0.0, s0, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
    return 2.0 * val


def wall_profile(params: MeanFieldParams, x_max: float, n_samples: int = 512,
                 u=(0.0, 0.0, 1.0), y_max: float = 32.0, n_panels: int = 600) -> WallProfile:
    """Half-line minimizer phi(x) u with phi(0) = 0.

    The quadrature identity x(phi) is computed in the variable
    phi = s0 (1 - e^{-y}), which turns the logarithmic divergence at s0 into
    a linear growth in y. x(y) is then inverted by Hermite interpolation.
    """
    s0 = saturation_s0(params)
    if s0 <= 0:
        raise ValueError("subcritical parameters: U has no nonzero well, so no wall")
    u = np.asarray(u, dtype=float)
    u = u / np.linalg.norm(u)
    g = params.g_delta

    def dxdy(y):
        phi = s0 * (1 - np.exp(-y))
        dep = _well_depth(params, s0, phi)
        return s0 * np.exp(-y) * np.sqrt(g / dep)

    edges = np.linspace(0.0, y_max, n_panels + 1)
    z, w = np.polynomial.legendre.leggauss(8)
    a, b = edges[:-1, None], edges[1:, None]
    yq = (a + (b - a) * 0.5 * (z + 1)).ravel()
    fq = dxdy(yq).reshape(n_panels, 8)
    xe = np.concatenate([[0.0], np.cumsum(0.5 * (edges[1:] - edges[:-1]) * (fq @ w))])
    slopes = 1.0 / dxdy(edges)
    spline = CubicHermiteSpline(xe, edges, slopes)
    x = np.linspace(0.0, x_max, n_samples)
    # Beyond y_max, s0 - phi is below round-off; continue the exponential tail.
    y = np.where(x <= xe[-1], spline(np.minimum(x, xe[-1])),
                 y_max + (x - xe[-1]) * slopes[-1])
    phi = s0 * (1 - np.exp(-y))
    return WallProfile(x=x, phi=phi, u=u, minimal_energy=minimal_wall_energy(params, s0), s0=s0)


def profile_energy(params: MeanFieldParams, prof: WallProfile, s0: float | None = None) -> float:
    """int (g |m'|^2 + U(|m|) - U(s0)) dx over the sampled interval, by Simpson."""
    s0 = prof.s0 if s0 is None else s0
    m = prof.m
    dm = np.gradient(m, prof.x, axis=0, edge_order=2)
    dens = params.g_delta * np.einsum("ij,ij->i", dm, dm) \
        + _well_depth(params, s0, np.linalg.norm(m, axis=1))
    return float(integrate.simpson(dens, x=prof.x))


# ------------------------------------------------------------------ free energies
def free_energy_forms(params: MeanFieldParams, mbar: np.ndarray, h: float):
    """The reduced free energy of a compactly supported field on a square grid,
    in the interaction form and in the difference form.

    Interaction: -1/2 sum J m.m' + J0/2 int |m|^2 + int U.
    Difference: 1/4 sum J |m - m'|^2 + int U.
    """
    nx, ny, _ = mbar.shape
    s = np.linalg.norm(mbar, axis=-1)
    U = h * h * float(np.sum(potential_U(params, s)))
    R = int(math.ceil(params.delta / h))
    di = np.arange(-R, R + 1)
    DI, DJ = np.meshgrid(di, di, indexing="ij")
    K = params.kernel(h * np.hypot(DI, DJ)) * h ** 4
    pad = np.pad(mbar, ((R, R), (R, R), (0, 0)))
    inter = 0.0
    diff = 0.0
    for a in range(2 * R + 1):
        for b in range(2 * R + 1):
            k = K[a, b]
            if k == 0:
                continue
            sh = pad[a:a + nx, b:b + ny]
            # pairs where x is any cell of the padded plane with nonzero m(x) or m(y)
            inter += k * float(np.sum(mbar * sh))
    mp = np.pad(mbar, ((2 * R, 2 * R), (2 * R, 2 * R), (0, 0)))
    big = mp.shape[0], mp.shape[1]
    pp = np.pad(mp, ((R, R), (R, R), (0, 0)))
    for a in range(2 * R + 1):
        for b in range(2 * R + 1):
            k = K[a, b]
            if k == 0:
                continue
            d = mp - pp[a:a + big[0], b:b + big[1]]
            diff += k * float(np.sum(d * d))
    quad = -0.5 * inter + 0.5 * params.j0 * h * h * float(np.sum(s * s)) + U
    dform = 0.25 * diff + U
    return quad, dform


# ------------------------------------------------------------------ boundary-layer closed form
def rho_closed_form(beta_arg: float) -> float:
    """ln((1 + 2 b + sqrt(1 + 4 b)) / (2 b)) = int_0^{1/2} 2 ds / sqrt(s^2 + b)."""
    b = float(beta_arg)
    if not b > 0:
        raise ValueError("rho(beta) needs beta > 0")
    return math.log((1 + 2 * b + math.sqrt(1 + 4 * b)) / (2 * b))


def bifurcation_sweep(j0: float, delta: float, betas):
    return [(float(b), saturation_s0(MeanFieldParams(float(b), j0, delta))) for b in betas]
