"""Unit-vector magnetization fields on cell-centred rectangular grids."""

from __future__ import annotations

import io
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import gaussian_filter

from .geometry import DomainGeometry, ResolutionError, locate


@dataclass(frozen=True)
class Grid:
    """Cell centres at ``(x0 + (i + 1/2) h, y0 + (j + 1/2) h)``; arrays are indexed [i, j]."""

    x0: float
    y0: float
    h: float
    nx: int
    ny: int

    def centres(self):
        x = self.x0 + (np.arange(self.nx) + 0.5) * self.h
        y = self.y0 + (np.arange(self.ny) + 0.5) * self.h
        X, Y = np.meshgrid(x, y, indexing="ij")
        return X, Y

    @property
    def extent(self):
        return (self.x0, self.x0 + self.nx * self.h, self.y0, self.y0 + self.ny * self.h)


def grid_for(dom: DomainGeometry, n: int, margin: float = 0.0) -> Grid:
    """Square n x n grid centred on the domain's bounding box, inflated by ``margin``
    plus two cells on every side."""
    xmin, xmax, ymin, ymax = dom.bounding_box
    side = max(xmax - xmin, ymax - ymin) + 2 * margin
    h = side / (n - 4)
    cx, cy = 0.5 * (xmin + xmax), 0.5 * (ymin + ymax)
    return Grid(cx - 0.5 * n * h, cy - 0.5 * n * h, h, n, n)


@dataclass
class Magnetization:
    grid: Grid
    values: np.ndarray  # (nx, ny, 3)
    mask: np.ndarray  # (nx, ny) bool
    dist: np.ndarray | None = None  # signed distance at cell centres

    @property
    def m_perp(self):
        return self.values[..., :2]

    @property
    def m_par(self):
        return self.values[..., 2]

    def copy(self) -> "Magnetization":
        return replace(self, values=self.values.copy())

    def with_values(self, values) -> "Magnetization":
        v = np.where(self.mask[..., None], values, 0.0)
        return replace(self, values=v)


def cell_distance(dom: DomainGeometry, grid: Grid) -> np.ndarray:
    X, Y = grid.centres()
    loc = locate(dom, np.stack([X.ravel(), Y.ravel()], axis=1))
    return loc.d.reshape(X.shape)


def _unit(v):
    nrm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / nrm


def _initial_values(kind: str, X, Y, dom, opts: dict):
    if kind == "uniform":
        u = np.asarray(opts.get("u", (0.0, 0.0, 1.0)), dtype=float)
        u = u / np.linalg.norm(u)
        return np.broadcast_to(u, X.shape + (3,)).copy()
    if kind == "tilted":
        # Smooth out-of-plane tilt: either a constant angle or theta(x, y).
        theta = opts.get("angle", 0.3)
        phi0 = float(opts.get("azimuth", 0.0))
        th = theta(X, Y) if callable(theta) else np.full(X.shape, float(theta))
        return np.stack([np.sin(th) * np.cos(phi0), np.sin(th) * np.sin(phi0), np.cos(th)], axis=-1)
    if kind == "neel_skyrmion":
        cx, cy = opts.get("center", (0.0, 0.0))
        r0 = float(opts.get("r0", 0.2))
        if not r0 > 0:
            raise ValueError("skyrmion radius must be positive")
        pol = 1.0 if opts.get("polarity", -1) > 0 else -1.0
        chi = 1.0 if opts.get("chirality", 1) > 0 else -1.0
        dx, dy = X - cx, Y - cy
        rho = np.hypot(dx, dy)
        th = 2.0 * np.arctan2(r0, rho)
        r_cut = opts.get("r_cut")
        if r_cut is not None:
            # C^1 taper to the exact background value beyond r_cut
            u = np.clip((rho - 0.5 * r_cut) / (0.5 * r_cut), 0.0, 1.0)
            th = th * (1.0 - u * u * (3.0 - 2.0 * u))
        with np.errstate(invalid="ignore", divide="ignore"):
            ex = np.where(rho > 0, dx / rho, 0.0)
            ey = np.where(rho > 0, dy / rho, 0.0)
        st = chi * np.sin(th)
        return np.stack([st * ex, st * ey, -pol * np.cos(th)], axis=-1)
    if kind == "hedgehog":
        loc = locate(dom, np.stack([X.ravel(), Y.ravel()], axis=1))
        n = loc.n.reshape(X.shape + (2,))
        return np.concatenate([n, np.zeros(X.shape + (1,))], axis=-1)
    if kind == "random":
        rng = np.random.default_rng(opts.get("seed", 0))
        v = rng.standard_normal(X.shape + (3,))
        smooth = float(opts.get("smooth", 0.0))
        if smooth > 0:
            h = X[1, 0] - X[0, 0]
            for c in range(3):
                v[..., c] = gaussian_filter(v[..., c], smooth / h, mode="wrap")
        return v
    raise ValueError(f"unknown initializer {kind!r}")


def make_field(grid: Grid, dom: DomainGeometry, initializer: str = "uniform", *,
               eps: float = 0.0, dist: np.ndarray | None = None, **opts) -> Magnetization:
    """Field sampled at cell centres inside Omega_eps = {d < eps}, zero elsewhere.

    ``eps = 0`` gives a field on the domain itself. Initializers: ``uniform(u)``,
    ``tilted(angle, azimuth)``, ``neel_skyrmion(center, r0, polarity, chirality, r_cut)``,
    ``hedgehog`` and ``random(seed, smooth)``.

    The skyrmion ansatz is theta = 2 atan(r0 / rho) with
    m = (chirality sin(theta) e_rho, -polarity cos(theta)); ``polarity`` is the
    sign of m_par at the core and the background points the other way.
    With this convention a core-up skyrmion (polarity +1) has skyrmion
    number +1 and a core-down one has -1. With ``r_cut`` the angle is
    tapered to zero between r_cut/2 and r_cut, so the field equals the
    background exactly outside that radius.
    """
    xmin, xmax, ymin, ymax = dom.bounding_box
    gx0, gx1, gy0, gy1 = grid.extent
    if gx0 > xmin - eps or gx1 < xmax + eps or gy0 > ymin - eps or gy1 < ymax + eps:
        raise ValueError("grid does not cover Omega_eps")
    if dist is None:
        dist = cell_distance(dom, grid)
    mask = dist < eps if eps > 0 else dist < 0
    X, Y = grid.centres()
    v = _initial_values(initializer, X, Y, dom, opts)
    nrm = np.linalg.norm(v, axis=-1)
    if np.any(nrm[mask] == 0):
        raise ValueError("initializer produced a zero vector inside the domain")
    v = np.where(mask[..., None], v / np.where(nrm > 0, nrm, 1.0)[..., None], 0.0)
    return Magnetization(grid=grid, values=v, mask=mask, dist=dist)


def project_to_sphere(field: Magnetization) -> Magnetization:
    """Normalize every masked value; raises on a zero vector."""
    nrm = np.linalg.norm(field.values, axis=-1)
    if np.any(nrm[field.mask] == 0):
        raise ValueError("zero vector at a masked cell cannot be projected to the sphere")
    safe = np.where(field.mask, nrm, 1.0)
    v = np.where(field.mask[..., None], field.values / safe[..., None], 0.0)
    return replace(field, values=v)


class BoundaryTrace(NamedTuple):
    s: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray
    weight: float
    m_par: np.ndarray
    m_perp_n: np.ndarray
    m_perp_t: np.ndarray


def interpolation_matrix(grid: Grid, mask: np.ndarray, pts) -> sp.csr_matrix:
    """Sparse (len(pts), nx*ny) matrix of mask-weighted bilinear weights.

    Rows sum to one, so constants are reproduced exactly.
    """
    pts = np.asarray(pts, dtype=float)
    u = (pts[:, 0] - grid.x0) / grid.h - 0.5
    v = (pts[:, 1] - grid.y0) / grid.h - 0.5
    i0 = np.floor(u).astype(int)
    j0 = np.floor(v).astype(int)
    fu, fv = u - i0, v - j0
    rows, cols, vals = [], [], []
    wsum = np.zeros(len(pts))
    r = np.arange(len(pts))
    for di, wi in ((0, 1 - fu), (1, fu)):
        for dj, wj in ((0, 1 - fv), (1, fv)):
            ii = np.clip(i0 + di, 0, grid.nx - 1)
            jj = np.clip(j0 + dj, 0, grid.ny - 1)
            w = wi * wj * mask[ii, jj]
            rows.append(r)
            cols.append(ii * grid.ny + jj)
            vals.append(w)
            wsum += w
    if np.any(wsum < 0.2):
        raise ResolutionError("boundary layer under-resolved: interpolation stencil mostly outside the mask")
    vals = [v / wsum for v in vals]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(len(pts), grid.nx * grid.ny))


def interpolate(field: Magnetization, pts) -> np.ndarray:
    """Mask-weighted bilinear interpolation (exact for constant fields)."""
    T = interpolation_matrix(field.grid, field.mask, pts)
    return T @ field.values.reshape(-1, 3)


def trace_operator(field: Magnetization, dom: DomainGeometry, n_nodes: int | None = None):
    """Boundary nodes and the sparse map from cell values to trace samples."""
    h = field.grid.h
    if dom.eps_bar < 3 * h:
        raise ResolutionError("grid too coarse for the boundary tube (need eps_bar >= 3 h)")
    if n_nodes is None:
        n_nodes = max(64, int(np.ceil(2 * dom.perimeter / h)))
    nodes = dom.boundary.nodes(n_nodes)
    pts = nodes.points - 0.5 * h * nodes.normals
    return nodes, interpolation_matrix(field.grid, field.mask, pts)


def boundary_trace(field: Magnetization, dom: DomainGeometry, n_nodes: int | None = None) -> BoundaryTrace:
    """Trace sampled half a cell inside the boundary along -n."""
    nodes, T = trace_operator(field, dom, n_nodes)
    m = T @ field.values.reshape(-1, 3)
    mn = np.einsum("ij,ij->i", m[:, :2], nodes.normals)
    mt = np.einsum("ij,ij->i", m[:, :2], nodes.tangents)
    return BoundaryTrace(nodes.s, nodes.points, nodes.normals, nodes.tangents, nodes.weight,
                         m[:, 2], mn, mt)


def skyrmion_number(field: Magnetization) -> float:
    """(1/4 pi) sum m . (D_x m x D_y m) h^2 with centred differences over interior cells."""
    m, msk = field.values, field.mask
    h = field.grid.h
    inner = msk[1:-1, 1:-1] & msk[2:, 1:-1] & msk[:-2, 1:-1] & msk[1:-1, 2:] & msk[1:-1, :-2]
    dx = (m[2:, 1:-1] - m[:-2, 1:-1]) / (2 * h)
    dy = (m[1:-1, 2:] - m[1:-1, :-2]) / (2 * h)
    q = np.einsum("ijk,ijk->ij", m[1:-1, 1:-1], np.cross(dx, dy))
    return float(np.sum(q[inner]) * h * h / (4 * np.pi))


def write_field_csv(field: Magnetization, path_or_buf, header: str | None = None) -> None:
    X, Y = field.grid.centres()
    lines = []
    if header:
        lines.extend("# " + ln for ln in header.splitlines())
    lines.append("x,y,mx,my,mz")
    m = field.values
    for j in range(field.grid.ny):
        for i in range(field.grid.nx):
            if field.mask[i, j]:
                lines.append(",".join(f"{v:.17g}" for v in (X[i, j], Y[i, j], *m[i, j])))
    text = "\n".join(lines) + "\n"
    if isinstance(path_or_buf, io.TextIOBase):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", encoding="utf-8") as fh:
            fh.write(text)


def read_field_csv(path, grid: Grid | None = None, tol: float = 1e-6) -> Magnetization:
    """Read ``x,y,mx,my,mz`` rows; cells not listed are outside the mask."""
    if isinstance(path, io.TextIOBase):
        lines = path.read().splitlines()
    else:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if lines and lines[0].split(",")[0].strip() == "x":
        lines = lines[1:]
    data = np.loadtxt(lines, delimiter=",", ndmin=2)
    xy, m = data[:, :2], data[:, 2:5]
    nrm = np.linalg.norm(m, axis=1)
    if np.any(np.abs(nrm - 1) > tol):
        raise ValueError("field file contains vectors that are not unit length")
    m = m / nrm[:, None]
    if grid is None:
        xs, ys = np.unique(xy[:, 0]), np.unique(xy[:, 1])
        h = min(np.min(np.diff(xs)) if len(xs) > 1 else np.inf,
                np.min(np.diff(ys)) if len(ys) > 1 else np.inf)
        nx = int(round((xs[-1] - xs[0]) / h)) + 1
        ny = int(round((ys[-1] - ys[0]) / h)) + 1
        grid = Grid(xs[0] - 0.5 * h, ys[0] - 0.5 * h, h, nx, ny)
    i = np.rint((xy[:, 0] - grid.x0) / grid.h - 0.5).astype(int)
    j = np.rint((xy[:, 1] - grid.y0) / grid.h - 0.5).astype(int)
    vals = np.zeros((grid.nx, grid.ny, 3))
    mask = np.zeros((grid.nx, grid.ny), dtype=bool)
    vals[i, j] = m
    mask[i, j] = True
    return Magnetization(grid=grid, values=vals, mask=mask)
