"""Smooth road-surface model: filters road points out of a scene cloud, fits
a tensor-product spline surface balancing accuracy against smoothness, and
answers height/normal queries.

The surface is a height field z = S(x, y): drone footage of roads justifies
one height per plan position, and the (x, y) -> (u, v) parameterization is a
plain affine map so no surface-point inversion is ever needed.  Weights are
all 1 unless configured, i.e. the rational form degenerates to a B-spline.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree


class GroundError(ValueError):
    pass


class GroundFilterError(GroundError):
    pass


class GroundDomainError(GroundError):
    """Query outside the fitted surface domain; refinement treats it as no-ground."""


# ---------------------------------------------------------------------------
# B-spline basis machinery (clamped knots, vectorized over query points)
# ---------------------------------------------------------------------------


def clamped_uniform_knots(n_ctrl: int, degree: int) -> np.ndarray:
    n_seg = n_ctrl - degree
    if n_seg < 1:
        raise GroundError("not enough control points for the requested degree")
    interior = np.linspace(0.0, 1.0, n_seg + 1)[1:-1]
    return np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])


def find_spans(knots: np.ndarray, degree: int, u: np.ndarray) -> np.ndarray:
    n_basis = len(knots) - degree - 1
    spans = np.searchsorted(knots, u, side="right") - 1
    return np.clip(spans, degree, n_basis - 1)


def basis_functions(knots: np.ndarray, degree: int, u: np.ndarray, n_ders: int = 0):
    """Nonzero basis functions and derivatives at each u.

    Returns (spans (N,), ders (n_ders+1, N, degree+1)); column j of ders[k]
    is the k-th derivative of basis function ``span - degree + j``.
    """
    u = np.asarray(u, dtype=float).ravel()
    p = degree
    npts = len(u)
    spans = find_spans(knots, p, u)

    ndu = np.zeros((p + 1, p + 1, npts))
    ndu[0, 0] = 1.0
    left = np.zeros((p + 1, npts))
    right = np.zeros((p + 1, npts))
    for j in range(1, p + 1):
        left[j] = u - knots[spans + 1 - j]
        right[j] = knots[spans + j] - u
        saved = np.zeros(npts)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    ders = np.zeros((n_ders + 1, npts, p + 1))
    ders[0] = ndu[:, p].T.reshape(npts, p + 1)

    if n_ders > 0:
        a = np.zeros((2, p + 1, npts))
        for r in range(p + 1):
            s1, s2 = 0, 1
            a[:] = 0.0
            a[0, 0] = 1.0
            for k in range(1, n_ders + 1):
                d = np.zeros(npts)
                rk = r - k
                pk = p - k
                if r >= k:
                    a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                    d = a[s2, 0] * ndu[rk, pk]
                j1 = 1 if rk >= -1 else -rk
                j2 = k - 1 if r - 1 <= pk else p - r
                for j in range(j1, j2 + 1):
                    a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                    d = d + a[s2, j] * ndu[rk + j, pk]
                if r <= pk:
                    a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                    d = d + a[s2, k] * ndu[r, pk]
                ders[k, :, r] = d
                s1, s2 = s2, s1
        rfac = float(p)
        for k in range(1, n_ders + 1):
            ders[k] *= rfac
            rfac *= p - k
    return spans, ders


# ---------------------------------------------------------------------------
# Surface type
# ---------------------------------------------------------------------------


@dataclass
class GroundQuery:
    height: float
    normal: np.ndarray


@dataclass
class GroundSurface:
    """Clamped tensor-product spline height field over an (x, y) domain."""

    degree_u: int
    degree_v: int
    knots_u: np.ndarray
    knots_v: np.ndarray
    ctrl_x: np.ndarray
    ctrl_y: np.ndarray
    ctrl_z: np.ndarray
    weights: np.ndarray
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        nu, nv = self.ctrl_z.shape
        if len(self.knots_u) != nu + self.degree_u + 1:
            raise GroundError("knot vector U inconsistent with control grid")
        if len(self.knots_v) != nv + self.degree_v + 1:
            raise GroundError("knot vector V inconsistent with control grid")
        if np.any(np.diff(self.knots_u) < 0) or np.any(np.diff(self.knots_v) < 0):
            raise GroundError("knot vectors must be non-decreasing")
        if np.any(self.weights <= 0):
            raise GroundError("all weights must be positive")

    @property
    def scale_x(self) -> float:
        return self.x1 - self.x0

    @property
    def scale_y(self) -> float:
        return self.y1 - self.y0

    def contains(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)

    def _params(self, x, y):
        u = (np.asarray(x, dtype=float) - self.x0) / self.scale_x
        v = (np.asarray(y, dtype=float) - self.y0) / self.scale_y
        return np.clip(u, 0.0, 1.0), np.clip(v, 0.0, 1.0)

    def evaluate(self, x, y) -> np.ndarray:
        """Surface height at (x, y); vectorized, no domain check."""
        z, _, _ = self._evaluate_with_derivatives(x, y)
        return z

    def derivatives(self, x, y):
        """(z, dz/dx, dz/dy) at (x, y); vectorized."""
        return self._evaluate_with_derivatives(x, y)

    def _evaluate_with_derivatives(self, x, y):
        u, v = self._params(x, y)
        spans_u, du = basis_functions(self.knots_u, self.degree_u, u, n_ders=1)
        spans_v, dv = basis_functions(self.knots_v, self.degree_v, v, n_ders=1)
        pu, pv = self.degree_u, self.degree_v
        iu = spans_u[:, None] - pu + np.arange(pu + 1)[None, :]
        iv = spans_v[:, None] - pv + np.arange(pv + 1)[None, :]
        W = self.weights[iu[:, :, None], iv[:, None, :]]
        Z = self.ctrl_z[iu[:, :, None], iv[:, None, :]] * W

        def tensor(fu, fv, grid):
            return np.einsum("ni,nj,nij->n", fu, fv, grid)

        den = tensor(du[0], dv[0], W)
        num = tensor(du[0], dv[0], Z)
        den_u = tensor(du[1], dv[0], W)
        num_u = tensor(du[1], dv[0], Z)
        den_v = tensor(du[0], dv[1], W)
        num_v = tensor(du[0], dv[1], Z)
        z = num / den
        dz_du = (num_u * den - num * den_u) / den**2
        dz_dv = (num_v * den - num * den_v) / den**2
        scalar = np.isscalar(x) or np.asarray(x).ndim == 0
        dzdx = dz_du / self.scale_x
        dzdy = dz_dv / self.scale_y
        if scalar:
            return float(z[0]), float(dzdx[0]), float(dzdy[0])
        return z, dzdx, dzdy


def query_ground(surface: GroundSurface, x: float, y: float) -> GroundQuery:
    """Height and upward unit normal at (x, y); errors outside the domain."""
    if not bool(np.all(surface.contains(x, y))):
        raise GroundDomainError(f"query ({x:.3f}, {y:.3f}) outside surface domain")
    z, dzdx, dzdy = surface.derivatives(x, y)
    n = np.array([-dzdx, -dzdy, 1.0])
    n /= np.linalg.norm(n)
    return GroundQuery(height=float(z), normal=n)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


@dataclass
class GroundFitConfig:
    degree: int = 3
    control_spacing: float = 2.0
    smoothing_weight: float = 0.1


def _greville(knots: np.ndarray, degree: int) -> np.ndarray:
    n_ctrl = len(knots) - degree - 1
    return np.array([knots[i + 1 : i + degree + 1].mean() for i in range(n_ctrl)])


def _gauss_gram(knots: np.ndarray, degree: int, order_a: int, order_b: int) -> np.ndarray:
    """1D Gram matrix of basis-derivative products via per-span Gauss quadrature."""
    n_ctrl = len(knots) - degree - 1
    G = np.zeros((n_ctrl, n_ctrl))
    gauss_x, gauss_w = np.polynomial.legendre.leggauss(4)
    breaks = np.unique(knots)
    n_ders = max(order_a, order_b)
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b - a < 1e-14:
            continue
        mid = (a + b) / 2.0
        half = (b - a) / 2.0
        us = mid + half * gauss_x
        spans, ders = basis_functions(knots, degree, us, n_ders=n_ders)
        for k in range(len(us)):
            idx = spans[k] - degree + np.arange(degree + 1)
            fa = ders[order_a, k]
            fb = ders[order_b, k]
            G[np.ix_(idx, idx)] += gauss_w[k] * half * np.outer(fa, fb)
    return G


def bending_matrix(knots_u, knots_v, degree_u, degree_v, scale_x, scale_y) -> sp.csr_matrix:
    """Thin-plate bending-energy Gram matrix over the surface domain."""
    G0u = _gauss_gram(knots_u, degree_u, 0, 0)
    G1u = _gauss_gram(knots_u, degree_u, 1, 1)
    G2u = _gauss_gram(knots_u, degree_u, 2, 2)
    G0v = _gauss_gram(knots_v, degree_v, 0, 0)
    G1v = _gauss_gram(knots_v, degree_v, 1, 1)
    G2v = _gauss_gram(knots_v, degree_v, 2, 2)
    area = scale_x * scale_y
    B = (
        area / scale_x**4 * sp.kron(sp.csr_matrix(G2u), sp.csr_matrix(G0v))
        + 2.0 * area / (scale_x**2 * scale_y**2) * sp.kron(sp.csr_matrix(G1u), sp.csr_matrix(G1v))
        + area / scale_y**4 * sp.kron(sp.csr_matrix(G0u), sp.csr_matrix(G2v))
    )
    return B.tocsr()


def bending_energy(surface: GroundSurface) -> float:
    """z^T B z of the fitted height coefficients (zero for any plane)."""
    B = bending_matrix(
        surface.knots_u,
        surface.knots_v,
        surface.degree_u,
        surface.degree_v,
        surface.scale_x,
        surface.scale_y,
    )
    z = surface.ctrl_z.ravel()
    return float(z @ (B @ z))


def fit_ground(points: np.ndarray, cfg: GroundFitConfig | None = None) -> GroundSurface:
    """Least-squares spline fit of control-point heights on a uniform grid.

    Minimizes sum (z_i - S(x_i, y_i))^2 + mu * thin-plate bending energy.
    """
    cfg = cfg or GroundFitConfig()
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    p = cfg.degree
    if len(pts) < (p + 1) * (p + 1):
        raise GroundError(f"need at least {(p + 1) ** 2} points to fit degree {p}")
    x0, x1 = float(pts[:, 0].min()), float(pts[:, 0].max())
    y0, y1 = float(pts[:, 1].min()), float(pts[:, 1].max())
    if x1 - x0 < 1e-6 or y1 - y0 < 1e-6:
        raise GroundError("degenerate xy domain (points collinear in plan view)")

    n_seg_u = max(1, int(np.ceil((x1 - x0) / cfg.control_spacing)))
    n_seg_v = max(1, int(np.ceil((y1 - y0) / cfg.control_spacing)))
    n_ctrl_u = n_seg_u + p
    n_ctrl_v = n_seg_v + p
    knots_u = clamped_uniform_knots(n_ctrl_u, p)
    knots_v = clamped_uniform_knots(n_ctrl_v, p)

    u = (pts[:, 0] - x0) / (x1 - x0)
    v = (pts[:, 1] - y0) / (y1 - y0)
    spans_u, du = basis_functions(knots_u, p, u)
    spans_v, dv = basis_functions(knots_v, p, v)

    n_pts = len(pts)
    per_pt = (p + 1) * (p + 1)
    rows = np.repeat(np.arange(n_pts), per_pt)
    iu = spans_u[:, None] - p + np.arange(p + 1)[None, :]
    iv = spans_v[:, None] - p + np.arange(p + 1)[None, :]
    cols = (iu[:, :, None] * n_ctrl_v + iv[:, None, :]).reshape(-1)
    vals = (du[0][:, :, None] * dv[0][:, None, :]).reshape(-1)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n_pts, n_ctrl_u * n_ctrl_v)).tocsr()

    AtA = (A.T @ A).tocsr()
    rhs = A.T @ pts[:, 2]
    mu = cfg.smoothing_weight
    if mu > 0:
        B = bending_matrix(knots_u, knots_v, p, p, x1 - x0, y1 - y0)
        system = AtA + mu * B
    else:
        system = AtA
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", spla.MatrixRankWarning)
            z = spla.spsolve(system.tocsc(), rhs)
    except RuntimeError:
        z = None
    if z is None or not np.all(np.isfinite(z)):
        # rank-deficient normal equations (mu = 0 with sparse data): fall back
        # to the minimum-norm least-squares solution
        z, *_ = np.linalg.lstsq(A.toarray(), pts[:, 2], rcond=None)

    gx = x0 + _greville(knots_u, p) * (x1 - x0)
    gy = y0 + _greville(knots_v, p) * (y1 - y0)
    CX, CY = np.meshgrid(gx, gy, indexing="ij")
    return GroundSurface(
        degree_u=p,
        degree_v=p,
        knots_u=knots_u,
        knots_v=knots_v,
        ctrl_x=CX,
        ctrl_y=CY,
        ctrl_z=z.reshape(n_ctrl_u, n_ctrl_v),
        weights=np.ones((n_ctrl_u, n_ctrl_v)),
        x0=x0,
        x1=x1,
        y0=y0,
        y1=y1,
    )


# ---------------------------------------------------------------------------
# Road point filtering (geometric surrogate for semantic road segmentation)
# ---------------------------------------------------------------------------


@dataclass
class RoadFilterConfig:
    cell_size: float = 0.5
    height_quantile: float = 0.1
    height_band: float = 0.3
    max_slope: float = 0.25
    sor_neighbors: int = 16
    sor_sigma: float = 2.0
    # Poisson density fluctuations in clean clouds reach ~2.5x the median
    # neighbor distance; genuinely isolated debris sits far beyond.  A point
    # is only dropped when it fails the sigma test AND this absolute floor.
    sor_min_ratio: float = 4.0
    min_slope_fit_points: int = 3


def filter_road_points(points: np.ndarray, cfg: RoadFilterConfig | None = None) -> np.ndarray:
    """Keep near-ground, gently sloped, statistically dense points.

    Pipeline: per-cell low-quantile height band -> slope rejection of cells
    whose local (3x3-neighborhood) plane fit is steeper than max_slope ->
    k-nearest-neighbor statistical outlier removal.
    """
    cfg = cfg or RoadFilterConfig()
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise GroundFilterError("empty input cloud")
    counts = {"input": len(pts)}

    cell_ij = np.floor(pts[:, :2] / cfg.cell_size).astype(np.int64)
    cells: dict[tuple[int, int], list[int]] = {}
    for idx, (ci, cj) in enumerate(map(tuple, cell_ij)):
        cells.setdefault((ci, cj), []).append(idx)

    # stage 1: keep points within a band above the per-cell low height quantile
    banded: dict[tuple[int, int], np.ndarray] = {}
    for key, members in cells.items():
        members = np.asarray(members)
        z = pts[members, 2]
        zq = np.quantile(z, cfg.height_quantile)
        kept = members[z <= zq + cfg.height_band]
        if len(kept):
            banded[key] = kept

    # stage 2: reject cells whose local plane fit is too steep or too thin
    keep = np.zeros(len(pts), dtype=bool)
    for (ci, cj), members in banded.items():
        neighborhood = [
            banded[(ci + di, cj + dj)]
            for di in (-1, 0, 1)
            for dj in (-1, 0, 1)
            if (ci + di, cj + dj) in banded
        ]
        local = np.concatenate(neighborhood)
        if len(local) >= cfg.min_slope_fit_points:
            # re-apply the height band at neighborhood scale so a single
            # elevated straggler cannot poison the plane fit
            z_local = pts[local, 2]
            zq = np.quantile(z_local, cfg.height_quantile)
            local = local[z_local <= zq + cfg.height_band]
        if len(local) < cfg.min_slope_fit_points:
            # too little local evidence to certify the cell as road
            continue
        xy = pts[local, :2] - pts[local, :2].mean(axis=0)
        zz = pts[local, 2] - pts[local, 2].mean()
        G = xy.T @ xy
        eigvals = np.linalg.eigvalsh(G)
        if eigvals[0] < 1e-10 * max(eigvals[1], 1e-12):
            # thin vertical structures (walls, poles) have no plan extent
            if np.ptp(pts[local, 2]) > cfg.height_band / 2:
                continue
        else:
            g = np.linalg.solve(G + 1e-12 * np.eye(2), xy.T @ zz)
            if float(np.hypot(g[0], g[1])) > cfg.max_slope:
                continue
        keep[members] = True

    stage1 = pts[keep]
    counts["height_slope"] = len(stage1)
    if len(stage1) == 0:
        raise GroundFilterError(f"no points survived filtering: {counts}")

    # stage 3: statistical outlier removal on mean k-neighbor distance
    k = min(cfg.sor_neighbors, len(stage1) - 1)
    if k >= 1:
        tree = cKDTree(stage1)
        dists, _ = tree.query(stage1, k=k + 1)
        mean_d = dists[:, 1:].mean(axis=1)
        thr = mean_d.mean() + cfg.sor_sigma * mean_d.std()
        guard = cfg.sor_min_ratio * np.median(mean_d)
        stage2 = stage1[~((mean_d > thr) & (mean_d > guard))]
    else:
        stage2 = stage1
    counts["sor"] = len(stage2)
    if len(stage2) == 0:
        raise GroundFilterError(f"no points survived filtering: {counts}")
    return stage2
