"""Mean curvature operator in conservative flux form.

The graph mean curvature div(Du / sqrt(1 + |Du|^2)) is discretized with
staggered face fluxes: the normal derivative on a face is the central
difference of the two adjacent cells, the transverse derivative averages
the four surrounding cell differences, and the cell density is the exact
discrete divergence of the face fluxes.  Flux integrals over closed
interfaces therefore satisfy the discrete divergence theorem to rounding,
which is what all the measure bookkeeping downstream leans on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .field import (
    DomainMask,
    Grid,
    ScalarField,
    UndefinedCellError,
    interface_segments,
    DiscreteSet,
)


# ---------------------------------------------------------------------------
# staggered face gradients and fluxes


def face_gradients_1d(values: np.ndarray, h: float):
    """Face slope, weight and flux between consecutive cells."""
    v = np.where(np.isfinite(values), values, np.nan)
    g = (v[1:] - v[:-1]) / h
    w = np.sqrt(1.0 + g * g)
    return g, w, g / w


def face_gradients_2d(values: np.ndarray, h: float, fallback_transverse: bool = False):
    """Staggered gradients on x- and y-faces.

    Returns ((gx, tx, wx, fx), (gy, ty, wy, fy)); f* are the flux components
    normal to each face, |f*| < 1 wherever defined.  With
    fallback_transverse the 4-point transverse average degrades to the
    available one-sided differences instead of going undefined (used only by
    the boundary-penalized solver stage).
    """
    v = np.where(np.isfinite(values), values, np.nan)
    nx, ny = v.shape

    gx = (v[1:, :] - v[:-1, :]) / h
    tx = np.full_like(gx, np.nan)
    dl = np.full_like(gx, np.nan)
    dr = np.full_like(gx, np.nan)
    dl[:, 1:-1] = v[:-1, 2:] - v[:-1, :-2]
    dr[:, 1:-1] = v[1:, 2:] - v[1:, :-2]
    tx[:, 1:-1] = (dl[:, 1:-1] + dr[:, 1:-1]) / (4.0 * h)
    if fallback_transverse:
        only_l = np.isfinite(dl) & ~np.isfinite(dr)
        only_r = np.isfinite(dr) & ~np.isfinite(dl)
        tx = np.where(only_l, dl / (2.0 * h), tx)
        tx = np.where(only_r, dr / (2.0 * h), tx)
        tx = np.where(np.isnan(tx) & np.isfinite(gx), 0.0, tx)
    wx = np.sqrt(1.0 + gx * gx + tx * tx)
    fx = gx / wx

    gy = (v[:, 1:] - v[:, :-1]) / h
    ty = np.full_like(gy, np.nan)
    db = np.full_like(gy, np.nan)
    dt = np.full_like(gy, np.nan)
    db[1:-1, :] = v[2:, :-1] - v[:-2, :-1]
    dt[1:-1, :] = v[2:, 1:] - v[:-2, 1:]
    ty[1:-1, :] = (db[1:-1, :] + dt[1:-1, :]) / (4.0 * h)
    if fallback_transverse:
        only_b = np.isfinite(db) & ~np.isfinite(dt)
        only_t = np.isfinite(dt) & ~np.isfinite(db)
        ty = np.where(only_b, db / (2.0 * h), ty)
        ty = np.where(only_t, dt / (2.0 * h), ty)
        ty = np.where(np.isnan(ty) & np.isfinite(gy), 0.0, ty)
    wy = np.sqrt(1.0 + gy * gy + ty * ty)
    fy = gy / wy
    return (gx, tx, wx, fx), (gy, ty, wy, fy)


@dataclass
class FluxField:
    """Face fluxes Du/W on the staggered grid; |flux| < 1 on defined faces."""

    grid: Grid
    fx: np.ndarray
    fy: Optional[np.ndarray] = None

    def max_magnitude(self) -> float:
        vals = [np.nanmax(np.abs(self.fx))] if np.isfinite(self.fx).any() else []
        if self.fy is not None and np.isfinite(self.fy).any():
            vals.append(np.nanmax(np.abs(self.fy)))
        return float(max(vals)) if vals else 0.0

    def to_json(self) -> dict:
        enc = lambda a: [None if np.isnan(v) else float(v) for v in a.ravel(order="C")]
        d = {"grid": self.grid.to_json(), "fx_shape": list(self.fx.shape),
             "fx": enc(self.fx)}
        if self.fy is not None:
            d["fy_shape"] = list(self.fy.shape)
            d["fy"] = enc(self.fy)
        return d


def flux_field(u: ScalarField) -> FluxField:
    if u.grid.n == 1:
        _, _, f = face_gradients_1d(u.values, u.grid.h)
        return FluxField(grid=u.grid, fx=f)
    (_, _, _, fx), (_, _, _, fy) = face_gradients_2d(u.values, u.grid.h)
    return FluxField(grid=u.grid, fx=fx, fy=fy)


def h1_density(u: ScalarField) -> ScalarField:
    """Cell density of the operator: discrete divergence of the face fluxes.

    Cells whose stencil touches an undefined or -inf value are NaN; callers
    integrating the density must skip and count them.
    """
    grid = u.grid
    h = grid.h
    if grid.n == 1:
        _, _, f = face_gradients_1d(u.values, h)
        dens = np.full(grid.shape, np.nan)
        dens[1:-1] = (f[1:] - f[:-1]) / h
    else:
        (_, _, _, fx), (_, _, _, fy) = face_gradients_2d(u.values, h)
        dens = np.full(grid.shape, np.nan)
        dens[1:-1, 1:-1] = (fx[1:, 1:-1] - fx[:-1, 1:-1]
                            + fy[1:-1, 1:] - fy[1:-1, :-1]) / h
    return ScalarField(grid=grid, values=dens, provenance="derived")


def density_integral(u: ScalarField, inside: np.ndarray,
                     name: str = "density integral") -> float:
    """Sum of h1_density * cell volume over *inside*; NaN cells are an error."""
    dens = h1_density(u).values
    bad = inside & np.isnan(dens)
    if bad.any():
        raise UndefinedCellError(f"{name}: density undefined inside the region",
                                 list(zip(*np.nonzero(bad))))
    return float(dens[inside].sum() * u.grid.cell_volume)


def trace_coefficient_matrix(du: np.ndarray) -> np.ndarray:
    """Coefficient matrix I - Du (x) Du / (1 + |Du|^2) of the operator.

    Eigenvalues lie in [1/(1+|Du|^2), 1]: the operator stays elliptic no
    matter how steep the graph gets.
    """
    du = np.asarray(du, dtype=float)
    n = du.shape[-1]
    w2 = 1.0 + np.sum(du * du, axis=-1)
    eye = np.eye(n)
    outer = du[..., :, None] * du[..., None, :]
    return eye - outer / w2[..., None, None]


# ---------------------------------------------------------------------------
# closed interfaces and flux integrals


@dataclass(frozen=True)
class CircleInterface:
    center: tuple
    radius: float

    def inside(self, pts: np.ndarray) -> np.ndarray:
        return np.hypot(pts[..., 0] - self.center[0],
                        pts[..., 1] - self.center[1]) < self.radius

    def describe(self) -> str:
        return f"circle(center={self.center}, r={self.radius})"


@dataclass(frozen=True)
class RectInterface:
    x0: float
    x1: float
    y0: float
    y1: float

    def inside(self, pts: np.ndarray) -> np.ndarray:
        return ((pts[..., 0] > self.x0) & (pts[..., 0] < self.x1)
                & (pts[..., 1] > self.y0) & (pts[..., 1] < self.y1))

    def describe(self) -> str:
        return f"rect([{self.x0},{self.x1}]x[{self.y0},{self.y1}])"


@dataclass(frozen=True)
class PairInterface:
    """1d closed interface: the two endpoints of an interval."""

    a: float
    b: float

    def inside(self, pts: np.ndarray) -> np.ndarray:
        x = pts[..., 0] if pts.ndim > 1 else pts
        return (x > self.a) & (x < self.b)

    def describe(self) -> str:
        return f"pair({self.a}, {self.b})"


def boundary_flux(u: ScalarField, interface) -> float:
    """Outward flux of Du/W through a closed interface.

    Exactly equals the h1_density sum over the enclosed cells (discrete
    divergence theorem); faces with undefined flux along the interface raise.
    """
    grid = u.grid
    h = grid.h
    pts = grid.points()
    inside = interface.inside(pts)
    if grid.n == 1:
        _, _, f = face_gradients_1d(u.values, h)
        cut = inside[1:] != inside[:-1]
        bad = cut & np.isnan(f)
        if bad.any():
            raise UndefinedCellError("interface crosses undefined faces",
                                     [(int(i),) for i in np.nonzero(bad)[0]])
        sign = np.where(inside[:-1], 1.0, -1.0)
        return float((f[cut] * sign[cut]).sum())
    (_, _, _, fx), (_, _, _, fy) = face_gradients_2d(u.values, h)
    cut_x = inside[1:, :] != inside[:-1, :]
    cut_y = inside[:, 1:] != inside[:, :-1]
    bad_cells = []
    if (cut_x & np.isnan(fx)).any():
        bad_cells += list(zip(*np.nonzero(cut_x & np.isnan(fx))))
    if (cut_y & np.isnan(fy)).any():
        bad_cells += list(zip(*np.nonzero(cut_y & np.isnan(fy))))
    if bad_cells:
        raise UndefinedCellError("interface crosses undefined faces", bad_cells)
    sign_x = np.where(inside[:-1, :], 1.0, -1.0)
    sign_y = np.where(inside[:, :-1], 1.0, -1.0)
    total = (fx[cut_x] * sign_x[cut_x]).sum() + (fy[cut_y] * sign_y[cut_y]).sum()
    return float(total * h)


def enclosed_density_sum(u: ScalarField, interface) -> float:
    """Density integral over the cells enclosed by the interface."""
    inside = interface.inside(u.grid.points())
    return density_integral(u, inside, name=interface.describe())


# ---------------------------------------------------------------------------
# area functional


def cell_gradients(u: ScalarField) -> np.ndarray:
    """Cell-centered gradient by central differences; NaN where incomplete."""
    v = np.where(np.isfinite(u.values), u.values, np.nan)
    h = u.grid.h
    if u.grid.n == 1:
        g = np.full(v.shape + (1,), np.nan)
        g[1:-1, 0] = (v[2:] - v[:-2]) / (2 * h)
        return g
    g = np.full(v.shape + (2,), np.nan)
    g[1:-1, :, 0] = (v[2:, :] - v[:-2, :]) / (2 * h)
    g[:, 1:-1, 1] = (v[:, 2:] - v[:, :-2]) / (2 * h)
    return g


def area_functional(u: ScalarField, g: Optional[ScalarField],
                    phi: ScalarField, mask: DomainMask) -> float:
    """Graph area - forcing pairing + boundary deviation, midpoint quadrature.

    integral sqrt(1+|Du|^2) over interior cells, minus integral g*u, plus the
    reconstructed boundary length element against |u - phi| on boundary cells.
    """
    grid = u.grid
    hv = grid.cell_volume
    u.require_finite(mask.interior, "area functional")
    grads = cell_gradients(u)
    gnorm2 = np.nansum(grads * grads, axis=-1)
    area = float(np.sqrt(1.0 + gnorm2[mask.interior]).sum() * hv)
    load = 0.0
    if g is not None:
        load = float((g.values[mask.interior] * u.values[mask.interior]).sum() * hv)
    lengths = boundary_length_elements(mask)
    dev = np.abs(u.values - phi.values)
    pen = float(np.nansum(dev[mask.boundary] * lengths[mask.boundary]))
    return area - load + pen


def boundary_length_elements(mask: DomainMask) -> np.ndarray:
    """Length of the reconstructed domain boundary assigned per boundary cell."""
    grid = mask.grid
    out = np.zeros(grid.shape)
    if grid.n == 1:
        out[mask.boundary] = 1.0
        return out
    segs = _domain_segments(mask)
    bidx = np.argwhere(mask.boundary)
    bpts = np.stack([grid.axis_centers(0)[bidx[:, 0]],
                     grid.axis_centers(1)[bidx[:, 1]]], axis=1)
    for p1, p2, _ in segs:
        mid = 0.5 * (np.asarray(p1) + np.asarray(p2))
        d2 = ((bpts - mid) ** 2).sum(axis=1)
        k = int(np.argmin(d2))
        out[tuple(bidx[k])] += float(np.hypot(*(np.asarray(p2) - np.asarray(p1))))
    return out


def _domain_segments(mask: DomainMask):
    from .field import domain_boundary_segments
    return domain_boundary_segments(mask)


# ---------------------------------------------------------------------------
# subharmonicity diagnostics


@dataclass
class BallCheck:
    center: tuple
    radius: float
    passed: bool
    violation: float
    inconclusive: bool = False


@dataclass
class SubharmonicReport:
    """Comparison-with-harmonic-replacement verdicts over a ball family."""

    balls: list
    tol: float
    overall_pass: bool

    @property
    def worst_violation(self) -> float:
        vals = [b.violation for b in self.balls if not b.inconclusive]
        return max(vals) if vals else 0.0

    def to_json(self) -> dict:
        return {
            "tol": self.tol,
            "overall_pass": self.overall_pass,
            "balls": [{"center": list(b.center), "radius": b.radius,
                       "passed": b.passed, "violation": b.violation,
                       "inconclusive": b.inconclusive} for b in self.balls],
        }


def default_subharmonic_tol(u: ScalarField, where: np.ndarray) -> float:
    """Scheme-truncation-matched tolerance 10 h^2 (1 + max|Du|^2)."""
    grads = cell_gradients(u)
    g2 = np.nansum(grads * grads, axis=-1)
    sel = where & ~np.isnan(g2)
    gmax2 = float(g2[sel].max()) if sel.any() else 0.0
    return 10.0 * u.grid.h ** 2 * (1.0 + gmax2)


def viscosity_subharmonic_check(u: ScalarField, mask: DomainMask,
                                balls: Sequence[tuple], tol: Optional[float] = None,
                                opts=None) -> SubharmonicReport:
    """Check u <= harmonic replacement on each test ball.

    For every ball the homogeneous Dirichlet problem is solved with u as
    sphere data; the ball passes when the replacement dominates u inside up
    to tol.  A diverging inner solve marks the ball inconclusive, not failed.
    """
    from .msolve import SolveOptions, solve_on_ball

    opts = opts or SolveOptions()
    checks = []
    tols = []
    grid = u.grid
    pts = grid.points()
    for center, radius in balls:
        if grid.n == 1:
            dist = np.abs(pts[..., 0] - center[0])
        else:
            dist = np.hypot(pts[..., 0] - center[0], pts[..., 1] - center[1])
        ball_cells = mask.interior & (dist < radius)
        ball_tol = tol if tol is not None else default_subharmonic_tol(
            u, mask.interior & (dist < radius + 2 * grid.h))
        tols.append(ball_tol)
        outcome = solve_on_ball(u, mask, center, radius, f=None, opts=opts)
        if not outcome.converged:
            checks.append(BallCheck(center=tuple(center), radius=radius,
                                    passed=False, violation=float("nan"),
                                    inconclusive=True))
            continue
        diff = u.values - outcome.field.values
        viol = float(np.nanmax(np.where(ball_cells, diff, -np.inf)))
        checks.append(BallCheck(center=tuple(center), radius=radius,
                                passed=viol <= ball_tol, violation=viol))
    conclusive = [c for c in checks if not c.inconclusive]
    overall = bool(conclusive) and all(c.passed for c in conclusive)
    return SubharmonicReport(balls=checks, tol=max(tols) if tols else 0.0,
                             overall_pass=overall)


# ---------------------------------------------------------------------------
# interior gradient growth envelope


@dataclass
class EnvelopeFit:
    """Least upper affine envelope of (|u|/r, log|Du|) sample points."""

    c1: float
    c2: float
    max_residual: float
    points: list
    degenerate: bool = False
    excluded: int = 0

    def to_csv_rows(self):
        return [(x, y) for (x, y) in self.points]


def gradient_bound_report(entries: Sequence[tuple]) -> EnvelopeFit:
    """Fit the least affine upper envelope to gradient growth samples.

    Each entry is (field, eval_point, r): a non-positive solution on a ball
    of radius r around eval_point.  Points are (|u(p)|/r, log|Du(p)|); the
    report fits log|Du| <= log c1 + c2 * |u|/r and verifies nothing sits
    above the fitted line.
    """
    if len(entries) < 3:
        raise ValueError("need at least 3 family members to fit an envelope")
    xs, ys = [], []
    excluded = 0
    for fld, point, r in entries:
        idx = _nearest_cell(fld.grid, point)
        grads = cell_gradients(fld)
        gnorm = float(np.sqrt(np.nansum(grads[idx] ** 2)))
        uval = float(fld.values[idx])
        if not np.isfinite(gnorm) or gnorm < 1e-14:
            excluded += 1
            continue
        xs.append(abs(uval) / r)
        ys.append(math.log(gnorm))
    if len(xs) < 2:
        return EnvelopeFit(c1=0.0, c2=0.0, max_residual=0.0,
                           points=list(zip(xs, ys)), degenerate=True,
                           excluded=excluded)
    intercept, slope = _upper_affine_envelope(np.array(xs), np.array(ys))
    resid = float(np.max(np.array(ys) - (intercept + slope * np.array(xs))))
    return EnvelopeFit(c1=math.exp(intercept), c2=slope, max_residual=resid,
                       points=list(zip(xs, ys)), excluded=excluded)


def _nearest_cell(grid: Grid, point) -> tuple:
    idx = []
    for k in range(grid.n):
        i = int(round((point[k] - grid.origin[k]) / grid.h))
        idx.append(min(max(i, 0), grid.extents[k] - 1))
    return tuple(idx)


def _upper_affine_envelope(xs: np.ndarray, ys: np.ndarray):
    """Line above all points minimizing the total vertical gap."""
    best = None
    m = len(xs)
    candidates = []
    for i in range(m):
        for j in range(i + 1, m):
            if xs[i] == xs[j]:
                continue
            slope = (ys[j] - ys[i]) / (xs[j] - xs[i])
            candidates.append((float(ys[i] - slope * xs[i]), float(slope)))
    candidates.append((float(ys.max()), 0.0))
    for intercept, slope in candidates:
        line = intercept + slope * xs
        if (ys - line).max() > 1e-12 * (1 + np.abs(ys).max()):
            continue
        gap = float((line - ys).sum())
        if best is None or gap < best[0]:
            best = (gap, intercept, slope)
    _, intercept, slope = best
    return intercept, slope
