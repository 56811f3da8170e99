"""Perron lifting on balls and smooth near-subharmonic approximation.

A lift replaces a field inside a ball by the minimal graph with the field's
own sphere values as data; sweeping the lift over a deterministic ball cover
of the domain and mollifying the result produces the smooth approximating
sequences that the measure machinery consumes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .field import (
    DomainMask,
    ScalarField,
    SizingError,
    UndefinedCellError,
    mollify_field,
)
from .mco import h1_density
from .msolve import SolveOptions, solve_on_ball


class PerronLiftRefused(RuntimeError):
    """The inner ball solve did not converge (or sphere data was -inf).

    The unmodified input field is attached, which keeps monotone sweeps
    sound: a caller can continue from exactly where it stopped.
    """

    def __init__(self, message, field: Optional[ScalarField] = None, center=None):
        super().__init__(message)
        self.field = field
        self.center = center


@dataclass(frozen=True)
class BallCover:
    """Ordered balls of radius 2^-j covering the cells deeper than 2^-j-1."""

    level: int
    radius: float
    centers: tuple

    def __len__(self) -> int:
        return len(self.centers)


def build_ball_cover(mask: DomainMask, level: int) -> BallCover:
    """Deterministic (lexicographically ordered) cover at the given level.

    Candidate centers sit on a sub-lattice of cell centers spaced about half
    the ball radius; cells deeper than half a radius that remain uncovered
    pull in their nearest admissible center.
    """
    grid = mask.grid
    radius = 2.0 ** (-level)
    if radius < 4 * grid.h - 1e-12:
        raise SizingError(f"cover level {level}: ball radius {radius} < 4h")
    pts = grid.points()
    sdist = mask.shape.signed_distance(pts)
    admissible = mask.interior & (sdist >= radius)
    if not admissible.any():
        raise SizingError(f"cover level {level}: no admissible ball centers")
    # half-radius lattice spacing: strong ball overlap keeps the swept
    # field's gradient sheets weak enough that mollification defects decay
    stride = max(1, int(round(radius / (2 * grid.h))))
    lattice = np.zeros(grid.shape, bool)
    if grid.n == 1:
        lattice[::stride] = True
    else:
        lattice[::stride, ::stride] = True
    chosen = admissible & lattice

    target = mask.interior & (sdist > radius / 2.0)
    tpts = pts[target].reshape(-1, grid.n)
    cpts = pts[chosen].reshape(-1, grid.n)
    apts = pts[admissible].reshape(-1, grid.n)
    from scipy.spatial import cKDTree
    if cpts.size:
        dist, _ = cKDTree(cpts).query(tpts)
        covered = dist <= radius
    else:
        covered = np.zeros(len(tpts), bool)
    extra = []
    if (~covered).any():
        atree = cKDTree(apts)
        dist, nearest = atree.query(tpts[~covered])
        for d, k in zip(dist, nearest):
            if d <= radius:
                extra.append(tuple(apts[int(k)].tolist()))
    centers = sorted({tuple(p.tolist()) for p in cpts} | set(extra))
    return BallCover(level=level, radius=radius, centers=tuple(centers))


def perron_lift(u: ScalarField, mask: DomainMask, center, radius,
                opts: Optional[SolveOptions] = None) -> ScalarField:
    """Harmonic replacement of u inside the ball, u outside, never below u.

    The replacement solves the minimal surface equation with u as sphere
    data; inside the ball the output is the cellwise max of the replacement
    and u (the discrete upper-semicontinuous regularization), outside it is
    u exactly.  -inf sphere data rejects the ball; a non-converging inner
    solve raises :class:`PerronLiftRefused` carrying the untouched input.
    """
    opts = opts or SolveOptions()
    try:
        outcome = solve_on_ball(u, mask, center, radius, f=None, opts=opts)
    except UndefinedCellError as exc:
        raise PerronLiftRefused(f"ball at {center} rejected: {exc}",
                                field=u, center=center) from exc
    if not outcome.converged:
        raise PerronLiftRefused(
            f"inner solve did not converge at {center} "
            f"(residual {outcome.residual_norm:.3e})", field=u, center=center)
    lifted = u.values.copy()
    inside = np.isfinite(outcome.field.values) & mask.interior
    old = lifted[inside]
    new = outcome.field.values[inside]
    merged = np.where(np.isfinite(old), np.maximum(new, old), new)
    lifted[inside] = merged
    return ScalarField(grid=u.grid, values=lifted, provenance="lifted",
                       extended=u.extended)


def _window_box(grid, center, radius, margin_cells: int = 3):
    sl = []
    for k in range(grid.n):
        lo = int(math.floor((center[k] - radius - grid.origin[k]) / grid.h)) - margin_cells
        hi = int(math.ceil((center[k] + radius - grid.origin[k]) / grid.h)) + margin_cells + 1
        sl.append(slice(max(lo, 0), min(hi, grid.extents[k])))
    return tuple(sl)


def _lift_inplace(work: np.ndarray, grid, mask: DomainMask, center, radius,
                  opts: SolveOptions) -> tuple[float, float, int, int]:
    """Windowed lift mutating the sweep's working array.

    Returns (max_increase, min_increase, iterations, repaired -inf cells);
    raises PerronLiftRefused like the public lift.
    """
    from scipy import ndimage
    from .msolve import _newton_core
    win = _window_box(grid, center, radius)
    Vw = work[win]
    axes = [grid.axis_centers(k)[win[k]] for k in range(grid.n)]
    if grid.n == 1:
        dist = np.abs(axes[0] - center[0])
    else:
        dist = np.hypot(axes[0][:, None] - center[0], axes[1][None, :] - center[1])
    unknown = mask.interior[win] & (dist < radius)
    if not unknown.any():
        return 0.0, 0.0, 0, 0
    ring = ndimage.binary_dilation(unknown, structure=np.ones((3,) * grid.n, bool)) \
        & ~unknown
    if (ring & mask.exterior[win]).any():
        raise PerronLiftRefused(f"ball at {center} not compactly inside the domain",
                                center=center)
    if not np.isfinite(Vw[ring]).all():
        raise PerronLiftRefused(f"ball at {center} rejected: -inf sphere data",
                                center=center)
    f_zero = np.zeros(Vw.shape)
    warm = Vw if np.isfinite(Vw[unknown]).all() else None
    vals, info = _newton_core(grid.h, grid.n, unknown, ring, Vw, f_zero, opts,
                              init_values=warm)
    if not info["converged"] and warm is not None:
        vals, info = _newton_core(grid.h, grid.n, unknown, ring, Vw, f_zero, opts,
                                  init_values=None)
    if not info["converged"]:
        raise PerronLiftRefused(
            f"inner solve did not converge at {center} "
            f"(residual {info['residual']:.3e})", center=center)
    old = Vw[unknown]
    new = vals[unknown]
    repaired = int(np.isneginf(old).sum())
    merged = np.where(np.isfinite(old), np.maximum(new, old), new)
    delta = merged - np.where(np.isfinite(old), old, merged)
    Vw[unknown] = merged
    inc_max = float(delta.max()) if delta.size else 0.0
    inc_min = float(delta.min()) if delta.size else 0.0
    return inc_max, inc_min, info["iterations"], repaired


@dataclass
class SweepRecord:
    index: int
    center: tuple
    max_increase: float
    min_increase: float
    iterations: int
    repaired_cells: int


@dataclass
class SweepTrace:
    level: int
    records: list
    sup_change: float
    completed: bool
    monotone_within: float

    def to_csv_rows(self):
        for r in self.records:
            yield (r.index, *r.center, r.max_increase, r.iterations)


def approximation_sweep(u: ScalarField, mask: DomainMask, level: int,
                        opts: Optional[SolveOptions] = None,
                        cover: Optional[BallCover] = None
                        ) -> tuple[ScalarField, SweepTrace]:
    """Sequentially lift u over the level's ball cover.

    The output dominates u; a refused lift aborts the sweep at that ball and
    returns the partial output with the trace collected so far (completed
    stays False), so a deterministic restart is possible.
    """
    opts = opts or SolveOptions()
    cover = cover or build_ball_cover(mask, level)
    work = u.values.copy()
    records = []
    completed = True
    for k, center in enumerate(cover.centers):
        try:
            inc_max, inc_min, iters, repaired = _lift_inplace(
                work, u.grid, mask, center, cover.radius, opts)
        except PerronLiftRefused:
            completed = False
            break
        records.append(SweepRecord(index=k, center=tuple(center),
                                   max_increase=inc_max, min_increase=inc_min,
                                   iterations=iters, repaired_cells=repaired))
    both = np.isfinite(u.values) & np.isfinite(work)
    sup_change = float(np.max(np.abs(work[both] - u.values[both]))) \
        if both.any() else 0.0
    monotone = min((r.min_increase for r in records), default=0.0)
    extended = u.extended and bool(np.isneginf(work).any())
    current = ScalarField(grid=u.grid, values=work, provenance="lifted",
                          extended=extended)
    trace = SweepTrace(level=level, records=records, sup_change=sup_change,
                       completed=completed, monotone_within=monotone)
    return current, trace


@dataclass
class SequenceTerm:
    field: ScalarField
    level: int
    eps: float
    defect: float


def smooth_subharmonic_sequence(u: ScalarField, mask: DomainMask,
                                levels: Sequence[tuple],
                                opts: Optional[SolveOptions] = None
                                ) -> list[SequenceTerm]:
    """Sweep-then-mollify approximations with their near-subharmonicity defect.

    levels is a list of (j, eps_j) with eps_j >= 2h and eps_j <= 2^-j / 4;
    each term is mollify(sweep(u, j), eps_j) and the defect is the largest
    negative density it exhibits (zero for exactly subharmonic output).
    """
    h = u.grid.h
    out = []
    for level, eps in levels:
        if eps < 2 * h - 1e-12:
            raise SizingError(f"eps={eps} under-resolved (needs >= 2h = {2*h})")
        if eps > 2.0 ** (-level) / 4.0 + 1e-12:
            raise SizingError(f"eps={eps} too coarse for level {level}")
        swept, trace = approximation_sweep(u, mask, level, opts=opts)
        if not trace.completed:
            raise PerronLiftRefused(f"sweep at level {level} aborted", field=swept)
        smooth = mollify_field(swept, eps)
        dens = h1_density(smooth).values
        have = ~np.isnan(dens)
        defect = float(max(0.0, -dens[have].min())) if have.any() else 0.0
        out.append(SequenceTerm(field=smooth, level=level, eps=eps, defect=defect))
    return out


def direct_mollified_sequence(u: ScalarField, eps_list: Sequence[float]
                              ) -> list[SequenceTerm]:
    """Plain mollifications of u at a decreasing scale schedule.

    For convex fields this is an exactly subharmonic smooth sequence; for
    merely subharmonic fields the defect is reported per term just like the
    sweep route.
    """
    out = []
    for eps in eps_list:
        smooth = mollify_field(u, eps)
        dens = h1_density(smooth).values
        have = ~np.isnan(dens)
        defect = float(max(0.0, -dens[have].min())) if have.any() else 0.0
        out.append(SequenceTerm(field=smooth, level=-1, eps=eps, defect=defect))
    return out
