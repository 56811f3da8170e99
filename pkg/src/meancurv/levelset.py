"""Level-set analytics: Harnack reports, co-area profiles, margins, decay.

Superlevel sets of a field inside clip balls are measured with the subcell
interface machinery; from those come the interior/boundary interface split,
the geodesic radius of the spherical trace, co-area consistency tables, the
measure-vs-perimeter margin of a set family, and the decay-threshold check
behind uniform lower bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .field import (
    DiscreteSet,
    DomainMask,
    ScalarField,
    SizingError,
    interface_segments,
    superlevel_set,
)
from .mco import cell_gradients


#: default threshold parameter for the steep-gradient interface fraction
def default_delta(n: int) -> float:
    return 4.0 ** (-n)


# ---------------------------------------------------------------------------
# per-(r, t) level set statistics


@dataclass
class LevelSetStats:
    r: float
    t: float
    volume: float
    gamma_int: float
    gamma_bdy: float
    rho: float                  # geodesic (arc half-length) radius on the clip circle
    ratio_bdy_int: float        # inf when gamma_int is empty
    steep_fraction: float       # fraction of gamma_bdy with |Du| > 2/sqrt(delta)
    delta: float
    empty: bool = False
    ambiguous: bool = False     # interface ran through near-flat gradient cells


def level_set_report(u: ScalarField, mask: DomainMask, r: float, t: float,
                     delta: Optional[float] = None, center=None) -> LevelSetStats:
    """Geometry of the superlevel set of u above t clipped to the r-ball."""
    n = u.grid.n
    delta = default_delta(n) if delta is None else float(delta)
    s = superlevel_set(u, mask, t, r=r, center=center)
    if s.is_empty():
        return LevelSetStats(r=r, t=t, volume=0.0, gamma_int=0.0, gamma_bdy=0.0,
                             rho=0.0, ratio_bdy_int=float("nan"), steep_fraction=0.0,
                             delta=delta, empty=True)
    geo = s.geometry()
    rho = geo.gamma_int / 2.0
    ratio = geo.gamma_bdy / geo.gamma_int if geo.gamma_int > 0 else float("inf")
    steep, ambiguous = _steep_interface_fraction(u, s, delta)
    ambiguous = ambiguous or _level_exactly_attained(u, s, float(t))
    return LevelSetStats(r=r, t=t, volume=geo.volume, gamma_int=geo.gamma_int,
                         gamma_bdy=geo.gamma_bdy, rho=rho, ratio_bdy_int=ratio,
                         steep_fraction=steep, delta=delta, ambiguous=ambiguous)


def _interp_gradient(u: ScalarField, grads: np.ndarray, point) -> float:
    """|Du| at a point by bilinear interpolation of cell-center gradients."""
    grid = u.grid
    comps = []
    for d in range(grid.n):
        comps.append(_bilinear(grid, grads[..., d], point))
    return float(math.hypot(*comps)) if grid.n == 2 else abs(comps[0])


def _bilinear(grid, arr, point):
    idx = []
    frac = []
    for k in range(grid.n):
        x = (point[k] - grid.origin[k]) / grid.h
        i = int(math.floor(x))
        i = min(max(i, 0), grid.extents[k] - 2)
        idx.append(i)
        frac.append(min(max(x - i, 0.0), 1.0))
    if grid.n == 1:
        a, b = arr[idx[0]], arr[idx[0] + 1]
        if np.isnan(a) or np.isnan(b):
            return a if not np.isnan(a) else b
        return a * (1 - frac[0]) + b * frac[0]
    i, j = idx
    fx, fy = frac
    block = arr[i:i + 2, j:j + 2]
    if np.isnan(block).any():
        ok = ~np.isnan(block)
        return float(block[ok].mean()) if ok.any() else float("nan")
    return float(block[0, 0] * (1 - fx) * (1 - fy) + block[1, 0] * fx * (1 - fy)
                 + block[0, 1] * (1 - fx) * fy + block[1, 1] * fx * fy)


def _level_exactly_attained(u: ScalarField, s: DiscreteSet, t: float) -> bool:
    """True when the level value sits exactly on cells adjacent to the set.

    That is the discrete signature of a critical (Sard-excluded) level: the
    interface runs along a plateau and its reconstruction is ambiguous.
    """
    member = s.member
    vals = u.values
    hit = np.zeros(member.shape, bool)
    if u.grid.n == 1:
        hit[1:] |= member[:-1] & ~member[1:] & (vals[1:] == t)
        hit[:-1] |= member[1:] & ~member[:-1] & (vals[:-1] == t)
    else:
        hit[1:, :] |= member[:-1, :] & ~member[1:, :] & (vals[1:, :] == t)
        hit[:-1, :] |= member[1:, :] & ~member[:-1, :] & (vals[:-1, :] == t)
        hit[:, 1:] |= member[:, :-1] & ~member[:, 1:] & (vals[:, 1:] == t)
        hit[:, :-1] |= member[:, 1:] & ~member[:, :-1] & (vals[:, :-1] == t)
    return bool(hit.any())


def _steep_interface_fraction(u: ScalarField, s: DiscreteSet, delta: float):
    """Length fraction of the level interface where |Du| > 2 delta^-1/2."""
    if u.grid.n == 1:
        return 0.0, False
    grads = cell_gradients(u)
    thresh = 2.0 / math.sqrt(delta)
    total = 0.0
    steep = 0.0
    ambiguous = False
    for p1, p2, kind in interface_segments(s):
        if kind != "level":
            continue
        mid = 0.5 * (np.asarray(p1) + np.asarray(p2))
        g = _interp_gradient(u, grads, mid)
        seg = float(np.hypot(*(np.asarray(p2) - np.asarray(p1))))
        if not np.isfinite(g):
            ambiguous = True
            continue
        if g < 1e-8:
            ambiguous = True
        total += seg
        if g > thresh:
            steep += seg
    frac = steep / total if total > 0 else 0.0
    return frac, ambiguous


# ---------------------------------------------------------------------------
# co-area profile


@dataclass
class CoareaRow:
    t: float
    volume: float
    dvolume_dt: float
    interface_integral: float   # integral of 1/|Du| over the level interface
    flagged: bool


@dataclass
class CoareaTable:
    rows: list
    max_mismatch: float         # worst |phi' + integral| / max(|phi'|, floor)

    def to_csv_rows(self):
        for r in self.rows:
            yield (r.t, r.volume, r.dvolume_dt, r.interface_integral, int(r.flagged))


def coarea_profile(u: ScalarField, mask: DomainMask, r: Optional[float] = None,
                   levels: Optional[Sequence[float]] = None,
                   center=None) -> CoareaTable:
    """Superlevel volume phi(t), its t-derivative, and the co-area integral.

    phi' comes from centered differencing on the level grid; the co-area
    integral quadratures 1/|Du| over the reconstructed level interface.
    Levels where the interface runs through |Du| < 1e-8 cells are flagged
    (the derivative can be meaningless there) and excluded from the
    mismatch summary.
    """
    if u.provenance not in ("solved", "mollified", "sampled", "lifted"):
        raise ValueError("co-area profile needs a field, not a density")
    vals = u.values[mask.interior & u.defined]
    if levels is None:
        lo, hi = np.quantile(vals, [0.05, 0.95])
        levels = np.linspace(lo, hi, 21)
    levels = np.asarray(sorted(levels), dtype=float)
    grads = cell_gradients(u)
    phis = []
    integrals = []
    flags = []
    for t in levels:
        s = superlevel_set(u, mask, float(t), r=r, center=center)
        phis.append(s.volume)
        if s.is_empty() or u.grid.n == 1:
            integrals.append(0.0 if s.is_empty() else _coarea_integral_1d(u, s, grads))
            flags.append(False if s.is_empty()
                         else _level_exactly_attained(u, s, float(t)))
            continue
        total = 0.0
        flagged = _level_exactly_attained(u, s, float(t))
        for p1, p2, kind in interface_segments(s):
            if kind != "level":
                continue
            mid = 0.5 * (np.asarray(p1) + np.asarray(p2))
            gmag = _interp_gradient(u, grads, mid)
            seg = float(np.hypot(*(np.asarray(p2) - np.asarray(p1))))
            if not np.isfinite(gmag) or gmag < 1e-8:
                flagged = True
                continue
            total += seg / gmag
        integrals.append(total)
        flags.append(flagged)
    phis = np.asarray(phis)
    dphi = (np.gradient(phis, levels) if len(levels) > 1
            else np.full(1, float("nan")))
    rows = []
    mism = 0.0
    for k, t in enumerate(levels):
        interiorish = 0 < k < len(levels) - 1
        row = CoareaRow(t=float(t), volume=float(phis[k]), dvolume_dt=float(dphi[k]),
                        interface_integral=float(integrals[k]), flagged=bool(flags[k]))
        rows.append(row)
        if interiorish and not row.flagged and (abs(row.dvolume_dt) > 1e-12
                                                or row.interface_integral > 1e-12):
            scale = max(abs(row.dvolume_dt), row.interface_integral, 1e-12)
            mism = max(mism, abs(row.dvolume_dt + row.interface_integral) / scale)
    return CoareaTable(rows=rows, max_mismatch=mism)


def _coarea_integral_1d(u: ScalarField, s: DiscreteSet, grads) -> float:
    total = 0.0
    member = s.member
    for i in range(member.size - 1):
        if member[i] == member[i + 1]:
            continue
        g = abs(grads[i, 0]) if not np.isnan(grads[i, 0]) else abs(grads[i + 1, 0])
        if np.isfinite(g) and g > 1e-8:
            total += 1.0 / g
    return total


# ---------------------------------------------------------------------------
# Harnack reports


@dataclass
class HarnackReport:
    r: float
    sup_half: float
    inf_half: float
    ratio: float
    psi: list                   # (t, sphere measure above t) rows
    center: tuple

    def to_csv_rows(self):
        for t, m in self.psi:
            yield (t, m)


def sphere_values(u: ScalarField, r: float, center=None, samples: Optional[int] = None):
    """Field values interpolated on the sphere of radius r (both points in 1d)."""
    grid = u.grid
    center = center or (0.0,) * grid.n
    if grid.n == 1:
        pts = [center[0] - r, center[0] + r]
        vals = [_bilinear(grid, u.values, (p,)) for p in pts]
        return np.asarray(vals), 2.0 / len(vals)
    m = samples or max(64, int(2 * math.pi * r / grid.h) * 2)
    theta = (np.arange(m) + 0.5) * 2 * math.pi / m
    vals = np.array([
        _bilinear(grid, u.values, (center[0] + r * math.cos(a),
                                   center[1] + r * math.sin(a)))
        for a in theta])
    return vals, 2 * math.pi * r / m


def harnack_report(u: ScalarField, mask: DomainMask, r: float, center=None,
                   levels: Optional[Sequence[float]] = None,
                   forcing: Optional[str] = None) -> HarnackReport:
    """Sup/inf over the half ball and the sphere-measure decay profile.

    Requires a positive solved field (an inhomogeneous forcing can be
    recorded via *forcing* but positivity is still mandatory).
    """
    grid = u.grid
    center = center or (0.0,) * grid.n
    if u.provenance != "solved":
        raise ValueError("harnack report expects a solved field "
                         f"(got provenance {u.provenance!r})")
    pts = grid.points()
    if grid.n == 1:
        dist = np.abs(pts[..., 0] - center[0])
    else:
        dist = np.hypot(pts[..., 0] - center[0], pts[..., 1] - center[1])
    ball = mask.interior & (dist <= r) & u.defined
    if not ball.any():
        raise SizingError("harnack ball contains no cells")
    if float(np.nanmin(u.values[ball])) <= 0.0:
        raise ValueError("harnack hypothesis violated: field not positive on the ball")
    half = ball & (dist <= r / 2.0)
    sup_half = float(np.nanmax(u.values[half]))
    inf_half = float(np.nanmin(u.values[half]))
    svals, darc = sphere_values(u, r, center)
    svals = svals[np.isfinite(svals)]
    if levels is None:
        levels = _psi_levels(svals)
    psi = [(float(t), float((svals > t).sum() * darc)) for t in levels]
    return HarnackReport(r=r, sup_half=sup_half, inf_half=inf_half,
                         ratio=sup_half / inf_half, psi=psi, center=tuple(center))


def _psi_levels(svals: np.ndarray) -> np.ndarray:
    """Geometric level grid t_k = t0 * 2^(k/4) plus the extreme quantiles."""
    lo = max(float(svals.min()) * 0.9, 1e-6)
    hi = float(svals.max()) * 1.05 + 1e-6
    k = int(math.ceil(4 * math.log2(hi / lo))) + 1
    geo = lo * 2.0 ** (np.arange(k) / 4.0)
    crit = np.quantile(svals, [0.0, 0.02, 0.98, 1.0])
    return np.unique(np.concatenate([geo, crit]))


@dataclass
class WeakHarnackResult:
    sup_half: float
    integral_bound: float       # (r^-n integral of (u+)^p)^(1/p)
    implied_constant: float
    p: float
    r: float
    undefined: bool = False


def weak_harnack_check(u: ScalarField, mask: DomainMask, p: float, r: float,
                       center=None) -> WeakHarnackResult:
    """Ratio of the half-ball sup to the normalized p-mean of the positive part."""
    if p <= 0:
        raise ValueError("p must be positive")
    grid = u.grid
    center = center or (0.0,) * grid.n
    pts = grid.points()
    if grid.n == 1:
        dist = np.abs(pts[..., 0] - center[0])
    else:
        dist = np.hypot(pts[..., 0] - center[0], pts[..., 1] - center[1])
    ball = mask.interior & (dist <= r) & u.defined
    half = ball & (dist <= r / 2.0)
    sup_half = float(np.nanmax(u.values[half]))
    uplus = np.maximum(u.values[ball], 0.0)
    integral = float((uplus ** p).sum() * grid.cell_volume)
    if integral <= 0.0:
        return WeakHarnackResult(sup_half=sup_half, integral_bound=0.0,
                                 implied_constant=float("nan"), p=p, r=r,
                                 undefined=True)
    bound = (integral / r ** grid.n) ** (1.0 / p)
    return WeakHarnackResult(sup_half=sup_half, integral_bound=bound,
                             implied_constant=sup_half / bound, p=p, r=r)


# ---------------------------------------------------------------------------
# measure-vs-perimeter margin over a set family


@dataclass
class FamilyMember:
    kind: str
    descriptor: tuple
    nu: float
    perimeter: float

    @property
    def ratio(self) -> float:
        return self.nu / self.perimeter


@dataclass
class EtaMarginReport:
    family_size: int
    excluded: int
    max_ratio: float
    eta_star: float
    worst: Optional[FamilyMember]


@dataclass
class SetFamily:
    """Declared family of candidate sets for the margin certification.

    rectangles: enumerate all cell-aligned rectangles inside the interior
    (strided by rect_stride to cap the count on big grids); balls: lattice
    of centers x radius list; annuli: explicit (r_in, r_out) list around a
    center; superlevels: all sublevel/superlevel sets of a field at given
    thresholds.
    """

    rectangles: bool = True
    rect_stride: int = 1
    rect_max: Optional[int] = None
    ball_radii: tuple = ()
    ball_stride: int = 4
    annuli: tuple = ()          # ((center, r_in, r_out), ...)
    superlevel_field: Optional[ScalarField] = None
    superlevel_thresholds: tuple = ()


def eta_margin(nu, mask: DomainMask, family: SetFamily) -> EtaMarginReport:
    """Largest measure/perimeter ratio over the family; eta* = 1 - max ratio.

    nu is a density field (mass = cell sums) or a measure specification with
    density, curve and atom parts.  Rectangles use their exact perimeter,
    balls and annuli the analytic circumference of their continuum proxies,
    superlevel sets their reconstructed interface length.  Zero-perimeter
    members are excluded with a count.
    """
    grid = mask.grid
    evaluator = _measure_evaluator(nu, mask)
    members = []
    excluded = 0

    if family.rectangles and grid.n == 2:
        members.extend(_rect_members(evaluator, mask, family))
    if family.rectangles and grid.n == 1:
        members.extend(_interval_members(evaluator, mask, family))
    for radius in family.ball_radii:
        members.extend(_ball_members(evaluator, mask, radius, family.ball_stride))
    for center, r_in, r_out in family.annuli:
        nu_val = evaluator.annulus(center, r_in, r_out)
        per = 2 * math.pi * (r_in + r_out) if grid.n == 2 else 4.0
        members.append(FamilyMember(kind="annulus", descriptor=(center, r_in, r_out),
                                    nu=nu_val, perimeter=per))
    if family.superlevel_field is not None:
        for t in family.superlevel_thresholds:
            s = superlevel_set(family.superlevel_field, mask, float(t))
            if s.is_empty():
                excluded += 1
                continue
            per = s.geometry().perimeter
            if per <= 0:
                excluded += 1
                continue
            nu_val = evaluator.cells(s.member)
            members.append(FamilyMember(kind="superlevel", descriptor=(float(t),),
                                        nu=nu_val, perimeter=per))

    members = [m for m in members if m.perimeter > 0]
    if not members:
        raise ValueError("empty set family")
    worst = max(members, key=lambda m: m.ratio)
    return EtaMarginReport(family_size=len(members), excluded=excluded,
                           max_ratio=worst.ratio, eta_star=1.0 - worst.ratio,
                           worst=worst)


class _measure_evaluator:
    """nu(set) for density fields and measure specifications."""

    def __init__(self, nu, mask: DomainMask):
        self.mask = mask
        self.grid = mask.grid
        self.density = None
        self.curves = []
        self.atoms = []
        if isinstance(nu, ScalarField):
            self.density = np.where(np.isfinite(nu.values), nu.values, 0.0)
        elif nu is None:
            pass
        else:  # MeasureSpec-like object
            dens = getattr(nu, "density", None)
            if dens is not None:
                from .field import sample_function
                if callable(dens):
                    fld = sample_function(dens, self.grid, mask)
                    self.density = np.where(np.isfinite(fld.values), fld.values, 0.0)
                elif isinstance(dens, ScalarField):
                    self.density = np.where(np.isfinite(dens.values), dens.values, 0.0)
                else:
                    self.density = np.full(self.grid.shape, float(dens))
            for curve in getattr(nu, "curves", ()):
                self.curves.append(curve)
            for atom in getattr(nu, "atoms", ()):
                self.atoms.append(atom)
        self._arc_cache = []
        h = self.grid.h
        for curve in self.curves:
            step = h / 2.0
            npts = max(8, int(math.ceil(2 * math.pi * curve.radius / step)))
            ang = (np.arange(npts) + 0.5) * 2 * math.pi / npts
            pts = np.stack([curve.center[0] + curve.radius * np.cos(ang),
                            curve.center[1] + curve.radius * np.sin(ang)], axis=1)
            w = curve.lam * 2 * math.pi * curve.radius / npts
            self._arc_cache.append((pts, w))

    def cells(self, member: np.ndarray) -> float:
        total = 0.0
        if self.density is not None:
            total += float(self.density[member & self.mask.interior].sum()
                           * self.grid.cell_volume)
        for pts, w in self._arc_cache:
            idx = self._cell_index(pts)
            inside = member[tuple(idx.T)]
            total += float(inside.sum() * w)
        for x0, mass in self.atoms:
            i = int(round((x0 - self.grid.origin[0]) / self.grid.h))
            if 0 <= i < self.grid.extents[0] and member[i]:
                total += mass
        return total

    def _cell_index(self, pts: np.ndarray) -> np.ndarray:
        idx = np.empty(pts.shape, dtype=np.int64)
        for k in range(self.grid.n):
            idx[:, k] = np.clip(np.round((pts[:, k] - self.grid.origin[k])
                                         / self.grid.h), 0,
                                self.grid.extents[k] - 1)
        return idx

    def region(self, inside: np.ndarray) -> float:
        return self.cells(inside)

    def annulus(self, center, r_in, r_out) -> float:
        pts = self.grid.points()
        if self.grid.n == 1:
            dist = np.abs(pts[..., 0] - center[0])
        else:
            dist = np.hypot(pts[..., 0] - center[0], pts[..., 1] - center[1])
        return self.cells((dist > r_in) & (dist < r_out) & self.mask.interior)

    def ball(self, center, radius) -> float:
        pts = self.grid.points()
        if self.grid.n == 1:
            dist = np.abs(pts[..., 0] - center[0])
        else:
            dist = np.hypot(pts[..., 0] - center[0], pts[..., 1] - center[1])
        return self.cells((dist < radius) & self.mask.interior)


def _rect_members(ev, mask: DomainMask, family: SetFamily):
    grid = mask.grid
    inter = mask.interior
    idx = np.argwhere(inter)
    i0, j0 = idx.min(axis=0)
    i1, j1 = idx.max(axis=0)
    h = grid.h
    stride = max(1, family.rect_stride)
    csum = np.zeros((grid.extents[0] + 1, grid.extents[1] + 1))
    dens = ev.density if ev.density is not None else np.zeros(grid.shape)
    csum[1:, 1:] = np.cumsum(np.cumsum(np.where(inter, dens, 0.0), axis=0), axis=1)
    members = []
    count = 0
    has_sing = bool(ev._arc_cache or ev.atoms)
    for a in range(i0, i1 + 1, stride):
        for b in range(a, i1 + 1, stride):
            for c in range(j0, j1 + 1, stride):
                for d in range(c, j1 + 1, stride):
                    block = inter[a:b + 1, c:d + 1]
                    if not block.all():
                        continue
                    count += 1
                    if family.rect_max is not None and count > family.rect_max:
                        return members
                    w = (b - a + 1) * h
                    v = (d - c + 1) * h
                    per = 2.0 * (w + v)
                    nu_val = float(csum[b + 1, d + 1] - csum[a, d + 1]
                                   - csum[b + 1, c] + csum[a, c]) * grid.cell_volume
                    if has_sing:
                        member = np.zeros(grid.shape, bool)
                        member[a:b + 1, c:d + 1] = True
                        nu_val = ev.cells(member)
                    members.append(FamilyMember(
                        kind="rectangle", descriptor=(a, b, c, d),
                        nu=nu_val, perimeter=per))
    return members


def _interval_members(ev, mask: DomainMask, family: SetFamily):
    inter = mask.interior
    idx = np.nonzero(inter)[0]
    i0, i1 = int(idx.min()), int(idx.max())
    stride = max(1, family.rect_stride)
    members = []
    for a in range(i0, i1 + 1, stride):
        for b in range(a, i1 + 1, stride):
            member = np.zeros(mask.grid.shape, bool)
            member[a:b + 1] = True
            members.append(FamilyMember(kind="interval", descriptor=(a, b),
                                        nu=ev.cells(member), perimeter=2.0))
    return members


def _ball_members(ev, mask: DomainMask, radius: float, stride: int):
    grid = mask.grid
    pts = grid.points()
    sdist = mask.shape.signed_distance(pts)
    ok = mask.interior & (sdist >= radius)
    lattice = np.zeros(grid.shape, bool)
    if grid.n == 1:
        lattice[::stride] = True
    else:
        lattice[::stride, ::stride] = True
    members = []
    per = 2 * math.pi * radius if grid.n == 2 else 2.0
    for cidx in np.argwhere(ok & lattice):
        center = tuple(grid.cell_center(tuple(cidx)))
        members.append(FamilyMember(kind="ball", descriptor=(center, radius),
                                    nu=ev.ball(center, radius), perimeter=per))
    return members


# ---------------------------------------------------------------------------
# decay threshold and envelope check


def decay_threshold(eta: float) -> float:
    """Smallest T with T^(2/3) / sqrt(1 + T^(4/3)) >= 1 - eta/2."""
    if not 0 < eta <= 2:
        raise ValueError("eta must lie in (0, 2]")
    m = 1.0 - eta / 2.0
    if m <= 0:
        return 0.0
    fn = lambda T: T ** (2.0 / 3.0) / math.sqrt(1.0 + T ** (4.0 / 3.0)) - m
    lo, hi = 1e-9, 1e9
    return float(brentq(fn, lo, hi, xtol=1e-12, rtol=1e-14))


@dataclass
class DecayReport:
    threshold_T: float
    vanish_level: float
    envelope_constant: float
    predicted_bound: float
    dominated: bool
    table: list                 # (t, phi(t)) rows


def decay_bound_check(u: ScalarField, mask: DomainMask, eta: float,
                      levels: Optional[Sequence[float]] = None) -> DecayReport:
    """Sublevel volume decay against the cube-root envelope shape.

    phi(t) is the volume of {u <= -t}; the report finds the threshold T for
    eta, the measured level where phi vanishes, and the least envelope
    constant C such that phi^(1/n)(t) <= max(0, phi^(1/n)(T)
    + C eta (T^(1/3) - t^(1/3))) at every sampled level.
    """
    if eta <= 0:
        raise ValueError("eta must be positive (measure margin not certified)")
    grid = u.grid
    n = grid.n
    T = decay_threshold(eta)
    vals = u.values[mask.interior & u.defined]
    depth = -float(vals.min())
    if levels is None:
        lo = max(min(depth / 50.0, 0.01), 1e-6)
        hi = max(depth * 1.2, lo * 2, T * 1.1)
        k = int(math.ceil(4 * math.log2(hi / lo))) + 1
        levels = lo * 2.0 ** (np.arange(k) / 4.0)
        levels = np.unique(np.concatenate([levels, [depth * 0.5, depth * 0.9,
                                                    depth, T]]))
    levels = np.asarray(sorted(levels))
    hv = grid.cell_volume
    phi = np.array([float(((vals <= -t).sum()) * hv) for t in levels])
    vanish = float(levels[phi <= 0][0]) if (phi <= 0).any() else float("inf")
    phiT = float(((vals <= -T).sum()) * hv)
    phiT_root = phiT ** (1.0 / n)
    c_lower = 0.0
    for t, p in zip(levels, phi):
        if p <= 0 or t >= T:
            continue
        need = (p ** (1.0 / n) - phiT_root) / (eta * (T ** (1.0 / 3.0) - t ** (1.0 / 3.0)))
        c_lower = max(c_lower, need)
    c = c_lower
    dominated = True
    for t, p in zip(levels, phi):
        env = phiT_root + c * eta * (T ** (1.0 / 3.0) - t ** (1.0 / 3.0))
        if p ** (1.0 / n) > max(env, 0.0) + 1e-12:
            dominated = False
    if c > 0:
        predicted = (T ** (1.0 / 3.0) + phiT_root / (c * eta)) ** 3
    else:
        predicted = T if phiT <= 0 else float("inf")
    return DecayReport(threshold_T=T, vanish_level=vanish, envelope_constant=c,
                       predicted_bound=predicted, dominated=dominated,
                       table=list(zip(levels.tolist(), phi.tolist())))


# ---------------------------------------------------------------------------
# truncated BV norm


def truncated_bv_norm(u: ScalarField, t: float, window: np.ndarray) -> float:
    """Integral of |D max(u, -t)| over the window, from staggered face gradients.

    Each face carries the full staggered gradient magnitude; summing
    h^n |g| over faces inside the window counts every cell once per
    dimension, hence the 1/n normalization toward the isotropic total
    variation.
    """
    if t < 0:
        raise ValueError("truncation level t must be >= 0")
    grid = u.grid
    h = grid.h
    vals = np.where(np.isnan(u.values), np.nan, np.maximum(u.values, -t))
    n = grid.n
    if n == 1:
        g = (vals[1:] - vals[:-1]) / h
        faces_in = window[1:] & window[:-1] & np.isfinite(g)
        return float(np.abs(g[faces_in]).sum() * grid.cell_volume)
    from .mco import face_gradients_2d
    (gx, tx, wx, fx), (gy, ty, wy, fy) = face_gradients_2d(vals, h, fallback_transverse=True)
    mag_x = np.hypot(gx, np.where(np.isfinite(tx), tx, 0.0))
    mag_y = np.hypot(gy, np.where(np.isfinite(ty), ty, 0.0))
    fin_x = window[1:, :] & window[:-1, :] & np.isfinite(mag_x)
    fin_y = window[:, 1:] & window[:, :-1] & np.isfinite(mag_y)
    total = float(mag_x[fin_x].sum() + mag_y[fin_y].sum()) * grid.cell_volume
    return total / n
