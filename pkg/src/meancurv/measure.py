"""Curvature mass of fields on test balls, and weak-convergence checks.

For a smooth field the mass of a ball is the density integral, which the
conservative scheme makes identical to the sphere flux.  For a nonsmooth
field the mass is the extrapolated limit of the fluxes of an approximating
sequence, with the spread over the last terms kept as an error bar and any
near-subharmonicity defect propagated into the negativity allowance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .field import DomainMask, ScalarField, SizingError
from .mco import CircleInterface, PairInterface, boundary_flux, h1_density


@dataclass(frozen=True)
class BallFamily:
    """Deterministic family of test balls with room for inflation by gap."""

    balls: tuple          # ((center tuple, radius), ...)
    gap: float
    seed: int

    def __len__(self):
        return len(self.balls)

    def __iter__(self):
        return iter(self.balls)


def generate_ball_family(mask: DomainMask, count: int, r_min: float, r_max: float,
                         gap: float = 0.0, seed: int = 0,
                         margin: Optional[float] = None) -> BallFamily:
    """Seeded rejection sampling of balls whose gap-inflations stay inside."""
    grid = mask.grid
    if r_min < 8 * grid.h - 1e-12:
        raise SizingError(f"ball radii must be >= 8h = {8*grid.h}")
    rng = np.random.default_rng(seed)
    margin = 2 * grid.h if margin is None else margin
    pts = grid.points()
    lo = [float(pts[..., k].min()) for k in range(grid.n)]
    hi = [float(pts[..., k].max()) for k in range(grid.n)]
    balls = []
    attempts = 0
    while len(balls) < count and attempts < 20000:
        attempts += 1
        c = tuple(rng.uniform(lo[k], hi[k]) for k in range(grid.n))
        r = float(rng.uniform(r_min, r_max))
        sd = float(np.asarray(mask.shape.signed_distance(np.asarray(c)[None, :])).ravel()[0])
        if sd >= r + gap + margin:
            balls.append((c, r))
    if len(balls) < count:
        raise SizingError("could not place the requested ball family")
    return BallFamily(balls=tuple(balls), gap=gap, seed=seed)


def _interface_for(grid_n: int, center, radius):
    if grid_n == 1:
        return PairInterface(center[0] - radius, center[0] + radius)
    return CircleInterface(tuple(center), radius)


def ball_flux(u: ScalarField, center, radius) -> float:
    return boundary_flux(u, _interface_for(u.grid.n, center, radius))


@dataclass
class BallMeasureRow:
    center: tuple
    radius: float
    mu: float
    band: float
    converged: bool
    per_term: tuple = ()


@dataclass
class BallMeasureTable:
    rows: list
    method: str               # density-integral | flux | limit-of-sequence
    eps_neg: float            # defect-propagated negativity allowance
    total_mass: float

    def mu(self, k: int) -> float:
        return self.rows[k].mu

    def to_csv_rows(self):
        for r in self.rows:
            yield (*r.center, r.radius, r.mu, r.band, int(r.converged))


def _sequence_fields(seq) -> tuple[list, float]:
    """Normalize a sequence argument to (fields, max defect of last terms)."""
    fields = []
    defects = []
    for term in seq:
        if isinstance(term, ScalarField):
            fields.append(term)
            defects.append(0.0)
        else:
            fields.append(term.field)
            defects.append(float(getattr(term, "defect", 0.0)))
    tail = defects[-3:] if defects else [0.0]
    return fields, max(tail)


def extrapolate_tail(values: Sequence[float]) -> tuple[float, float]:
    """Limit estimate from the last three terms plus their spread.

    The Aitken correction is applied only to clean geometric tails (same
    sign, shrinking increments, correction no bigger than the last step);
    anything noisier keeps the raw last term, which for these sequences is
    already flux-accurate while a misfired Aitken step is not.
    """
    v = [float(x) for x in values]
    if len(v) == 1:
        return v[0], 0.0
    if len(v) == 2:
        return v[1], abs(v[1] - v[0])
    a, b, c = v[-3], v[-2], v[-1]
    d1, d2 = b - a, c - b
    limit = c
    if d1 != 0.0 and np.sign(d1) == np.sign(d2) and abs(d2) < abs(d1):
        denom = d2 - d1
        cand = c - d2 ** 2 / denom
        if np.isfinite(cand) and abs(cand - c) <= 1.5 * abs(d2):
            limit = cand
    spread = max(v[-3:]) - min(v[-3:])
    return float(limit), float(spread)


def ball_measure_table(u_or_sequence, balls: BallFamily,
                       method: Optional[str] = None,
                       rel_band: float = 0.25) -> BallMeasureTable:
    """Curvature mass on every test ball.

    A single field uses the density integral (== flux, by the discrete
    divergence theorem); a sequence of fields reports the extrapolated limit
    of per-term fluxes with the last-three-term spread as the band, flagging
    balls whose spread exceeds rel_band of the reported scale.
    """
    if isinstance(u_or_sequence, ScalarField):
        u = u_or_sequence
        method = method or "density-integral"
        dens = h1_density(u).values
        hv = u.grid.cell_volume
        pts = u.grid.points()
        rows = []
        for center, radius in balls:
            if method == "flux":
                mu = ball_flux(u, center, radius)
            else:
                inter = _interface_for(u.grid.n, center, radius)
                inside = inter.inside(pts)
                vals = dens[inside]
                mu = float(np.nansum(vals) * hv)
            rows.append(BallMeasureRow(center=tuple(center), radius=radius,
                                       mu=mu, band=0.0, converged=True))
        total = float(np.nansum(dens) * hv)
        return BallMeasureTable(rows=rows, method=method, eps_neg=1e-12,
                                total_mass=total)

    fields, defect = _sequence_fields(u_or_sequence)
    if not fields:
        raise ValueError("empty approximating sequence")
    rows = []
    total_terms = []
    for center, radius in balls:
        per = [ball_flux(f, center, radius) for f in fields]
        mu, spread = extrapolate_tail(per)
        scale = max(abs(mu), 0.2)
        rows.append(BallMeasureRow(center=tuple(center), radius=radius, mu=mu,
                                   band=spread, converged=spread <= rel_band * scale,
                                   per_term=tuple(per)))
    for f in fields[-1:]:
        dens = h1_density(f).values
        total_terms.append(float(np.nansum(dens) * f.grid.cell_volume))
    volumes = [math.pi * r * r if fields[0].grid.n == 2 else 2 * r
               for (_, r) in balls]
    eps_neg = defect * max(volumes) + 1e-12
    return BallMeasureTable(rows=rows, method="limit-of-sequence",
                            eps_neg=eps_neg, total_mass=total_terms[-1])


@dataclass
class SandwichRow:
    center: tuple
    radius: float
    mu_a_r: float
    mu_b_inflated: float
    mu_b_r: float
    mu_a_inflated: float
    slack_ab: float
    slack_ba: float
    ok: bool


@dataclass
class SandwichVerdict:
    passed: bool
    rows: list
    worst: Optional[SandwichRow]
    l1_gap: float


def weak_convergence_check(seq_a, seq_b, balls: BallFamily, gap: float,
                           tol: float, l1_tol: float = 0.1) -> SandwichVerdict:
    """Two-sided sandwich between the measures of two approximating sequences.

    For every ball, mass_a(B_r) <= mass_b(B_{r+gap}) within tol (relative)
    and symmetrically.  Refused when the two sequences do not agree in L1,
    since then they are not approximations of the same field.
    """
    fa, defect_a = _sequence_fields(seq_a)
    fb, defect_b = _sequence_fields(seq_b)
    ua, ub = fa[-1], fb[-1]
    both = np.isfinite(ua.values) & np.isfinite(ub.values)
    if not both.any():
        raise ValueError("sequences have no common defined cells")
    l1 = float(np.abs(ua.values[both] - ub.values[both]).mean())
    if l1 > l1_tol:
        raise ValueError(f"sequences disagree in L1 (mean gap {l1:.3g} > {l1_tol});"
                         " sandwich check refused")
    eps_neg = (max(defect_a, defect_b)) + 1e-12
    rows = []
    worst = None
    worst_slack = -np.inf
    for center, radius in balls:
        mu_a_r, _ = extrapolate_tail([ball_flux(f, center, radius) for f in fa])
        mu_b_r, _ = extrapolate_tail([ball_flux(f, center, radius) for f in fb])
        mu_a_i, _ = extrapolate_tail([ball_flux(f, center, radius + gap) for f in fa])
        mu_b_i, _ = extrapolate_tail([ball_flux(f, center, radius + gap) for f in fb])
        allow_ab = tol * max(abs(mu_b_i), 0.05) + eps_neg
        allow_ba = tol * max(abs(mu_a_i), 0.05) + eps_neg
        slack_ab = mu_a_r - mu_b_i - allow_ab
        slack_ba = mu_b_r - mu_a_i - allow_ba
        ok = slack_ab <= 0 and slack_ba <= 0
        row = SandwichRow(center=tuple(center), radius=radius, mu_a_r=mu_a_r,
                          mu_b_inflated=mu_b_i, mu_b_r=mu_b_r, mu_a_inflated=mu_a_i,
                          slack_ab=slack_ab, slack_ba=slack_ba, ok=ok)
        rows.append(row)
        s = max(slack_ab, slack_ba)
        if s > worst_slack:
            worst_slack = s
            worst = row
    return SandwichVerdict(passed=all(r.ok for r in rows), rows=rows, worst=worst,
                           l1_gap=l1)


@dataclass
class SingularMassResult:
    mass: float
    band: float
    converged: bool
    samples: tuple      # (width, shell mass) pairs, widest first


def interface_singular_mass(u: ScalarField, jump, widths: Sequence[float],
                            ) -> SingularMassResult:
    """Mass concentrated on a declared codimension-1 jump set.

    jump is {"circle": (center, radius)} in 2d or {"point": x0} in 1d; the
    shell mass at width w is the flux difference across the annulus of
    half-width w around the jump, and the mass is its extrapolation to
    w -> 0 (quadratic through three widths, banded by the distance to the
    linear extrapolation).  A non-convergent extrapolation is flagged and
    the mass should not be trusted.
    """
    widths = sorted(float(w) for w in widths)
    if len(widths) != 3:
        raise ValueError("need exactly three shell widths")
    if widths[0] < 2 * u.grid.h:
        raise SizingError("smallest shell width under-resolved (< 2h)")
    samples = []
    for w in widths:
        if "circle" in jump:
            center, radius = jump["circle"]
            outer = ball_flux(u, center, radius + w)
            inner = ball_flux(u, center, radius - w)
            samples.append((w, outer - inner))
        elif "point" in jump:
            x0 = jump["point"]
            samples.append((w, ball_flux(u, (x0,), w)))
        else:
            raise ValueError("jump must declare a circle or a point")
    ws = np.array([s[0] for s in samples])
    ms = np.array([s[1] for s in samples])
    # quadratic extrapolation to w = 0 (Lagrange), banded against linear
    quad = 0.0
    for i in range(3):
        num = 1.0
        den = 1.0
        for j in range(3):
            if j != i:
                num *= -ws[j]
                den *= ws[i] - ws[j]
        quad += ms[i] * num / den
    linear = (ms[0] * ws[1] - ms[1] * ws[0]) / (ws[1] - ws[0])
    floor = 1e-9 * (1.0 + float(np.abs(ms).max()))
    band = abs(quad - linear) + floor
    spread = float(ms.max() - ms.min())
    converged = band <= max(0.75 * spread, 10 * floor)
    return SingularMassResult(mass=float(quad), band=float(band),
                              converged=bool(converged),
                              samples=tuple((float(w), float(m)) for w, m in samples))


def total_mass_bound(u: ScalarField, mask: DomainMask) -> tuple[float, float]:
    """Total density mass over the interior vs the face-count boundary measure.

    The discrete mirror of 'total curvature mass is at most the boundary
    area' holds against the face measure of the discrete boundary, which is
    the natural length the flux bound |F| < 1 sums against.
    """
    dens = h1_density(u).values
    have = mask.interior & ~np.isnan(dens)
    total = float(dens[have].sum() * u.grid.cell_volume)
    inter = mask.interior
    n = u.grid.n
    faces = 0
    if n == 1:
        faces += int((inter[1:] != inter[:-1]).sum())
    else:
        faces += int((inter[1:, :] != inter[:-1, :]).sum())
        faces += int((inter[:, 1:] != inter[:, :-1]).sum())
    return total, faces * u.grid.h ** (n - 1)
