"""Dirichlet solvers for the prescribed mean curvature equation.

``solve_dirichlet`` runs damped Newton on the conservative staggered scheme
with exact Dirichlet data on the boundary layer; ``minimize_prescribed_mc``
solves the first-order conditions of the area functional with a smoothed L1
boundary deviation term, pinning the trace wherever the boundary flux stays
strictly below one (active-set polish), so attained-trace minimizers agree
with the Newton solver on the same discrete equations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as _dcfield, replace
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as slinalg

from .field import DomainMask, Grid, ScalarField, UndefinedCellError
from .mco import (
    boundary_length_elements,
    face_gradients_1d,
    face_gradients_2d,
    area_functional,
)

logger = logging.getLogger("meancurv")


class UnboundedDescentError(RuntimeError):
    """The functional decreases without bound along a certified direction.

    Raised when the iterate collapses and a set is found on which the
    prescribed measure exceeds the perimeter: lowering the field on that set
    lowers the functional forever, which is how a violated solvability
    balance shows up.  The witness (set description, margin) is attached.
    """

    def __init__(self, message, witness=None, functional_trace=None):
        super().__init__(message)
        self.witness = witness
        self.functional_trace = functional_trace or []


@dataclass
class SolveOptions:
    max_iter: int = 40
    tol: float = 1e-8               # residual tolerance, density units, max-norm
    sigma: float = 1e-4             # Armijo sufficient-decrease fraction
    alpha_min: float = 2.0 ** -24
    init: str = "harmonic"          # harmonic | zero | provided
    init_field: Optional[ScalarField] = None
    direct_limit: int = 400_000     # unknown count above which Newton steps go iterative

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("need at least one iteration")


@dataclass
class SolveOutcome:
    field: ScalarField
    residual_norm: float
    iterations: int
    converged: bool
    certificate: Optional[dict] = None
    diagnostics: dict = _dcfield(default_factory=dict)


# ---------------------------------------------------------------------------
# core Newton machinery (operates on a sliced window around the region)


def _window(unknown: np.ndarray, fixed: np.ndarray):
    both = unknown | fixed
    idx = np.nonzero(both)
    slices = tuple(slice(int(i.min()), int(i.max()) + 1) for i in idx)
    return slices


def _residual(V: np.ndarray, h: float, n: int, f_arr: np.ndarray,
              rows_interior: np.ndarray, fallback: bool):
    if n == 1:
        _, _, fx = face_gradients_1d(V, h)
        dens = np.full(V.shape, np.nan)
        dens[1:-1] = (fx[1:] - fx[:-1]) / h
        faces = ((None, None, fx),)
    else:
        (gx, tx, wx, fx), (gy, ty, wy, fy) = face_gradients_2d(V, h, fallback)
        dens = np.full(V.shape, np.nan)
        dens[1:-1, 1:-1] = (fx[1:, 1:-1] - fx[:-1, 1:-1]
                            + fy[1:-1, 1:] - fy[1:-1, :-1]) / h
        faces = ((gx, tx, wx, fx), (gy, ty, wy, fy))
    r = dens[rows_interior] - f_arr[rows_interior]
    return r, dens, faces


def _jacobian_triplets_1d(V, h, unk_id, rows_interior):
    g, w, _ = face_gradients_1d(V, h)
    df = 1.0 / w ** 3
    fi = np.arange(g.size)
    rows, cols, vals = [], [], []
    # face i couples cells L=i and R=i+1; dF/dV_L = -df/h, dF/dV_R = +df/h
    for row_cell, row_sign in ((fi, 1.0), (fi + 1, -1.0)):
        for col_cell, col_sign in ((fi, -1.0), (fi + 1, 1.0)):
            rows.append(row_cell)
            cols.append(col_cell)
            vals.append(row_sign * col_sign * df / (h * h))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    row_ids = np.where(rows_interior, unk_id, -1)
    r_id = row_ids[rows]
    c_id = unk_id[cols]
    keep = (r_id >= 0) & (c_id >= 0) & np.isfinite(vals)
    return r_id[keep], c_id[keep], vals[keep]


_STRUCT_CACHE: dict = {}


def _jac_structure_cached(shape, unknown, rows_interior, unk_id, interior_rows_id):
    """Structure lookup keyed by the mask pattern (ball solves repeat it)."""
    key = (shape, unknown.tobytes(), rows_interior.tobytes())
    hit = _STRUCT_CACHE.get(key)
    if hit is None:
        hit = _jac_structure_2d(shape, unk_id, interior_rows_id)
        if len(_STRUCT_CACHE) > 64:
            _STRUCT_CACHE.clear()
        _STRUCT_CACHE[key] = hit
    return hit


def _jac_structure_2d(shape, unk_id, interior_rows_id):
    """Sparsity pattern of the density rows; fixed across Newton iterations.

    Returns (rows, cols, plan) where plan lists, per triplet block, the face
    axis, flat face indices to gather coefficients from, which coefficient
    (normal or transverse) and the sign/scale to apply.
    """
    nx, ny = shape
    row_pad = np.full((nx + 2, ny + 2), -1, dtype=np.int64)
    row_pad[1:-1, 1:-1] = interior_rows_id
    col_pad = np.full((nx + 2, ny + 2), -1, dtype=np.int64)
    col_pad[1:-1, 1:-1] = unk_id
    rows, cols, plan = [], [], []
    for axis in (0, 1):
        if axis == 0:
            fI, fJ = np.meshgrid(np.arange(nx - 1), np.arange(ny), indexing="ij")
            row_offs = ((0, 0), (1, 0))
            deps = [((0, 0), "n", -1.0), ((1, 0), "n", 1.0),
                    ((0, 1), "t", 0.25), ((0, -1), "t", -0.25),
                    ((1, 1), "t", 0.25), ((1, -1), "t", -0.25)]
        else:
            fI, fJ = np.meshgrid(np.arange(nx), np.arange(ny - 1), indexing="ij")
            row_offs = ((0, 0), (0, 1))
            deps = [((0, 0), "n", -1.0), ((0, 1), "n", 1.0),
                    ((1, 0), "t", 0.25), ((-1, 0), "t", -0.25),
                    ((1, 1), "t", 0.25), ((-1, 1), "t", -0.25)]
        fI = fI.ravel()
        fJ = fJ.ravel()
        for ro, row_sign in zip(row_offs, (1.0, -1.0)):
            r_id = row_pad[fI + ro[0] + 1, fJ + ro[1] + 1]
            for (co, kind, scale) in deps:
                c_id = col_pad[fI + co[0] + 1, fJ + co[1] + 1]
                keep = (r_id >= 0) & (c_id >= 0)
                if keep.any():
                    rows.append(r_id[keep])
                    cols.append(c_id[keep])
                    plan.append((axis, np.nonzero(keep)[0], kind, row_sign * scale))
    return np.concatenate(rows), np.concatenate(cols), plan


def _jac_values_2d(h, faces, plan):
    (gx, tx, wx, fx), (gy, ty, wy, fy) = faces
    coeff = {
        (0, "n"): ((1.0 + tx * tx) / wx ** 3).ravel(),
        (0, "t"): (-gx * tx / wx ** 3).ravel(),
        (1, "n"): ((1.0 + ty * ty) / wy ** 3).ravel(),
        (1, "t"): (-gy * ty / wy ** 3).ravel(),
    }
    out = []
    scale = 1.0 / (h * h)
    for axis, idx, kind, sign in plan:
        out.append(coeff[(axis, kind)][idx] * (sign * scale))
    vals = np.concatenate(out)
    # faces whose stencil leaves the region only couple fixed cells; their
    # kept triplets are finite, but guard against stray NaN all the same
    if np.isnan(vals).any():
        vals = np.nan_to_num(vals, nan=0.0)
    return vals


def _factorize(ri, ci, vi, m, opts: SolveOptions):
    """Factor the Newton matrix once; returns a solve closure.

    Dense LU below a few hundred unknowns (BLAS beats SuperLU setup there),
    sparse LU up to the direct limit, diagonally preconditioned Krylov
    beyond it.
    """
    from scipy.linalg import lu_factor, lu_solve
    if m <= 420:
        J = np.zeros((m, m))
        np.add.at(J, (ri, ci), vi)
        fac = lu_factor(J)
        return lambda b: lu_solve(fac, b)
    A = sparse.coo_matrix((vi, (ri, ci)), shape=(m, m)).tocsc()
    if m <= opts.direct_limit:
        solver = slinalg.splu(A)
        return lambda b: solver.solve(b)
    diag = A.diagonal()
    diag = np.where(np.abs(diag) > 1e-14, diag, 1.0)
    precond = slinalg.LinearOperator(A.shape, matvec=lambda x: x / diag)

    def krylov(b):
        x, code = slinalg.bicgstab(A, b, rtol=1e-10, atol=0.0, maxiter=8000,
                                   M=precond)
        if code != 0:
            raise RuntimeError(f"iterative linear solve failed (info={code})")
        return x

    return krylov


def _harmonic_extension(n, shape, unknown, fixed, V):
    """5-point Laplace solve with the fixed values as data (cheap initializer)."""
    unk_id = np.full(shape, -1, dtype=np.int64)
    unk_id[unknown] = np.arange(int(unknown.sum()))
    m = int(unknown.sum())
    rows, cols, vals = [], [], []
    rhs = np.zeros(m)
    offsets = [(-1,), (1,)] if n == 1 else [(-1, 0), (1, 0), (0, -1), (0, 1)]
    idx = np.nonzero(unknown)
    base = unk_id[unknown]
    rows.append(base)
    cols.append(base)
    vals.append(np.full(m, -float(2 * n)))
    for off in offsets:
        nb = tuple(idx[k] + off[k] for k in range(n))
        ok = np.ones(m, bool)
        for k in range(n):
            ok &= (nb[k] >= 0) & (nb[k] < shape[k])
        nb_idx = tuple(np.where(ok, nb[k], 0) for k in range(n))
        nb_unk = np.where(ok, unk_id[nb_idx], -1)
        nb_fix = ok & (nb_unk < 0) & fixed[nb_idx]
        inner = ok & (nb_unk >= 0)
        rows.append(base[inner])
        cols.append(nb_unk[inner])
        vals.append(np.ones(int(inner.sum())))
        np.subtract.at(rhs, base[nb_fix], V[tuple(c[nb_fix] for c in nb_idx)])
    A = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m, m)).tocsr()
    try:
        sol = slinalg.spsolve(A.tocsc(), rhs)
    except Exception:
        sol = np.zeros(m)
    out = V.copy()
    out[unknown] = sol
    return out


def newton_solve(grid: Grid, unknown: np.ndarray, fixed: np.ndarray,
                 fixed_values: np.ndarray, f_values: np.ndarray,
                 opts: SolveOptions, init_values: Optional[np.ndarray] = None,
                 penalty: Optional[dict] = None) -> tuple[np.ndarray, dict]:
    """Damped Newton on the conservative scheme.

    unknown/fixed are full-grid boolean masks; returns the full-grid value
    array (NaN off region) and an info dict.  *penalty*, when given, swaps
    the density equation on selected unknown cells for the smoothed-L1
    boundary stationarity row (used by the functional minimizer).
    """
    values, info = _newton_core(grid.h, grid.n, unknown, fixed, fixed_values,
                                f_values, opts, init_values=init_values,
                                penalty=penalty)
    return values, info


def _newton_core(h: float, n: int, unknown: np.ndarray, fixed: np.ndarray,
                 fixed_values: np.ndarray, f_values: np.ndarray,
                 opts: SolveOptions, init_values: Optional[np.ndarray] = None,
                 penalty: Optional[dict] = None) -> tuple[np.ndarray, dict]:
    """Newton iteration on arrays; slices its own tight window internally."""
    win = _window(unknown, fixed)
    unk = unknown[win]
    fix = fixed[win]
    V = np.full(unk.shape, np.nan)
    V[fix] = fixed_values[win][fix]
    f_arr = np.zeros(unk.shape)
    f_sl = f_values[win]
    f_arr[unk] = np.where(np.isfinite(f_sl[unk]), f_sl[unk], 0.0)

    pen = None
    rows_interior = unk.copy()
    if penalty is not None:
        pcells = penalty["cells"][win]
        rows_interior = unk & ~pcells
        pen = {
            "cells": pcells,
            "phi": penalty["phi"][win],
            "length": penalty["length"][win],
            "kappa": penalty["kappa"],
        }

    if init_values is not None:
        V[unk] = init_values[win][unk]
        if np.isnan(V[unk]).any() or np.isneginf(V[unk]).any():
            V = _repair_init(V, unk, fix)
    elif opts.init == "zero":
        V[unk] = 0.0
    elif opts.init == "provided":
        if opts.init_field is None:
            raise ValueError("init='provided' needs init_field")
        V[unk] = opts.init_field.values[win][unk]
        if np.isnan(V[unk]).any():
            raise ValueError("provided initial field undefined on unknowns")
    else:
        V[~(unk | fix)] = np.nan
        V = _harmonic_extension(n, unk.shape, unk, fix, V)

    unk_id = np.full(unk.shape, -1, dtype=np.int64)
    order = np.nonzero(unk)
    unk_id[order] = np.arange(int(unk.sum()))
    m = int(unk.sum())

    def full_residual(Vcur):
        r_int, dens, faces = _residual(Vcur, h, n, f_arr, rows_interior, pen is not None)
        r = np.zeros(m)
        r[unk_id[rows_interior]] = r_int
        if pen is not None:
            rp = _penalty_residual(Vcur, h, n, pen, faces)
            r[unk_id[pen["cells"]]] = rp
        return r, dens, faces

    r, dens, faces = full_residual(V)
    if np.isnan(r).any():
        raise UndefinedCellError("solver stencil touches undefined cells",
                                 list(zip(*np.nonzero(unk & np.isnan(
                                     np.where(rows_interior, dens, 0.0))))))
    best = (np.max(np.abs(r)), V.copy())
    info = {"iterations": 0, "converged": False, "line_search_failures": 0}
    struct_2d = None
    lu = None  # frozen factorization, reused while it keeps contracting

    def assemble_factorize():
        if n == 1:
            ri, ci, vi = _jacobian_triplets_1d(V, h, unk_id, rows_interior)
        else:
            nonlocal struct_2d
            if struct_2d is None:
                interior_rows_id = np.where(rows_interior, unk_id, -1)
                struct_2d = _jac_structure_cached(V.shape, unk, rows_interior,
                                                  unk_id, interior_rows_id)
            ri, ci = struct_2d[0], struct_2d[1]
            vi = _jac_values_2d(h, faces, struct_2d[2])
        if pen is not None:
            pr, pc, pv = _penalty_triplets(V, h, n, pen, faces, unk_id)
            ri = np.concatenate([ri, pr])
            ci = np.concatenate([ci, pc])
            vi = np.concatenate([vi, pv])
        return _factorize(ri, ci, vi, m, opts)

    for it in range(opts.max_iter):
        rnorm_inf = float(np.max(np.abs(r))) if m else 0.0
        if rnorm_inf <= opts.tol:
            info["converged"] = True
            break
        fresh = lu is None
        if fresh:
            try:
                lu = assemble_factorize()
            except Exception as exc:
                info["error"] = f"linear solve failed: {exc}"
                break
        du = lu(-r)
        if not np.all(np.isfinite(du)):
            if not fresh:
                lu = None
                continue
            info["error"] = "non-finite Newton direction"
            break
        merit = 0.5 * float(r @ r)
        alpha = 1.0
        accepted = False
        while alpha >= opts.alpha_min:
            V_try = V.copy()
            V_try[unk] = V[unk] + alpha * du[unk_id[unk]]
            r_try, dens, faces_try = full_residual(V_try)
            merit_try = 0.5 * float(r_try @ r_try)
            if np.isfinite(merit_try) and merit_try <= (1 - 2 * opts.sigma * alpha) * merit:
                V, r, faces = V_try, r_try, faces_try
                accepted = True
                break
            alpha *= 0.5
        info["iterations"] = it + 1
        if not accepted:
            if not fresh:
                lu = None  # frozen direction went stale, rebuild and retry
                continue
            info["line_search_failures"] += 1
            break
        merit_new = 0.5 * float(r @ r)
        if alpha < 1.0 or merit_new > 0.1 * merit:
            lu = None  # slow contraction: refresh the Jacobian next pass
        cur = float(np.max(np.abs(r))) if m else 0.0
        if cur < best[0]:
            best = (cur, V.copy())
    else:
        info["iterations"] = opts.max_iter

    rfinal = float(np.max(np.abs(r))) if m else 0.0
    if rfinal <= opts.tol:
        info["converged"] = True
    if rfinal > best[0]:
        V = best[1]
        rfinal = best[0]
    info["residual"] = rfinal

    out = np.full(unknown.shape, np.nan)
    out[win] = V
    return out, info


def _warn_if_margin_fails(mask: DomainMask, g_vals: np.ndarray) -> None:
    """Coarse measure-vs-perimeter margin screen for the minimizer data."""
    try:
        from .levelset import SetFamily, eta_margin
        dens = ScalarField(grid=mask.grid,
                           values=np.where(mask.interior, g_vals, np.nan),
                           provenance="derived")
        stride = max(2, min(mask.grid.extents) // 8)
        rep = eta_margin(dens, mask, SetFamily(rectangles=True, rect_stride=stride))
        if rep.eta_star <= 0:
            logger.warning(
                "prescribed density fails the measure/perimeter margin on the "
                "screened family (eta* = %.3f); the minimizer may be unbounded",
                rep.eta_star)
    except Exception:
        logger.debug("margin screen skipped", exc_info=True)


def _descent_witness(mask: DomainMask, g_vals: np.ndarray, lengths: np.ndarray,
                     iterate: np.ndarray):
    """Set on which lowering u decreases the functional without bound.

    Dropping u by s on a set A changes the functional at rate
    |interface of A| + (boundary length inside A) - nu(A) for large s; a
    negative rate certifies the solvability-balance failure.  Candidate
    sets: the whole domain and sublevel sets of the failed iterate (the
    collapse happens exactly on a failing set).
    """
    grid = mask.grid
    hv = grid.cell_volume
    candidates = []
    total_nu = float(np.nansum(np.where(mask.interior, g_vals, 0.0)) * hv)
    total_len = float(lengths[mask.boundary].sum())
    candidates.append(("the whole domain", total_len - total_nu))
    vals = iterate[mask.interior]
    if np.isfinite(vals).any():
        from .field import DiscreteSet
        for q in (0.1, 0.3, 0.5):
            t = float(np.nanquantile(vals, q))
            member = mask.interior & np.isfinite(iterate) & (iterate <= t)
            if not member.any() or member.all():
                continue
            s = DiscreteSet(grid=grid, member=member, mask=mask,
                            level_source=(np.where(np.isfinite(iterate),
                                                   t - iterate, -1.0), 0.0))
            per = s.geometry().perimeter
            nu_a = float(np.nansum(np.where(member, g_vals, 0.0)) * hv)
            candidates.append((f"a sublevel set of the iterate (q={q})",
                               per - nu_a))
    worst = min(candidates, key=lambda c: c[1])
    return worst if worst[1] < 0 else None


def _interior_face_count(mask: DomainMask) -> np.ndarray:
    """Per-cell count of faces shared with an interior cell."""
    inter = mask.interior
    n = mask.grid.n
    count = np.zeros(mask.grid.shape, dtype=float)
    if n == 1:
        count[1:] += inter[:-1]
        count[:-1] += inter[1:]
    else:
        count[1:, :] += inter[:-1, :]
        count[:-1, :] += inter[1:, :]
        count[:, 1:] += inter[:, :-1]
        count[:, :-1] += inter[:, 1:]
    return count


def _repair_init(V, unk, fix):
    fill = np.nanmin(V[fix]) if fix.any() else 0.0
    bad = unk & ~np.isfinite(V)
    V[bad] = fill
    return V


# penalty rows: flux balance + smoothed absolute deviation at boundary cells


def _penalty_residual(V, h, n, pen, faces):
    cells = pen["cells"]
    phi = pen["phi"]
    ell = pen["length"]
    kappa = pen["kappa"]
    hn = h ** n
    out_flux = _outgoing_flux(V, h, n, cells, faces)
    dev = V - phi
    sprime = dev / np.sqrt(dev * dev + kappa * kappa)
    r = (out_flux * h ** (n - 1) + ell * sprime) / hn
    return r[cells]


def _outgoing_flux(V, h, n, pcells, faces):
    """Sum of face fluxes oriented from non-penalty cells into penalty cells."""
    out = np.zeros(V.shape)
    if n == 1:
        fx = faces[0][2]
        flux = np.where(np.isfinite(fx), fx, 0.0)
        # face i between cells i, i+1; into cell i+1 is +flux, into cell i is -flux
        out[1:] += np.where(pcells[1:] & ~pcells[:-1], flux, 0.0)
        out[:-1] += np.where(pcells[:-1] & ~pcells[1:], -flux, 0.0)
        return out
    fx = np.where(np.isfinite(faces[0][3]), faces[0][3], 0.0)
    fy = np.where(np.isfinite(faces[1][3]), faces[1][3], 0.0)
    out[1:, :] += np.where(pcells[1:, :] & ~pcells[:-1, :], fx, 0.0)
    out[:-1, :] += np.where(pcells[:-1, :] & ~pcells[1:, :], -fx, 0.0)
    out[:, 1:] += np.where(pcells[:, 1:] & ~pcells[:, :-1], fy, 0.0)
    out[:, :-1] += np.where(pcells[:, :-1] & ~pcells[:, 1:], -fy, 0.0)
    return out


def _penalty_triplets(V, h, n, pen, faces, unk_id):
    """Jacobian rows for penalty cells, by central finite differences.

    The penalty stencil is narrow (the cell itself plus face neighbors) and
    these rows are few, so a numerical row assembly keeps the code honest.
    """
    cells = pen["cells"]
    idx = np.argwhere(cells)
    rows, cols, vals = [], [], []
    eps = 1e-7 * (1.0 + np.nanmax(np.abs(V[np.isfinite(V)])) if np.isfinite(V).any() else 1.0)
    base = _penalty_residual(V, h, n, pen, faces)
    cell_rows = unk_id[cells]
    offsets = [()]
    if n == 1:
        neigh = [(-1,), (0,), (1,)]
    else:
        neigh = [(di, dj) for di in (-2, -1, 0, 1, 2) for dj in (-2, -1, 0, 1, 2)
                 if abs(di) + abs(dj) <= 2]
    for k, cidx in enumerate(idx):
        row = unk_id[tuple(cidx)]
        for off in neigh:
            tgt = tuple(cidx[d] + off[d] for d in range(n))
            if any(t < 0 or t >= V.shape[d] for d, t in enumerate(tgt)):
                continue
            col = unk_id[tgt]
            if col < 0 or not np.isfinite(V[tgt]):
                continue
            Vp = V.copy()
            Vp[tgt] += eps
            if n == 1:
                fpx = face_gradients_1d(Vp, h)
                rp = _penalty_residual(Vp, h, n, pen, ((None, None, fpx[2]),))
            else:
                fp = face_gradients_2d(Vp, h, True)
                rp = _penalty_residual(Vp, h, n, pen, fp)
            d = (rp[k] - base[k]) / eps
            if d != 0.0 and np.isfinite(d):
                rows.append(row)
                cols.append(col)
                vals.append(d)
    return (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64),
            np.asarray(vals, dtype=float))


# ---------------------------------------------------------------------------
# public solvers


def _as_values(grid: Grid, mask: DomainMask, data, where: np.ndarray) -> np.ndarray:
    out = np.full(grid.shape, np.nan)
    if data is None:
        out[where] = 0.0
    elif isinstance(data, ScalarField):
        out[where] = data.values[where]
    elif callable(data):
        pts = grid.points()[where]
        out[where] = np.asarray(data(pts.reshape(-1, grid.n)), dtype=float)
    else:
        out[where] = float(data)
    if np.isnan(out[where]).any():
        raise UndefinedCellError("data undefined on required cells",
                                 list(zip(*np.nonzero(where & np.isnan(out)))))
    return out


def solve_dirichlet(mask: DomainMask, f=None, phi=0.0,
                    opts: Optional[SolveOptions] = None,
                    region: Optional[tuple] = None) -> SolveOutcome:
    """Solve the prescribed mean curvature Dirichlet problem on the mask.

    f is the target density (None means the minimal surface equation), phi
    supplies boundary-cell data (scalar, callable on points, or a field).
    Non-convergence is a reportable outcome carrying the best iterate, never
    an exception.
    """
    opts = opts or SolveOptions()
    grid = mask.grid
    if region is None:
        unknown, fixed = mask.interior, mask.boundary
    else:
        unknown, fixed = region
    phi_vals = _as_values(grid, mask, phi, fixed)
    f_vals = _as_values(grid, mask, f, unknown)
    init_values = None
    if opts.init == "provided" and opts.init_field is not None:
        init_values = opts.init_field.values
        opts = replace(opts, init="harmonic", init_field=None)
    values, info = newton_solve(grid, unknown, fixed, phi_vals, f_vals, opts,
                                init_values=init_values)
    fld = ScalarField(grid=grid, values=values, provenance="solved")
    certificate = None
    if f is None or (np.asarray(f_vals[unknown]) == 0).all():
        lo, hi = float(np.nanmin(phi_vals[fixed])), float(np.nanmax(phi_vals[fixed]))
        umin = float(np.nanmin(values[unknown]))
        umax = float(np.nanmax(values[unknown]))
        certificate = {
            "max_principle": bool(umin >= lo - 10 * opts.tol - 1e-12
                                  and umax <= hi + 10 * opts.tol + 1e-12),
            "phi_range": (lo, hi), "u_range": (umin, umax),
        }
    return SolveOutcome(field=fld, residual_norm=info["residual"],
                        iterations=info["iterations"], converged=info["converged"],
                        certificate=certificate, diagnostics=info)


def ball_region(mask: DomainMask, center, radius) -> tuple[np.ndarray, np.ndarray]:
    """Unknown cells and data ring for a ball subregion solve."""
    grid = mask.grid
    pts = grid.points()
    if grid.n == 1:
        dist = np.abs(pts[..., 0] - center[0])
    else:
        dist = np.hypot(pts[..., 0] - center[0], pts[..., 1] - center[1])
    unknown = mask.interior & (dist < radius)
    if not unknown.any():
        from .field import SizingError
        raise SizingError(f"ball ({center}, r={radius}) contains no interior cells")
    from scipy import ndimage
    ring = ndimage.binary_dilation(unknown, structure=np.ones((3,) * grid.n, bool)) \
        & ~unknown
    if (ring & mask.exterior).any():
        raise ValueError(f"ball ({center}, r={radius}) is not compactly inside the domain")
    return unknown, ring


def solve_on_ball(u: ScalarField, mask: DomainMask, center, radius,
                  f=None, opts: Optional[SolveOptions] = None) -> SolveOutcome:
    """Minimal-graph replacement of u inside a ball, u as sphere data."""
    opts = opts or SolveOptions()
    grid = u.grid
    unknown, ring = ball_region(mask, center, radius)
    if not np.isfinite(u.values[ring]).all():
        raise UndefinedCellError(
            "sphere data is not finite; ball rejected",
            list(zip(*np.nonzero(ring & ~np.isfinite(u.values)))))
    f_vals = _as_values(grid, mask, f, unknown)
    init = u.values if np.isfinite(u.values[unknown]).all() else None
    values, info = newton_solve(grid, unknown, ring, u.values, f_vals, opts,
                                init_values=init)
    if not info["converged"] and init is not None:
        # kinked warm starts can stall the line search; harmonic restart
        values2, info2 = newton_solve(grid, unknown, ring, u.values, f_vals, opts,
                                      init_values=None)
        if info2["converged"] or info2["residual"] < info["residual"]:
            values, info = values2, info2
            info["restarted"] = True
    fld = ScalarField(grid=grid, values=values, provenance="solved")
    return SolveOutcome(field=fld, residual_norm=info["residual"],
                        iterations=info["iterations"], converged=info["converged"],
                        diagnostics=info)


def minimize_prescribed_mc(mask: DomainMask, g=None, phi=0.0,
                           opts: Optional[SolveOptions] = None,
                           max_active_set_rounds: int = 3) -> SolveOutcome:
    """First-order stationarity for area - load + L1 boundary deviation.

    Stage one solves with the boundary deviation smoothed as
    sqrt(s^2 + kappa^2), kappa = h; boundary cells whose flux balance stays
    strictly inside the unit ball are then pinned to the trace and the
    system re-solved, so that fully attained traces reproduce the Newton
    solver exactly.  A monotonically sinking functional with an exploding
    iterate aborts with the witness direction (solvability balance failure).
    """
    opts = opts or SolveOptions()
    grid = mask.grid
    phi_vals = _as_values(grid, mask, phi, mask.boundary)
    g_vals = _as_values(grid, mask, g, mask.interior)
    kappa = grid.h
    _warn_if_margin_fails(mask, g_vals)

    # boundary length element for the stationarity rows: face measure of the
    # discrete boundary (one h^(n-1) per face shared with an interior cell)
    nfaces = _interior_face_count(mask)
    lengths = nfaces * grid.h ** (grid.n - 1)
    # cells touching the interior only diagonally carry no boundary length;
    # the deviation term cannot move them, so they are pinned to the trace
    always_pinned = mask.boundary & (nfaces == 0)

    detached = mask.boundary & ~always_pinned  # start fully penalized
    span = float(np.nanmax(phi_vals[mask.boundary]) - np.nanmin(phi_vals[mask.boundary]))
    floor_guard = float(np.nanmin(phi_vals[mask.boundary])) - 10.0 * (1.0 + span)

    # first round starts from the trace-anchored harmonic extension; the
    # penalized system alone is too loosely pinned to initialize well
    values = np.where(mask.boundary, phi_vals, np.nan)
    values = _harmonic_extension(grid.n, grid.shape, mask.interior, mask.boundary, values)
    info = {}
    total_iters = 0
    phi_field = ScalarField(grid=grid, values=np.where(mask.boundary, phi_vals, np.nan))
    g_field = ScalarField(grid=grid, values=np.where(mask.interior, g_vals, 0.0))
    func_trace = []
    for round_ in range(max_active_set_rounds + 1):
        pinned = (mask.boundary & ~detached) | always_pinned
        unk = mask.interior | detached
        fixed = pinned
        fixed_vals = np.where(pinned, phi_vals, np.nan)
        penalty = None
        if detached.any():
            penalty = {"cells": detached, "phi": np.where(mask.boundary, phi_vals, 0.0),
                       "length": lengths, "kappa": kappa}
        values, info = newton_solve(grid, unk, fixed, fixed_vals, g_vals, opts,
                                    init_values=values, penalty=penalty)
        total_iters += info["iterations"]
        umin = float(np.nanmin(values[mask.interior]))
        fval = area_functional(
            ScalarField(grid=grid, values=np.where(mask.region, values, np.nan)),
            g_field, phi_field, mask)
        func_trace.append(fval)
        if not info["converged"] and umin < floor_guard:
            witness = _descent_witness(mask, g_vals, lengths, values)
            if witness is not None:
                raise UnboundedDescentError(
                    "functional decreases without bound along the witness "
                    "direction; the measure/perimeter solvability balance is "
                    f"violated on {witness[0]} (margin {witness[1]:.4f})",
                    witness=witness, functional_trace=func_trace)
        if not detached.any():
            break
        dev = values - phi_vals
        sprime = dev / np.sqrt(dev * dev + kappa * kappa)
        attainable = mask.boundary & (np.abs(np.where(np.isfinite(sprime), sprime, 0.0)) <= 0.98)
        new_detached = detached & ~attainable
        if (new_detached == detached).all() and round_ > 0:
            break
        detached = new_detached

    attained = mask.boundary & ~detached
    out_vals = values.copy()
    out_vals[~mask.region] = np.nan
    fld = ScalarField(grid=grid, values=out_vals, provenance="solved")
    diag = dict(info)
    diag.update({
        "kappa": kappa,
        "attained_fraction": float(attained.sum()) / float(mask.boundary.sum()),
        "detached_cells": int(detached.sum()),
        "functional": func_trace[-1] if func_trace else float("nan"),
        "stationarity_norm": info.get("residual", float("nan")),
    })
    return SolveOutcome(field=fld, residual_norm=info.get("residual", float("nan")),
                        iterations=total_iters, converged=info.get("converged", False),
                        diagnostics=diag)
