"""Deterministic CSV writers for the documented table layouts."""

from __future__ import annotations

import numpy as np


def format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, np.floating):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows, preamble: str = "") -> None:
    """Plain CSV: '.' decimal, LF line endings, one header row."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if preamble:
            fh.write(preamble if preamble.endswith("\n") else preamble + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")


def write_level_set_table(path, stats_list) -> None:
    """Level-set stats in the documented r,t,volume,gamma_int,gamma_bdy,rho layout."""
    write_csv(path, ["r", "t", "volume", "gamma_int", "gamma_bdy", "rho"],
              [(s.r, s.t, s.volume, s.gamma_int, s.gamma_bdy, s.rho)
               for s in stats_list])


def write_envelope_table(path, fit) -> None:
    """Gradient-growth samples with the fitted envelope in the header line."""
    pre = f"# envelope c1={format_value(fit.c1)} c2={format_value(fit.c2)}"
    write_csv(path, ["x_abs_u_over_r", "y_log_grad"],
              [(x, y) for x, y in fit.points], preamble=pre)


def write_ball_measure_table(path, table) -> None:
    """Ball measures in the documented center_x,center_y,r,mu,method,band layout."""
    rows = []
    for r in table.rows:
        cx = r.center[0]
        cy = r.center[1] if len(r.center) > 1 else 0.0
        rows.append((cx, cy, r.radius, r.mu, table.method, r.band))
    write_csv(path, ["center_x", "center_y", "r", "mu", "method", "band"], rows)
