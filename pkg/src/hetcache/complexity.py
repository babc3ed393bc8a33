"""Closed-form constraint counts of the four problems' subproblems and the
interior-point iteration estimate built from them.
"""

from __future__ import annotations

import math

PROBLEMS = ("cp-pf", "dp-pf", "cp-mmf", "dp-mmf")
STEPS = ("t1", "t2", "t3")  # placement / power / subcarrier subproblem


def _cp_pf(step: str, B: int, U: int, C: int, n_ac: int, n_bh: int) -> int:
    if step == "t1":
        return 2 + 2 * B + (B + 3) * U + (B + 1) * U * C
    if step == "t2":
        return 1 + B + 2 * U + 4 * (B + 1) * U * C
    if step == "t3":
        return 1 + n_bh + 2 * U + (B + 1) * (1 + U + n_ac) + 4 * (B + 1) * U * C
    raise ValueError(f"unknown step {step!r}")


def constraint_count(tag: str, B: int, U: int, C: int,
                     n_ac: int = 0, n_bh: int = 0) -> int:
    """Constraint count for a subproblem tag like ``cp-pf-t1``.

    The PF caching-phase counts are the base; the delivery and min-max
    variants apply the documented offsets (placement step loses the B+1
    storage/binariness rows in the DP, every min-max step gains the single
    epigraph row).
    """
    parts = tag.lower().split("-")
    if len(parts) != 3 or f"{parts[0]}-{parts[1]}" not in PROBLEMS or parts[2] not in STEPS:
        raise ValueError(f"unknown problem tag {tag!r}; expected e.g. 'cp-pf-t1'")
    problem, step = f"{parts[0]}-{parts[1]}", parts[2]
    base = _cp_pf(step, B, U, C, n_ac, n_bh)
    if problem == "cp-pf":
        return base
    if problem == "dp-pf":
        return base - (B + 1) if step == "t1" else base
    if problem == "cp-mmf":
        return base + 1
    # dp-mmf, derived from the cp-mmf counts
    cp_mmf = base + 1
    return cp_mmf - (B + 1) if step == "t1" else cp_mmf


def ipm_complexity(t_count: float, t0: float, rho: float, xi: float) -> float:
    """Interior-point iteration estimate log(T / (t0 rho)) / log(xi)."""
    if xi <= 1.0:
        raise ValueError("accuracy update factor must exceed 1")
    if t0 * rho <= 0.0:
        raise ValueError("t0 * rho must be positive")
    if t_count <= 0.0:
        raise ValueError("constraint count must be positive")
    return math.log(t_count / (t0 * rho)) / math.log(xi)
