"""Generic solver layer: a dense log-barrier Newton method for smooth convex
programs, a phase-I feasibility search, a deterministic best-first
branch-and-bound for mixed-binary convex programs, and the relax-and-round
recovery of binary subcarrier assignments.

Every scalar function (objective or constraint) is of the shape

    f(x) = const + lin.x + 1/2 x_q' Q x_q - sum_k w_k ln(A_k x + b_k),  w_k >= 0

which covers every subproblem in this codebase (linear costs, convex QPs for
tests, log-epigraph couplings, and linearized-rate surrogates).
"""

from __future__ import annotations

import heapq
import logging
import time
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 500
DEFAULT_GAP = 1e-4
DEFAULT_NODE_BUDGET = 100_000
ROUNDING_EPS = 1e-6  # below this a relaxed subcarrier stays unassigned
INT_TOL = 1e-6


class InfeasibleRoundingError(RuntimeError):
    """Rounded subcarrier assignment could not be repaired to meet min rates."""


@dataclass
class LogGroup:
    """Sum of -w_k ln(a_k . x[cols] + b_k) over rows k sharing one column set."""

    cols: np.ndarray   # (s,) int
    A: np.ndarray      # (K, s)
    offs: np.ndarray   # (K,)
    wts: np.ndarray    # (K,) >= 0

    def args(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x[self.cols] + self.offs


@dataclass
class ScalarFn:
    """One convex scalar function in the linear(+quadratic)-minus-logs family."""

    n: int
    lin_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    lin_val: np.ndarray = field(default_factory=lambda: np.zeros(0))
    const: float = 0.0
    quad_idx: np.ndarray | None = None
    quad: np.ndarray | None = None
    groups: list[LogGroup] = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        self.lin_idx = np.asarray(self.lin_idx, dtype=int)
        self.lin_val = np.asarray(self.lin_val, dtype=float)
        for g in self.groups:
            g.cols = np.asarray(g.cols, dtype=int)
            g.A = np.atleast_2d(np.asarray(g.A, dtype=float))
            g.offs = np.asarray(g.offs, dtype=float)
            g.wts = np.asarray(g.wts, dtype=float)
            if np.any(g.wts < 0):
                raise ValueError(f"{self.name}: log weights must be >= 0")
        sup = [self.lin_idx]
        if self.quad_idx is not None:
            self.quad_idx = np.asarray(self.quad_idx, dtype=int)
            sup.append(self.quad_idx)
        sup.extend(g.cols for g in self.groups)
        self.support = np.unique(np.concatenate(sup)) if sup else np.zeros(0, dtype=int)

    def value(self, x: np.ndarray) -> float:
        v = self.const + float(self.lin_val @ x[self.lin_idx])
        if self.quad is not None:
            xq = x[self.quad_idx]
            v += 0.5 * float(xq @ self.quad @ xq)
        for g in self.groups:
            r = g.args(x)
            if np.any(r <= 0.0):
                return np.inf
            v -= float(g.wts @ np.log(r))
        return v

    def grad_dense(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        np.add.at(out, self.lin_idx, self.lin_val)
        if self.quad is not None:
            out[self.quad_idx] += self.quad @ x[self.quad_idx]
        for g in self.groups:
            r = g.args(x)
            out[g.cols] -= g.A.T @ (g.wts / r)
        return out

    def grad_compact(self, x: np.ndarray) -> np.ndarray:
        """Gradient restricted to `self.support` order."""
        pos = {int(j): k for k, j in enumerate(self.support)}
        out = np.zeros(self.support.size)
        for j, v in zip(self.lin_idx, self.lin_val):
            out[pos[int(j)]] += v
        if self.quad is not None:
            qg = self.quad @ x[self.quad_idx]
            for j, v in zip(self.quad_idx, qg):
                out[pos[int(j)]] += v
        for g in self.groups:
            gg = g.A.T @ (g.wts / g.args(x))
            for j, v in zip(g.cols, gg):
                out[pos[int(j)]] -= v
        return out

    def hess_add(self, H: np.ndarray, x: np.ndarray, scale: float) -> None:
        """H += scale * hessian(self)(x)."""
        if self.quad is not None:
            H[np.ix_(self.quad_idx, self.quad_idx)] += scale * self.quad
        for g in self.groups:
            r = g.args(x)
            d = scale * g.wts / (r * r)
            block = (g.A.T * d) @ g.A
            H[np.ix_(g.cols, g.cols)] += block

    def shifted(self, extra_idx: int, extra_coef: float) -> "ScalarFn":
        """Copy with an extra linear term (used to build phase-I programs)."""
        return ScalarFn(n=self.n,
                        lin_idx=np.append(self.lin_idx, extra_idx),
                        lin_val=np.append(self.lin_val, extra_coef),
                        const=self.const, quad_idx=self.quad_idx, quad=self.quad,
                        groups=[LogGroup(g.cols.copy(), g.A.copy(), g.offs.copy(),
                                         g.wts.copy()) for g in self.groups],
                        name=self.name)


def linear_fn(n: int, idx, val, const: float = 0.0, name: str = "") -> ScalarFn:
    return ScalarFn(n=n, lin_idx=np.asarray(idx, dtype=int),
                    lin_val=np.asarray(val, dtype=float), const=const, name=name)


@dataclass
class ConvexProgram:
    """Minimize objective s.t. constraints g_i(x) <= 0, box bounds, optional
    affine equalities, with some variables designated binary for B&B."""

    n: int
    objective: ScalarFn
    constraints: list[ScalarFn]
    lower: np.ndarray
    upper: np.ndarray
    binary_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    blocks: dict = field(default_factory=dict)  # name -> index array

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.binary_idx = np.asarray(self.binary_idx, dtype=int)

    def fixed(self, idx: np.ndarray, vals: np.ndarray) -> tuple["ConvexProgram", np.ndarray]:
        """Substitute x[idx] = vals; returns the reduced program and the map
        `full = lift(reduced)` as an index array plus baked values.

        Raises ValueError if a log argument becomes nonpositive and constant.
        """
        idx = np.asarray(idx, dtype=int)
        vals = np.asarray(vals, dtype=float)
        keep = np.ones(self.n, dtype=bool)
        keep[idx] = False
        new_of_old = -np.ones(self.n, dtype=int)
        new_of_old[keep] = np.arange(int(keep.sum()))
        xfix = np.zeros(self.n)
        xfix[idx] = vals

        def reduce_fn(fn: ScalarFn) -> ScalarFn:
            m_lin = keep[fn.lin_idx]
            const = fn.const + float(fn.lin_val[~m_lin] @ xfix[fn.lin_idx[~m_lin]])
            lin_idx = new_of_old[fn.lin_idx[m_lin]]
            lin_val = fn.lin_val[m_lin].copy()
            quad_idx = quad = None
            if fn.quad is not None:
                mq = keep[fn.quad_idx]
                xf = xfix[fn.quad_idx[~mq]]
                Qff = fn.quad[np.ix_(~mq, ~mq)]
                const += 0.5 * float(xf @ Qff @ xf)
                if mq.any():
                    Qkf = fn.quad[np.ix_(mq, ~mq)]
                    extra = Qkf @ xf
                    lin_idx = np.concatenate([lin_idx, new_of_old[fn.quad_idx[mq]]])
                    lin_val = np.concatenate([lin_val, extra])
                    quad_idx = new_of_old[fn.quad_idx[mq]]
                    quad = fn.quad[np.ix_(mq, mq)]
            groups = []
            for g in fn.groups:
                mg = keep[g.cols]
                offs = g.offs + g.A[:, ~mg] @ xfix[g.cols[~mg]]
                if mg.any():
                    groups.append(LogGroup(new_of_old[g.cols[mg]], g.A[:, mg],
                                           offs, g.wts))
                else:
                    if np.any((offs <= 0.0) & (g.wts > 0)):
                        raise ValueError(f"fixing makes log argument of {fn.name} nonpositive")
                    const -= float(g.wts @ np.log(np.maximum(offs, 1e-300)))
            return ScalarFn(n=int(keep.sum()), lin_idx=lin_idx, lin_val=lin_val,
                            const=const, quad_idx=quad_idx, quad=quad,
                            groups=groups, name=fn.name)

        A_eq = b_eq = None
        if self.A_eq is not None:
            b_eq = self.b_eq - self.A_eq[:, idx] @ vals
            A_eq = self.A_eq[:, keep]
        reduced = ConvexProgram(
            n=int(keep.sum()), objective=reduce_fn(self.objective),
            constraints=[reduce_fn(g) for g in self.constraints],
            lower=self.lower[keep], upper=self.upper[keep],
            binary_idx=new_of_old[self.binary_idx[keep[self.binary_idx]]],
            A_eq=A_eq, b_eq=b_eq)
        return reduced, np.flatnonzero(keep)

    def lift(self, x_red: np.ndarray, keep_idx: np.ndarray, idx: np.ndarray,
             vals: np.ndarray) -> np.ndarray:
        x = np.zeros(self.n)
        x[keep_idx] = x_red
        x[np.asarray(idx, dtype=int)] = vals
        return x


@dataclass
class SolveResult:
    x: np.ndarray
    objective: float
    kkt_residual: float
    status: str                     # optimal | max-iter | infeasible
    iterations: int
    wall_time: float
    lower_bound: float = -np.inf
    gap: float = np.nan
    nodes: int = 0
    barrier_t: float = 1.0          # final path parameter; reuse to warm start
    message: str = ""


def _strictly_feasible(prog: ConvexProgram, x: np.ndarray, margin: float = 0.0) -> bool:
    fl, fu = np.isfinite(prog.lower), np.isfinite(prog.upper)
    if np.any(x[fl] <= prog.lower[fl]) or np.any(x[fu] >= prog.upper[fu]):
        return False
    if not np.isfinite(prog.objective.value(x)):
        return False
    return all(g.value(x) < -margin for g in prog.constraints)


class _Barrier:
    """Newton path-following on t*f0 + sum -ln(-g_i) + box logs.

    Pure-linear constraints are stacked into one matrix so slack, gradient,
    and Hessian contributions are single BLAS calls; only constraints with
    log or quadratic terms stay in a per-constraint loop.
    """

    def __init__(self, prog: ConvexProgram, trace: list | None = None):
        self.prog = prog
        self.trace = trace
        self.fl = np.isfinite(prog.lower)
        self.fu = np.isfinite(prog.upper)
        self.m = len(prog.constraints) + int(self.fl.sum()) + int(self.fu.sum())
        lin_rows, lin_offs, self.nl = [], [], []
        for g in prog.constraints:
            if not g.groups and g.quad is None:
                row = np.zeros(prog.n)
                np.add.at(row, g.lin_idx, g.lin_val)
                lin_rows.append(row)
                lin_offs.append(g.const)
            else:
                self.nl.append(g)
        self.G = np.array(lin_rows) if lin_rows else np.zeros((0, prog.n))
        self.h = np.array(lin_offs)

    def lin_slacks(self, x: np.ndarray) -> np.ndarray:
        return -(self.G @ x + self.h)

    def phi(self, x: np.ndarray, t: float) -> float:
        p = self.prog
        v = t * p.objective.value(x)
        if not np.isfinite(v):
            return np.inf
        s = self.lin_slacks(x)
        if s.size and (np.min(s) <= 0.0):
            return np.inf
        v -= float(np.sum(np.log(s))) if s.size else 0.0
        for g in self.nl:
            gv = g.value(x)
            if gv >= 0.0 or not np.isfinite(gv):
                return np.inf
            v -= np.log(-gv)
        dl = x[self.fl] - p.lower[self.fl]
        du = p.upper[self.fu] - x[self.fu]
        if np.any(dl <= 0.0) or np.any(du <= 0.0):
            return np.inf
        v -= float(np.sum(np.log(dl))) + float(np.sum(np.log(du)))
        return v

    def newton_system(self, x: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        p = self.prog
        n = p.n
        grad = t * p.objective.grad_dense(x)
        H = np.zeros((n, n))
        p.objective.hess_add(H, x, t)
        s = self.lin_slacks(x)
        if s.size:
            w1 = 1.0 / s
            grad += self.G.T @ w1
            H += (self.G.T * (w1 * w1)) @ self.G
        self._nl_slacks = np.empty(len(self.nl))
        for k, g in enumerate(self.nl):
            sv = -g.value(x)
            self._nl_slacks[k] = sv
            cg = g.grad_compact(x)
            grad[g.support] += cg / sv
            H[np.ix_(g.support, g.support)] += np.outer(cg, cg) / (sv * sv)
            g.hess_add(H, x, 1.0 / sv)
        dl = x[self.fl] - p.lower[self.fl]
        du = p.upper[self.fu] - x[self.fu]
        grad[self.fl] -= 1.0 / dl
        grad[self.fu] += 1.0 / du
        diag = np.zeros(n)
        diag[self.fl] += 1.0 / dl ** 2
        diag[self.fu] += 1.0 / du ** 2
        H[np.diag_indices(n)] += diag
        return grad, H

    def max_step(self, x: np.ndarray, dx: np.ndarray) -> float:
        """Fraction-to-boundary limit over box, linear slacks, and log args."""
        p = self.prog
        alpha = 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            neg = (dx < 0) & self.fl
            if np.any(neg):
                alpha = min(alpha, 0.99 * float(np.min((x[neg] - p.lower[neg]) / -dx[neg])))
            pos = (dx > 0) & self.fu
            if np.any(pos):
                alpha = min(alpha, 0.99 * float(np.min((p.upper[pos] - x[pos]) / dx[pos])))
            if self.G.shape[0]:
                s = self.lin_slacks(x)
                ds = self.G @ dx  # slack decreases where this is positive
                hit = ds > 0
                if np.any(hit):
                    alpha = min(alpha, 0.995 * float(np.min(s[hit] / ds[hit])))
            for g in self.nl:
                for grp in g.groups:
                    r = grp.args(x)
                    dr = grp.A @ dx[grp.cols]
                    bad = dr < 0
                    if np.any(bad):
                        alpha = min(alpha, 0.995 * float(np.min(r[bad] / -dr[bad])))
        return alpha

    def step(self, x: np.ndarray, t: float) -> tuple[np.ndarray, float, float]:
        p = self.prog
        grad, H = self.newton_system(x, t)
        if p.A_eq is not None and p.A_eq.size:
            w, *_ = np.linalg.lstsq(p.A_eq.T, -grad, rcond=None)
            gnorm = float(np.max(np.abs(grad + p.A_eq.T @ w)))
        else:
            gnorm = float(np.max(np.abs(grad)))
        # Jacobi-preconditioned solve with one refinement pass: the barrier
        # Hessian spans many orders of magnitude near active log constraints
        d = 1.0 / np.sqrt(np.maximum(np.diag(H), 1e-300))
        Hs = H * d[:, None] * d[None, :]
        reg = 0.0
        for _ in range(12):
            try:
                if p.A_eq is None:
                    Hr = Hs if reg == 0.0 else Hs + reg * np.eye(p.n)
                    dx = d * np.linalg.solve(Hr, -(d * grad))
                    resid = -grad - H @ dx
                    dx += d * np.linalg.solve(Hr, d * resid)
                    dec = -float(grad @ dx)
                else:
                    k = p.A_eq.shape[0]
                    A_s = p.A_eq * d[None, :]
                    Hr = Hs if reg == 0.0 else Hs + reg * np.eye(p.n)
                    K = np.block([[Hr, A_s.T], [A_s, np.zeros((k, k))]])
                    rhs = np.concatenate([-(d * grad), p.b_eq - p.A_eq @ x])
                    sol = np.linalg.solve(K, rhs)
                    dx = d * sol[:p.n]
                    dec = -float(grad @ dx)
                if np.isfinite(dec) and dec >= -1e-12 * max(1.0, abs(dec)):
                    break
            except np.linalg.LinAlgError:
                pass
            reg = max(reg * 10.0, 1e-14)
        else:
            return x, 0.0, gnorm

        alpha = self.max_step(x, dx)
        phi0 = self.phi(x, t)
        slacks0 = self._nl_slacks
        for _ in range(60):
            xn = x + alpha * dx
            phin = self.phi(xn, t)
            if np.isfinite(phin) and phin <= phi0 - 0.01 * alpha * dec:
                # nonlinear slacks may not collapse within a single step, nor
                # below the floor where 1/slack^2 poisons the Hessian
                ok = True
                for k, g in enumerate(self.nl):
                    if -g.value(xn) < max(0.01 * slacks0[k], 1e-15):
                        ok = False
                        break
                if ok:
                    return xn, dec, gnorm
            alpha *= 0.5
        return x, 0.0, gnorm

    def center(self, x: np.ndarray, t: float, max_steps: int, dec_tol: float,
               grad_tol: float | None = None) -> tuple[np.ndarray, int]:
        used = 0
        for _ in range(max_steps):
            xn, dec, gnorm = self.step(x, t)
            used += 1
            if grad_tol is not None and gnorm <= grad_tol:
                return x, used  # x already met the gradient target
            x = xn
            if dec / 2.0 <= dec_tol and grad_tol is None:
                break
            if dec / 2.0 <= 1e-6 * dec_tol:  # stalled below any useful progress
                break
        return x, used


def solve_dcp(prog: ConvexProgram, start: np.ndarray | None = None,
              tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
              t0: float = 1.0, mu: float = 100.0,
              trace: list | None = None) -> SolveResult:
    """Minimize a smooth convex program to KKT residual <= tol.

    `start` should have positive log arguments everywhere; if it is not
    strictly feasible a phase-I search runs first. Returns status
    `infeasible` when no strictly feasible point exists (within tolerance),
    `max-iter` when the Newton budget runs out.
    """
    began = time.perf_counter()
    if prog.n == 0:  # fully substituted program: a feasibility check on constants
        ok = all(g.value(np.zeros(0)) <= 0.0 for g in prog.constraints)
        if prog.b_eq is not None and prog.b_eq.size:
            ok = ok and np.max(np.abs(prog.b_eq)) <= 1e-9
        obj = prog.objective.value(np.zeros(0))
        return SolveResult(x=np.zeros(0), objective=obj if ok else np.inf,
                           kkt_residual=0.0 if ok else np.inf,
                           status="optimal" if ok else "infeasible",
                           iterations=0, wall_time=time.perf_counter() - began,
                           lower_bound=obj if ok else np.inf)
    bar = _Barrier(prog, trace)
    x = None
    if start is not None:
        span = np.where(np.isfinite(prog.lower) & np.isfinite(prog.upper),
                        prog.upper - prog.lower, 1.0)
        s = np.clip(np.asarray(start, dtype=float),
                    np.where(np.isfinite(prog.lower), prog.lower + 1e-12 * span, -np.inf),
                    np.where(np.isfinite(prog.upper), prog.upper - 1e-12 * span, np.inf))
        if prog.A_eq is not None and prog.A_eq.size:
            r = prog.b_eq - prog.A_eq @ s
            s = s + prog.A_eq.T @ np.linalg.lstsq(prog.A_eq @ prog.A_eq.T, r, rcond=None)[0]
        if _strictly_feasible(prog, s, margin=0.0):
            x = s
    iters = 0
    if x is None:
        x, it1, ok = _phase_one(prog, start)
        iters += it1
        if not ok:
            return SolveResult(x=x if x is not None else np.zeros(prog.n),
                               objective=np.inf, kkt_residual=np.inf,
                               status="infeasible", iterations=iters,
                               wall_time=time.perf_counter() - began,
                               message="no strictly feasible point found")

    m_total = max(bar.m, 1)
    t = max(t0, 1.0)
    status = "optimal"
    kkt = np.inf
    polish_rounds = 0
    while True:
        budget = max_iter - iters
        if budget <= 0:
            status = "max-iter"
            break
        x, used = bar.center(x, t, min(60, budget), dec_tol=1e-10 * max(1.0, t))
        iters += used
        fval = prog.objective.value(x)
        if trace is not None:
            trace.append(("center", t, fval, iters))
        if 1.0 / t <= tol and m_total / t <= tol * max(1.0, abs(fval)):
            # polish: drive the scaled stationarity below tol, verify, escalate
            gscale = max(1.0, float(np.max(np.abs(prog.objective.grad_dense(x)))))
            x, used = bar.center(x, t, min(25, max(max_iter - iters, 1)),
                                 dec_tol=1e-10 * max(1.0, t),
                                 grad_tol=0.1 * tol * t * gscale)
            iters += used
            kkt = _kkt_residual(prog, bar, x, t)
            polish_rounds += 1
            if kkt <= tol or iters >= max_iter:
                break
            if polish_rounds >= 4:  # conditioning-limited; report what we have
                if kkt > 1e3 * tol:
                    status = "max-iter"
                break
        t *= mu

    fval = prog.objective.value(x)
    if not np.isfinite(kkt):
        kkt = _kkt_residual(prog, bar, x, t)
    gap_est = m_total / t
    return SolveResult(x=x, objective=float(fval), kkt_residual=float(kkt),
                       status=status, iterations=iters,
                       wall_time=time.perf_counter() - began,
                       lower_bound=float(fval - 2.0 * gap_est), barrier_t=t)


def _kkt_residual(prog: ConvexProgram, bar: "_Barrier", x: np.ndarray,
                  t: float) -> float:
    """Residual with the barrier multipliers lambda_i = 1/(t * -g_i)."""
    stat = prog.objective.grad_dense(x).astype(float)
    comp = 0.0
    for g in prog.constraints:
        s = max(-g.value(x), 1e-300)
        lam = 1.0 / (t * s)
        stat[g.support] += lam * g.grad_compact(x)
        comp = max(comp, lam * s)
    fl, fu = bar.fl, bar.fu
    stat[fl] -= 1.0 / (t * (x[fl] - prog.lower[fl]))
    stat[fu] += 1.0 / (t * (prog.upper[fu] - x[fu]))
    if prog.A_eq is not None and prog.A_eq.size:
        w, *_ = np.linalg.lstsq(prog.A_eq.T, -stat, rcond=None)
        stat = stat + prog.A_eq.T @ w
        primal_eq = float(np.max(np.abs(prog.A_eq @ x - prog.b_eq)))
    else:
        primal_eq = 0.0
    gscale = max(1.0, float(np.max(np.abs(prog.objective.grad_dense(x)))))
    return max(float(np.max(np.abs(stat))) / gscale, comp, primal_eq)


def _phase_one(prog: ConvexProgram, start: np.ndarray | None
               ) -> tuple[np.ndarray | None, int, bool]:
    """Minimize s subject to g_i(x) <= s over the box; success when s < 0."""
    n = prog.n
    if start is None:
        lo = np.where(np.isfinite(prog.lower), prog.lower, -1.0)
        hi = np.where(np.isfinite(prog.upper), prog.upper, 1.0)
        start = 0.5 * (lo + hi)
    x0 = np.clip(np.asarray(start, dtype=float),
                 np.where(np.isfinite(prog.lower), prog.lower + 1e-12, -np.inf),
                 np.where(np.isfinite(prog.upper), prog.upper - 1e-12, np.inf))
    # nudge strictly inside the box
    fl, fu = np.isfinite(prog.lower), np.isfinite(prog.upper)
    both = fl & fu
    x0[both] = np.clip(x0[both], prog.lower[both] + 1e-9 * (prog.upper[both] - prog.lower[both]),
                       prog.upper[both] - 1e-9 * (prog.upper[both] - prog.lower[both]))
    gvals = [g.value(x0) for g in prog.constraints]
    if not all(np.isfinite(v) for v in gvals):
        return None, 0, False  # log arguments invalid at the start point
    s0 = max(gvals) if gvals else -1.0
    if s0 < 0.0 and _strictly_feasible(prog, x0):
        return x0, 0, True
    scale = max(1.0, abs(s0))
    aug = ConvexProgram(
        n=n + 1,
        objective=linear_fn(n + 1, [n], [1.0], name="phase1"),
        constraints=[g.shifted(n, -1.0) for g in prog.constraints],
        lower=np.append(prog.lower, -2.0 * scale),
        upper=np.append(prog.upper, abs(s0) + 2.0 * scale),
        A_eq=None if prog.A_eq is None else np.hstack([prog.A_eq, np.zeros((prog.A_eq.shape[0], 1))]),
        b_eq=prog.b_eq)
    z = np.append(x0, s0 + 0.5 * scale)
    bar = _Barrier(aug)
    t = 1.0
    iters = 0
    for _ in range(40):
        z, used = bar.center(z, t, 40, dec_tol=1e-9 * max(1.0, t))
        iters += used
        if z[n] < -1e-9 * scale and _strictly_feasible(prog, z[:n]):
            return z[:n], iters, True
        if bar.m / t < 1e-9 * scale:
            break
        t *= 20.0
    ok = z[n] < 0.0 and _strictly_feasible(prog, z[:n])
    return (z[:n] if ok else None), iters, ok


def solve_midcp(prog: ConvexProgram, tol: float = DEFAULT_TOL,
                gap: float = DEFAULT_GAP, node_budget: int = DEFAULT_NODE_BUDGET,
                start: np.ndarray | None = None,
                trace: list | None = None) -> SolveResult:
    """Best-first branch-and-bound over the binary-designated variables.

    Deterministic node order: best bound first (insertion order on ties),
    branching on the most fractional binary (lowest index on ties), exploring
    the 0-branch before the 1-branch.
    """
    began = time.perf_counter()
    binaries = prog.binary_idx
    inc_x, inc_obj = None, np.inf
    nodes = 0
    counter = 0
    heap: list = []

    def relax_solve(fix_idx, fix_val, warm, count=True, t0=1.0):
        nonlocal nodes
        if count:
            nodes += 1
        if len(fix_idx):
            try:
                red, keep = prog.fixed(np.array(fix_idx), np.array(fix_val))
            except ValueError:
                return None, None
            w = warm[keep] if warm is not None else None
            res = solve_dcp(red, start=w, tol=tol, t0=t0)
            if res.status == "infeasible":
                return None, None
            x_full = prog.lift(res.x, keep, np.array(fix_idx), np.array(fix_val))
            return res, x_full
        res = solve_dcp(prog, start=warm, tol=tol, t0=t0)
        if res.status == "infeasible":
            return None, None
        return res, res.x

    def try_incumbent(fix_idx, fix_val, x_relax, t0=1.0):
        """Fix every binary to its rounded value and resolve the continuous rest."""
        nonlocal inc_x, inc_obj
        vals = dict(zip(fix_idx, fix_val))
        all_idx = [int(i) for i in binaries]
        nearest = [vals.get(int(i), float(np.round(x_relax[i]))) for i in binaries]
        floored = [vals.get(int(i), float(np.floor(x_relax[i] + INT_TOL)))
                   for i in binaries]
        candidates = [nearest] if nearest == floored else [nearest, floored]
        for all_val in candidates:
            res, x_full = relax_solve(all_idx, all_val, x_relax, count=False, t0=t0)
            if res is not None and res.objective < inc_obj - 1e-15:
                inc_obj, inc_x = res.objective, x_full
                if trace is not None:
                    trace.append(("incumbent", nodes, inc_obj))

    root, x_root = relax_solve([], [], start)
    if root is None:
        return SolveResult(x=np.zeros(prog.n), objective=np.inf, kkt_residual=np.inf,
                           status="infeasible", iterations=0,
                           wall_time=time.perf_counter() - began, nodes=nodes)

    def frac_scores(x):
        xb = x[binaries]
        return np.minimum(np.abs(xb), np.abs(1.0 - xb))

    def push(bound, fix_idx, fix_val, x, t_par):
        nonlocal counter
        heapq.heappush(heap, (bound, counter, fix_idx, fix_val, x, t_par))
        counter += 1

    scores = frac_scores(x_root)
    if binaries.size == 0 or np.all(scores <= INT_TOL):
        xb = np.round(x_root[binaries]) if binaries.size else np.zeros(0)
        res_fix, x_fix = (root, x_root) if binaries.size == 0 else \
            relax_solve([int(i) for i in binaries], list(xb), x_root, count=False)
        if res_fix is None:
            res_fix, x_fix = root, x_root
        return SolveResult(x=x_fix, objective=res_fix.objective,
                           kkt_residual=res_fix.kkt_residual, status="optimal",
                           iterations=res_fix.iterations,
                           wall_time=time.perf_counter() - began,
                           lower_bound=root.lower_bound, gap=0.0, nodes=nodes)

    try_incumbent([], [], x_root)
    push(root.lower_bound, [], [], x_root, root.barrier_t)
    status = "optimal"
    best_bound = root.lower_bound
    while heap:
        bound, _, fix_idx, fix_val, x_par, t_par = heapq.heappop(heap)
        best_bound = bound
        if np.isfinite(inc_obj) and inc_obj - bound <= gap * max(abs(inc_obj), 1e-12):
            break
        if nodes >= node_budget:
            status = "max-iter"
            break
        fixed_set = set(fix_idx)
        free = [int(i) for i in binaries if int(i) not in fixed_set]
        sc = np.array([min(abs(x_par[i]), abs(1 - x_par[i])) for i in free])
        j = free[int(np.argmax(sc))]
        for branch_val in (0.0, 1.0):
            ci, cv = fix_idx + [j], fix_val + [branch_val]
            res, x_full = relax_solve(ci, cv, x_par)
            if res is None:
                continue
            if np.isfinite(inc_obj) and \
                    res.lower_bound >= inc_obj - gap * max(abs(inc_obj), 1e-12):
                continue
            child_scores = np.array([min(abs(x_full[i]), abs(1 - x_full[i]))
                                     for i in binaries])
            # a bound from an unconverged solve is not trusted; keep the parent's
            child_bound = max(res.lower_bound, bound) if res.status == "optimal" \
                else bound
            if np.all(child_scores <= INT_TOL):
                try_incumbent(ci, cv, x_full)
            else:
                if len(ci) % 4 == 0:  # periodic rounding heuristic, deterministic
                    try_incumbent(ci, cv, x_full)
                push(child_bound, ci, cv, x_full, res.barrier_t)
    else:
        best_bound = inc_obj  # tree exhausted

    if inc_x is None:
        return SolveResult(x=x_root, objective=np.inf, kkt_residual=np.inf,
                           status="infeasible" if status == "optimal" else status,
                           iterations=0, wall_time=time.perf_counter() - began,
                           lower_bound=best_bound, nodes=nodes)
    best_bound = min(best_bound, inc_obj)
    rel_gap = max(0.0, inc_obj - best_bound) / max(abs(inc_obj), 1e-12)
    return SolveResult(x=inc_x, objective=inc_obj, kkt_residual=tol,
                       status=status, iterations=nodes,
                       wall_time=time.perf_counter() - began,
                       lower_bound=best_bound, gap=rel_gap, nodes=nodes)


@dataclass
class RoundingReport:
    moves: list[tuple]
    feasible: bool


def relax_and_round(alloc, ctx, phase: str) -> tuple[object, RoundingReport]:
    """Recover binary subcarrier assignments from a relaxed allocation.

    Each access subcarrier (b, n) goes to the user with the largest share if
    that share is at least 1e-6, each backhaul subcarrier to the strongest BS;
    ties break to the lowest index. Two repair passes follow: every BS with
    un-cached demand keeps at least one backhaul subcarrier, then subcarriers
    move toward users violating their minimum rate (largest violation first).
    Raises InfeasibleRoundingError when repair stalls.
    """
    from . import rates as rates_mod  # local import; rates never imports convex

    sc = ctx.scenario
    out = alloc.copy()
    ga = np.zeros_like(out.gamma_access)
    for b in range(sc.n_bs):
        for n in range(sc.n_access):
            col = out.gamma_access[b, :, n]
            u = int(np.argmax(col))
            if col[u] >= ROUNDING_EPS:
                ga[b, u, n] = 1.0
    gb = np.zeros_like(out.gamma_backhaul)
    for n in range(sc.n_backhaul):
        col = out.gamma_backhaul[:, n]
        b = int(np.argmax(col))
        if col[b] >= ROUNDING_EPS:
            gb[b, n] = 1.0
    out.gamma_access, out.gamma_backhaul, out.relaxed = ga, gb, False

    moves: list[tuple] = []
    # every BS with un-cached demand must keep at least one backhaul subcarrier
    if phase == "cp":
        demand = np.tile(sc.popularity, (sc.num_users, 1))
    else:
        demand = ctx.requests.delta.astype(float)
    need = np.einsum("bu,uc,bc->b", out.assoc, demand, 1.0 - out.placement) > 0
    for b in np.flatnonzero(need):
        if gb[b].sum() > 0:
            continue
        free = np.flatnonzero(gb.sum(axis=0) == 0)
        if free.size:
            n = int(free[np.argmax(alloc.gamma_backhaul[b, free])])
        else:
            counts = gb.sum(axis=1)
            donor = int(np.argmax(counts))
            if counts[donor] <= 1:
                raise InfeasibleRoundingError(
                    f"no backhaul subcarrier available for BS {b}")
            owned = np.flatnonzero(gb[donor])
            n = int(owned[np.argmin(alloc.gamma_backhaul[donor, owned])])
            gb[donor, n] = 0.0
            moves.append(("backhaul", donor, b, n))
        gb[b, n] = 1.0

    def user_rates():
        if phase == "cp":
            return rates_mod.ergodic_rates(out, ctx.draws, sc).access.sum(axis=0)
        return rates_mod.user_rates_all(out, ctx.draw, sc).sum(axis=0)

    for _ in range(sc.n_access * max(sc.num_users, 1)):
        deficit = sc.min_rate - user_rates()
        worst = int(np.argmax(deficit))
        if deficit[worst] <= 1e-9 * max(1.0, float(sc.min_rate[worst])):
            return out, RoundingReport(moves=moves, feasible=True)
        served = np.flatnonzero(out.assoc[:, worst])
        if served.size == 0:
            raise InfeasibleRoundingError(f"user {worst} has no serving BS to repair")
        b = int(served[0])
        best = None
        for n in range(sc.n_access):
            owner = np.flatnonzero(out.gamma_access[b, :, n])
            owner = int(owner[0]) if owner.size else None
            if owner == worst:
                continue
            trial_prev = out.gamma_access[b, :, n].copy()
            out.gamma_access[b, :, n] = 0.0
            out.gamma_access[b, worst, n] = 1.0
            r = user_rates()
            gain = deficit[worst] - (sc.min_rate[worst] - r[worst])
            donor_ok = owner is None or r[owner] >= sc.min_rate[owner] - 1e-9
            out.gamma_access[b, :, n] = trial_prev
            if gain > 1e-12 and donor_ok and (best is None or gain > best[0] + 1e-12):
                best = (gain, n, owner)
        if best is None:
            raise InfeasibleRoundingError(
                f"cannot repair min-rate for user {worst}; deficit {deficit[worst]:.3e}")
        _, n, owner = best
        out.gamma_access[b, :, n] = 0.0
        out.gamma_access[b, worst, n] = 1.0
        moves.append(("access", b, n, owner, worst))
    raise InfeasibleRoundingError("repair loop exceeded its move budget")
