"""Slow, independent oracle for the extension program.

Used by the test-suite to validate :func:`terminal_embed.solver.solve_extension`.
It shares no code with the ADMM path beyond the problem data: the program is
rebuilt here from the training set and the matrix, and solved by cyclic
Dykstra projections onto the ball and onto every slab.

* QUADRATIC:  ``||z||^2 + 2<Mv, z>`` is ``||z + Mv||^2`` up to a constant, so
  the minimizer is the Euclidean projection of ``-Mv`` onto the feasible set,
  which Dykstra's algorithm converges to.
* INNER_PROD: for a ball multiplier ``lam > 0`` the minimizer of
  ``-<g, z> + (lam/2)||z||^2`` over the slabs alone is the projection of
  ``g / lam`` onto the slab polyhedron (Dykstra without the ball).  Its norm
  is nonincreasing in ``lam``; bisection finds the ``lam`` where it reaches
  the unit sphere, which satisfies the KKT conditions of the original
  linear program.  When the norm stays below 1 the ball may be inactive;
  the slab-only linear program is then solved by HiGHS and accepted if it is
  bounded with a minimizer inside the ball.
"""
import math

import numpy as np
from scipy.optimize import linprog

from .errors import InfeasibleError
from .solver import Objective, TerminalModel, _check_query

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn

MIN_CYCLES = 1_000_000


@njit(cache=True)
def _dykstra(target, A, lo, hi, cycles, use_ball):
    """Dykstra's alternating projections onto {||z|| <= 1} and each slab."""
    m = target.shape[0]
    n = A.shape[0]
    z = target.copy()
    inc_ball = np.zeros(m)
    inc = np.zeros((n, m))
    sq = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(m):
            s += A[i, j] * A[i, j]
        sq[i] = s
    for _ in range(cycles):
        # ball
        nrm = 0.0
        for j in range(m):
            t = z[j] + inc_ball[j]
            nrm += t * t
        nrm = math.sqrt(nrm)
        scale = 1.0 / nrm if (use_ball and nrm > 1.0) else 1.0
        for j in range(m):
            t = z[j] + inc_ball[j]
            p = t * scale
            inc_ball[j] = t - p
            z[j] = p
        # slabs
        for i in range(n):
            dot = 0.0
            for j in range(m):
                dot += A[i, j] * (z[j] + inc[i, j])
            shift = 0.0
            if sq[i] > 0.0:
                if dot > hi[i]:
                    shift = (hi[i] - dot) / sq[i]
                elif dot < lo[i]:
                    shift = (lo[i] - dot) / sq[i]
            for j in range(m):
                t = z[j] + inc[i, j]
                p = t + shift * A[i, j]
                inc[i, j] = t - p
                z[j] = p
    return z


def _program(model: TerminalModel, y: np.ndarray):
    X = model.X.points
    d2 = ((X - y) ** 2).sum(axis=1)
    anchor = int(np.argmin(d2))
    a = X[anchor]
    v = y - a
    r = float(np.linalg.norm(v))
    D = X - a
    dn = np.linalg.norm(D, axis=1)
    keep = dn > 0
    phi = model.A.pi / math.sqrt(model.A.m)
    A = (D[keep] @ phi.T) / dn[keep, None]
    b = (D[keep] @ v) / (dn[keep] * r) if r > 0 else np.zeros(int(keep.sum()))
    if model.config.pi_convention.value == "SCALED":
        Mv = phi @ v
    else:
        Mv = model.A.pi @ v
    return anchor, r, v, np.ascontiguousarray(A), b, Mv


def _violation(z, A, b, e):
    az = A @ z
    return max(0.0, float(np.linalg.norm(z)) - 1.0,
               float(np.max(np.abs(az - b) - e, initial=0.0)))


def _solve_linear(g, A, b, e, cycles, tol, bisect_steps=60):
    lo, hi = b - e, b + e

    def proj(lam):
        return _dykstra(g / lam, A, lo, hi, cycles, False)

    def slab_ok(z):
        return float(np.max(np.abs(A @ z - b) - e, initial=0.0)) <= tol

    lam_hi = 1.0
    z_hi = proj(lam_hi)
    if not slab_ok(z_hi):
        return z_hi
    while np.linalg.norm(z_hi) > 1.0:
        lam_hi *= 2.0
        if lam_hi > 1e8:
            return z_hi
        z_hi = proj(lam_hi)
    lam_lo = lam_hi
    z_lo = z_hi
    lp_checked = False
    while np.linalg.norm(z_lo) <= 1.0:
        if lam_lo < 1e-3 and not lp_checked:
            lp_checked = True
            lp = linprog(-g, A_ub=np.vstack([A, -A]), b_ub=np.concatenate([hi, -lo]),
                         bounds=[(None, None)] * len(g), method="highs")
            if lp.status == 0 and np.linalg.norm(lp.x) <= 1.0:
                return lp.x
        if lam_lo < 1e-9:
            return z_lo
        lam_lo /= 2.0
        z_lo = proj(lam_lo)
    for _ in range(bisect_steps):
        mid = math.sqrt(lam_lo * lam_hi)
        z = proj(mid)
        if np.linalg.norm(z) > 1.0:
            lam_lo = mid
        else:
            lam_hi, z_hi = mid, z
    return z_hi


def reference_solve(model: TerminalModel, y, eps=None, cycles: int = MIN_CYCLES,
                    tol: float = 1e-6) -> np.ndarray:
    """Minimizer ``y'`` of the extension program, by long-horizon Dykstra.

    Parameters
    ----------
    eps : float, optional
        Slab half-width.  Defaults to the model's eps, relaxed by the same
        schedule as the main solver until a feasible point is found.
    cycles : int
        Full sweeps over the ball and all slabs per projection (at least
        ``10**6`` by default).  The INNER_PROD bisection runs one projection
        per step, so callers may lower this for that objective.
    tol : float
        Normalized violation above which the limit is declared infeasible.
    """
    y = _check_query(model, y)
    cfg = model.config
    anchor, r, v, A, b, Mv = _program(model, y)
    if r == 0.0:
        return np.zeros(model.A.m)
    g = Mv / r
    if cfg.objective is Objective.LINEAR_BYPASS:
        raise ValueError("LINEAR_BYPASS has no program to solve")

    schedule = [eps] if eps is not None else [
        cfg.eps * cfg.relax_factor ** k for k in range(cfg.max_relax + 1)]
    worst = np.inf
    for e in schedule:
        if cfg.objective is Objective.QUADRATIC:
            z = _dykstra(-g, A, b - e, b + e, int(cycles), True)
        else:
            z = _solve_linear(g, A, b, e, int(cycles), tol)
        viol = _violation(z, A, b, e)
        if viol <= tol:
            return r * z
        worst = min(worst, viol)
    raise InfeasibleError(f"reference Dykstra limit violates constraints by {worst:.3e}",
                          best_residual=worst, eps_used=schedule[-1])
