"""Outer extension of a linear JL map: per-query constrained minimization.

For a query ``y`` with nearest training point ``a`` and offset ``v = y - a``
the extension is

    f(y) = (M a + y', sqrt(||v||^2 - ||y'||^2))

where ``y'`` minimizes the configured objective over the unit-radius ball
``||z|| <= ||v||`` intersected with the slabs

    |<z, phi (x - a)> - <v, x - a>| <= eps ||v|| ||x - a||     for x in X.

Internally every query is rescaled by ``||v||`` and each slab by
``||x - a||`` so that the program always lives in the unit ball with slab
half-width ``eps``.  Residuals and tolerances refer to this normalized
program, i.e. they are relative to ``||v||``.
"""
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import DimensionError, DomainError, InfeasibleError, NumericalError
from .geometry import PointSet
from .jl import JLMatrix, apply_scaled

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn


class Objective(str, Enum):
    LINEAR_BYPASS = "LINEAR_BYPASS"
    INNER_PROD = "INNER_PROD"
    QUADRATIC = "QUADRATIC"


class PiConvention(str, Enum):
    SCALED = "SCALED"
    UNSCALED = "UNSCALED"


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of the extension program and of the ADMM solver.

    ``pi_convention`` selects the matrix used in the objective and for the
    anchor image: SCALED uses ``phi`` everywhere, UNSCALED uses the raw
    ``pi`` there (constraints always use ``phi``).
    """

    eps: float = 0.1
    objective: Objective = Objective.QUADRATIC
    max_iter: int = 5000
    tol_feas: float = 1e-6
    tol_obj: float = 1e-4
    admm_rho: float = 1.0
    relax_factor: float = 2.0
    max_relax: int = 3
    pi_convention: PiConvention = PiConvention.SCALED

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        object.__setattr__(self, "pi_convention", PiConvention(self.pi_convention))
        if not 0 < self.eps < 1:
            raise DomainError(f"eps must lie in (0, 1), got {self.eps}")
        if not (self.tol_feas > 0 and self.tol_obj > 0):
            raise DomainError("tolerances must be positive")
        if not self.relax_factor > 1:
            raise DomainError("relax_factor must exceed 1")
        if self.max_relax < 0 or self.max_iter < 1:
            raise DomainError("max_relax must be >= 0 and max_iter >= 1")
        if not self.admm_rho > 0:
            raise DomainError("admm_rho must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objective"] = self.objective.value
        d["pi_convention"] = self.pi_convention.value
        return d


@dataclass(eq=False)
class ExtensionResult:
    anchor_index: int
    y_prime: np.ndarray
    embedded: np.ndarray
    feas_residual: float
    eps_used: float
    relaxations: int
    clamped_last_coord: bool
    iterations: int
    in_training_set: bool
    objective: float = float("nan")
    failed: bool = False
    error: Optional[str] = None
    elapsed_ms: float = field(default=0.0, compare=False)


class TerminalModel:
    """Frozen training set, JL matrix and solver configuration.

    Construction precomputes ``phi x`` for every training point; these rows
    are returned verbatim for queries that are training points.
    """

    def __init__(self, X: PointSet, A: JLMatrix, config: SolverConfig = SolverConfig()):
        if not isinstance(X, PointSet):
            X = PointSet(X)
        if len(X) == 0:
            raise DimensionError("training set is empty")
        if A.N != X.dim:
            raise DimensionError(f"matrix expects dimension {A.N}, training set has {X.dim}")
        self.X = X
        self.A = A
        self.config = config
        self.phi_images = apply_scaled(A, X.points)
        self.phi_images.setflags(write=False)
        if config.pi_convention is PiConvention.SCALED:
            self.anchor_images = self.phi_images
        else:
            self.anchor_images = X.points @ A.pi.T
            self.anchor_images.setflags(write=False)
        self.sq_norms = np.einsum("ij,ij->i", X.points, X.points)

    @property
    def m(self) -> int:
        return self.A.m

    def with_config(self, config: SolverConfig) -> "TerminalModel":
        return TerminalModel(self.X, self.A, config)

    def objective_matrix_apply(self, v: np.ndarray) -> np.ndarray:
        """``M v`` with ``M = phi`` (SCALED) or ``pi`` (UNSCALED)."""
        if self.config.pi_convention is PiConvention.SCALED:
            return apply_scaled(self.A, v)
        return self.A.pi @ v


def _check_query(model: TerminalModel, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != model.X.dim:
        raise DimensionError(f"query must be a vector of length {model.X.dim}, got shape {y.shape}")
    return y


def nearest_train_point(model: TerminalModel, y):
    """Index of and distance to the closest training point (lowest index on ties)."""
    y = _check_query(model, y)
    diff = model.X.points - y
    d2 = np.einsum("ij,ij->i", diff, diff)
    idx = int(np.argmin(d2))
    return idx, float(math.sqrt(d2[idx]))


def _locate(model: TerminalModel, y):
    """Anchor index, distance and exact-membership flag."""
    diff = model.X.points - y
    d2 = np.einsum("ij,ij->i", diff, diff)
    idx = int(np.argmin(d2))
    if d2[idx] == 0.0:
        for k in np.flatnonzero(d2 == 0.0):
            if np.array_equal(model.X.points[k], y):
                return int(k), 0.0, True
    return idx, float(math.sqrt(d2[idx])), False


# ---------------------------------------------------------------------------
# normalized program:  min  (p/2)||z||^2 + <q, z>
#                      s.t. ||z|| <= 1,  lo <= A z <= hi
# ---------------------------------------------------------------------------

def _project_ball(z: np.ndarray) -> np.ndarray:
    nz = math.sqrt(float(z @ z))
    return z / nz if nz > 1.0 else z


def _slab_residual(Ahat, lo, hi, z) -> float:
    if len(lo) == 0:
        return 0.0
    az = Ahat @ z
    return float(max(0.0, np.max(lo - az), np.max(az - hi)))


@dataclass
class _AdmmOutcome:
    z: np.ndarray
    residual: float
    iterations: int
    converged: bool
    infeasible: bool


@njit(cache=True)
def _admm_kernel(Ahat, lo, hi, p, q, z0, rho, max_iter, tol_feas, tol_dual,
                 check_every, adapt_every):
    m = q.shape[0]
    n = lo.shape[0]
    sigma = 1e-6
    alpha = 1.6
    AtA = Ahat.T @ Ahat
    K = rho * AtA
    for j in range(m):
        K[j, j] += p + sigma + rho
    Kinv = np.linalg.inv(K)

    x = z0.copy()
    w_b = x.copy()
    nb = np.sqrt(np.dot(w_b, w_b))
    if nb > 1.0:
        w_b /= nb
    w_s = np.minimum(np.maximum(Ahat @ x, lo), hi)
    y_b = np.zeros(m)
    y_s = np.zeros(n)
    dy_b = np.zeros(m)
    dy_s = np.zeros(n)

    best_z = w_b.copy()
    best_res = _slab_residual_nb(Ahat, lo, hi, best_z)
    k = 0
    status = 0
    for k in range(1, max_iter + 1):
        rhs = sigma * x - q + (rho * w_b - y_b) + Ahat.T @ (rho * w_s - y_s)
        xt = Kinv @ rhs
        axt = Ahat @ xt
        hb = alpha * xt + (1.0 - alpha) * w_b
        hs = alpha * axt + (1.0 - alpha) * w_s
        x = alpha * xt + (1.0 - alpha) * x
        t = hb + y_b / rho
        nt = np.sqrt(np.dot(t, t))
        w_b = t / nt if nt > 1.0 else t
        w_s = np.minimum(np.maximum(hs + y_s / rho, lo), hi)
        dy_b = rho * (hb - w_b)
        dy_s = rho * (hs - w_s)
        y_b = y_b + dy_b
        y_s = y_s + dy_s

        if k % check_every != 0 and k != max_iter:
            continue
        nx = np.sqrt(np.dot(x, x))
        cand = x / nx if nx > 1.0 else x.copy()
        res = _slab_residual_nb(Ahat, lo, hi, cand)
        if res < best_res:
            best_res = res
            best_z = cand
        ax = Ahat @ x
        aty = Ahat.T @ y_s
        dual = np.max(np.abs(p * x + q + y_b + aty))
        dual_scale = max(np.max(np.abs(p * x)), np.max(np.abs(y_b + aty)),
                         np.max(np.abs(q)), 1.0)
        if res <= tol_feas and dual <= tol_dual * dual_scale:
            return cand, res, k, 1

        # primal infeasibility certificate on the dual increment
        dmax = np.max(np.abs(dy_b))
        if n > 0:
            dmax = max(dmax, np.max(np.abs(dy_s)))
        if dmax > 0 and k >= 50:
            cert = np.max(np.abs(dy_b + Ahat.T @ dy_s)) <= 1e-6 * dmax
            support = (np.sqrt(np.dot(dy_b, dy_b)) + np.dot(hi, np.maximum(dy_s, 0.0))
                       + np.dot(lo, np.minimum(dy_s, 0.0)))
            if cert and support < -1e-6 * dmax:
                return best_z, best_res, k, 2

        if k % adapt_every == 0:
            prim = np.max(np.abs(x - w_b))
            prim_scale = max(np.max(np.abs(x)), np.max(np.abs(w_b)), 1e-12)
            if n > 0:
                prim = max(prim, np.max(np.abs(ax - w_s)))
                prim_scale = max(prim_scale, np.max(np.abs(ax)), np.max(np.abs(w_s)))
            if dual > 0 and prim > 0:
                new_rho = rho * np.sqrt((prim / prim_scale) / (dual / dual_scale))
                new_rho = min(max(new_rho, 1e-6), 1e6)
                if new_rho > 5 * rho or new_rho < rho / 5:
                    rho = new_rho
                    K = rho * AtA
                    for j in range(m):
                        K[j, j] += p + sigma + rho
                    Kinv = np.linalg.inv(K)
    return best_z, best_res, k, status


@njit(cache=True)
def _slab_residual_nb(Ahat, lo, hi, z):
    if lo.shape[0] == 0:
        return 0.0
    az = Ahat @ z
    return max(0.0, np.max(lo - az), np.max(az - hi))


def _admm(Ahat, lo, hi, p, q, z0, rho, max_iter, tol_feas, tol_dual=1e-7,
          check_every=10, adapt_every=50):
    """OSQP-style ADMM with constraint matrix ``C = [I; Ahat]``.

    The z-update uses the inverse of ``(p + sigma + rho) I + rho Ahat^T Ahat``
    (recomputed only when rho is adapted); the splitting variable is
    projected onto ball x box in closed form.  The loop is compiled with
    numba when available.
    """
    z, res, k, status = _admm_kernel(
        np.ascontiguousarray(Ahat, dtype=np.float64), np.ascontiguousarray(lo, dtype=np.float64),
        np.ascontiguousarray(hi, dtype=np.float64), float(p), np.ascontiguousarray(q, dtype=np.float64),
        np.ascontiguousarray(z0, dtype=np.float64), float(rho), int(max_iter), float(tol_feas),
        float(tol_dual), int(check_every), int(adapt_every))
    return _AdmmOutcome(z, float(res), int(k), status == 1, status == 2)


@dataclass
class _Program:
    """Normalized per-query data."""

    anchor: int
    r: float
    v: np.ndarray          # y - anchor
    Ahat: np.ndarray       # rows phi(x - a) / ||x - a||
    b: np.ndarray          # <v, x - a> / (||v|| ||x - a||)
    g: np.ndarray          # M v / ||v||
    z0: np.ndarray         # phi v / ||v||


def _build_program(model: TerminalModel, y: np.ndarray, anchor: int, r: float) -> _Program:
    a = model.X.points[anchor]
    v = y - a
    D = model.X.points - a
    dn = np.sqrt(np.einsum("ij,ij->i", D, D))
    keep = dn > 0
    Ahat = (model.phi_images[keep] - model.phi_images[anchor]) / dn[keep, None]
    b = (D[keep] @ v) / (dn[keep] * r)
    g = model.objective_matrix_apply(v) / r
    z0 = apply_scaled(model.A, v) / r
    return _Program(anchor, r, v, np.ascontiguousarray(Ahat), b, g, z0)


def _objective_terms(objective: Objective, g: np.ndarray):
    """``(p, q)`` of the normalized objective ``(p/2)||z||^2 + <q, z>``."""
    if objective is Objective.QUADRATIC:
        return 2.0, 2.0 * g
    return 0.0, -g


def _ball_minimizer(objective: Objective, g: np.ndarray) -> np.ndarray:
    if objective is Objective.QUADRATIC:
        return _project_ball(-g)
    ng = math.sqrt(float(g @ g))
    return g / ng if ng > 0 else np.zeros_like(g)


def normalized_objective(objective, g, z) -> float:
    p, q = _objective_terms(Objective(objective), g)
    return float(0.5 * p * (z @ z) + q @ z)


def _solve_program(prog: _Program, cfg: SolverConfig):
    """Minimize over ball x slabs, relaxing eps when infeasible.

    Returns ``(z_hat, residual, eps_used, relaxations, iterations)``.
    """
    p, q = _objective_terms(cfg.objective, prog.g)
    eps = cfg.eps
    best = None
    total_iter = 0
    for relax in range(cfg.max_relax + 1):
        lo, hi = prog.b - eps, prog.b + eps
        z = _ball_minimizer(cfg.objective, prog.g)
        res = _slab_residual(prog.Ahat, lo, hi, z)
        if res <= cfg.tol_feas:
            # the unconstrained-in-slabs minimizer is feasible, hence optimal
            return z, res, eps, relax, total_iter
        out = _admm(prog.Ahat, lo, hi, p, q, prog.z0, cfg.admm_rho,
                    cfg.max_iter, cfg.tol_feas)
        total_iter += out.iterations
        if out.converged:
            return out.z, out.residual, eps, relax, total_iter
        if best is None or out.residual < best[1]:
            best = (out.z, out.residual)
        if relax < cfg.max_relax:
            eps *= cfg.relax_factor
    raise InfeasibleError(
        f"no feasible point within tol_feas={cfg.tol_feas} after {cfg.max_relax} "
        f"relaxations (eps reached {eps:g}, best residual {best[1]:.3e})",
        best_residual=best[1], eps_used=eps, best_y_prime=prog.r * best[0],
    )


def _assemble(model, anchor, y_prime, r, tol_feas):
    slack = r * r - float(y_prime @ y_prime)
    clamped = False
    if slack < 0:
        if -slack > tol_feas * r * r:
            raise NumericalError(
                f"||y'||^2 exceeds ||y - anchor||^2 by {-slack:.3e}"
            )
        clamped = True
        slack = 0.0
    embedded = np.empty(model.m + 1)
    embedded[:-1] = model.anchor_images[anchor] + y_prime
    embedded[-1] = math.sqrt(slack)
    return embedded, clamped


def _trivial_result(model, anchor, member, cfg):
    embedded = np.zeros(model.m + 1)
    embedded[:-1] = model.anchor_images[anchor]
    return ExtensionResult(anchor, np.zeros(model.m), embedded, 0.0, cfg.eps, 0,
                           False, 0, member, objective=0.0)


def solve_extension(model: TerminalModel, y) -> ExtensionResult:
    """Evaluate the outer extension at ``y`` and return the full record.

    Raises
    ------
    InfeasibleError
        No feasible ``y'`` after ``max_relax`` relaxations of eps.
    NumericalError
        ``||y'||`` exceeds the ball radius beyond ``tol_feas``.
    """
    t0 = time.perf_counter()
    y = _check_query(model, y)
    cfg = model.config
    anchor, r, member = _locate(model, y)
    if member or r == 0.0:
        out = _trivial_result(model, anchor, member, cfg)
        out.elapsed_ms = 1e3 * (time.perf_counter() - t0)
        return out

    prog = _build_program(model, y, anchor, r)
    if cfg.objective is Objective.LINEAR_BYPASS:
        z = _project_ball(prog.z0)
        res = _slab_residual(prog.Ahat, prog.b - cfg.eps, prog.b + cfg.eps, z)
        eps_used, relax, iters, obj = cfg.eps, 0, 0, float("nan")
    else:
        z, res, eps_used, relax, iters = _solve_program(prog, cfg)
        obj = r * r * normalized_objective(cfg.objective, prog.g, z)
    y_prime = r * z
    embedded, clamped = _assemble(model, anchor, y_prime, r, cfg.tol_feas)
    return ExtensionResult(anchor, y_prime, embedded, res, eps_used, relax, clamped,
                           iters, False, objective=obj,
                           elapsed_ms=1e3 * (time.perf_counter() - t0))


def embed_point(model: TerminalModel, y) -> np.ndarray:
    """``f(y)`` in R^(m+1); raises exactly what :func:`solve_extension` raises."""
    return solve_extension(model, y).embedded


def _solve_or_flag(model: TerminalModel, y) -> ExtensionResult:
    t0 = time.perf_counter()
    try:
        return solve_extension(model, y)
    except InfeasibleError as exc:
        y = np.asarray(y, dtype=np.float64)
        anchor, r, _ = _locate(model, y)
        yp = exc.best_y_prime
        embedded, clamped = _assemble(model, anchor, yp, r, np.inf)
        return ExtensionResult(anchor, yp, embedded, exc.best_residual, exc.eps_used,
                               model.config.max_relax, clamped, 0, False,
                               failed=True, error=str(exc),
                               elapsed_ms=1e3 * (time.perf_counter() - t0))
    except NumericalError as exc:
        y = np.asarray(y, dtype=np.float64)
        anchor, _, _ = _locate(model, y)
        return ExtensionResult(anchor, np.full(model.m, np.nan), np.full(model.m + 1, np.nan),
                               float("nan"), model.config.eps, 0, False, 0, False,
                               failed=True, error=str(exc),
                               elapsed_ms=1e3 * (time.perf_counter() - t0))


def embed_batch(model: TerminalModel, Q, threads: int = 1) -> list:
    """Evaluate every row of ``Q``; order is preserved.

    Per-point failures do not abort the batch: an infeasible query gets the
    least-violating candidate found (``failed=True``, ``error`` set).
    Results are independent of ``threads``.
    """
    pts = Q.points if isinstance(Q, PointSet) else PointSet(Q).points
    if pts.shape[1] != model.X.dim:
        raise DimensionError(f"queries have dimension {pts.shape[1]}, model expects {model.X.dim}")
    if threads <= 1 or len(pts) < 2:
        return [_solve_or_flag(model, y) for y in pts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda y: _solve_or_flag(model, y), pts))


def extension_objective(model: TerminalModel, y, y_prime) -> float:
    """Objective value ``h(y')`` in the original (unnormalized) units."""
    y = _check_query(model, y)
    anchor, r, member = _locate(model, y)
    if member or r == 0.0:
        return 0.0
    v = y - model.X.points[anchor]
    Mv = model.objective_matrix_apply(v)
    y_prime = np.asarray(y_prime, dtype=np.float64)
    if model.config.objective is Objective.QUADRATIC:
        return float(y_prime @ y_prime + 2.0 * Mv @ y_prime)
    return float(-Mv @ y_prime)


def constraint_violation(model: TerminalModel, y, y_prime, eps: float) -> float:
    """Largest normalized violation of the ball and slab conditions at ``y'``.

    Recomputed from scratch (``phi (x - a)`` applied directly), independent of
    the solver's internal data.
    """
    y = _check_query(model, y)
    anchor, r, member = _locate(model, y)
    if member or r == 0.0:
        return float(np.linalg.norm(y_prime))
    a = model.X.points[anchor]
    v = y - a
    D = model.X.points - a
    dn = np.linalg.norm(D, axis=1)
    keep = dn > 0
    lhs = apply_scaled(model.A, D[keep]) @ y_prime - D[keep] @ v
    slab = np.abs(lhs) / (r * dn[keep]) - eps
    ball = np.linalg.norm(y_prime) / r - 1.0
    return float(max(0.0, ball, np.max(slab, initial=0.0)))
