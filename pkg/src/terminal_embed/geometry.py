"""Point sets, unit secants, Gaussian width and dimension calculators."""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateInput, DimensionError, DomainError
from .seeding import make_rng

# rows of the Monte-Carlo Gaussian matrix processed at once
_WIDTH_CHUNK = 256


@dataclass(frozen=True)
class PointSet:
    """Ordered finite collection of points in R^N, optionally labelled.

    ``points`` is stored as a C-contiguous ``(n, N)`` float64 array and
    ``labels`` (if given) as an int64 array of length ``n``.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim == 1:
            pts = pts.reshape(1, -1)
        if pts.ndim != 2 or pts.shape[1] < 1:
            raise DimensionError(f"points must be an (n, N) array with N >= 1, got {pts.shape}")
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.ndim != 1 or len(labels) != len(pts):
                raise DimensionError(
                    f"{len(labels)} labels for {len(pts)} points"
                )
            object.__setattr__(self, "labels", labels.astype(np.int64))

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def subset(self, index) -> "PointSet":
        index = np.asarray(index, dtype=np.intp)
        labels = None if self.labels is None else self.labels[index]
        return PointSet(self.points[index], labels, dict(self.meta))


@dataclass(frozen=True)
class SecantSet:
    """Unit directions closed under negation.

    ``meta`` records how the set was built (pair counts, subsampling).
    """

    directions: np.ndarray
    source_size: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        d = np.asarray(self.directions, dtype=np.float64)
        if d.ndim != 2:
            raise DimensionError("directions must be a 2-D array")
        if len(d):
            norms = np.linalg.norm(d, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-12:
                raise DomainError("secant directions must have unit norm")
        object.__setattr__(self, "directions", d)

    def __len__(self):
        return self.directions.shape[0]


@dataclass(frozen=True)
class ManifoldParams:
    """Intrinsic dimension, reach and volumes of a compact submanifold.

    ``tau`` is the reach (already minimized over boundary components),
    ``volume`` is V_M and ``boundary_volume`` is V_dM.
    """

    d: int
    tau: float
    volume: float
    boundary_volume: float = 0.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise DomainError(f"intrinsic dimension must be an integer >= 1, got {self.d}")
        if not self.tau > 0:
            raise DomainError(f"reach must be positive, got {self.tau}")
        if not self.volume > 0:
            raise DomainError(f"volume must be positive, got {self.volume}")
        if not self.boundary_volume >= 0:
            raise DomainError(f"boundary volume must be >= 0, got {self.boundary_volume}")


def _as_points(X) -> np.ndarray:
    return X.points if isinstance(X, PointSet) else PointSet(X).points


def unit_secants(X, dedup_tol: float = 0.0, max_pairs: Optional[int] = None,
                 seed: int = 0) -> SecantSet:
    """Normalized differences of all distinct pairs of ``X``.

    Parameters
    ----------
    X : PointSet or array_like, shape (n, N)
    dedup_tol : float
        Directions ``v, w`` with ``||v - w|| <= dedup_tol`` are merged (the
        first one in pair order is kept together with its negation).  The
        default 0 merges exact duplicates only; a negative value keeps
        everything.
    max_pairs : int, optional
        If the number of unordered pairs exceeds this, a uniform seeded
        subsample of that many pairs is used.  Recorded in ``meta``.
    seed : int
        Seed for pair subsampling.

    Returns
    -------
    SecantSet
        Directions ordered as ``v_0, -v_0, v_1, -v_1, ...``.
    """
    pts = _as_points(X)
    n = len(pts)
    if n < 2 or len(np.unique(pts, axis=0)) < 2:
        raise DegenerateInput("unit secants need at least 2 distinct points")

    i, j = np.triu_indices(n, k=1)
    total = len(i)
    subsampled = max_pairs is not None and total > max_pairs
    if subsampled:
        pick = np.sort(make_rng(seed, "secant-pairs").choice(total, size=max_pairs, replace=False))
        i, j = i[pick], j[pick]

    diff = pts[j] - pts[i]
    norms = np.linalg.norm(diff, axis=1)
    keep = norms > 0
    v = diff[keep] / norms[keep, None]
    v = v + 0.0  # -0.0 -> 0.0 so exact duplicates compare equal

    both = np.empty((2 * len(v), pts.shape[1]))
    both[0::2] = v
    both[1::2] = -v
    both = both + 0.0

    if dedup_tol == 0 and len(v) > 1:
        # exact duplicates: v and -v share a sign-canonical key
        lead = np.argmax(v != 0, axis=1)
        sign = np.sign(v[np.arange(len(v)), lead])
        canon = v * sign[:, None] + 0.0
        _, first = np.unique(canon, axis=0, return_index=True)
        kept = np.zeros(len(v), dtype=bool)
        kept[first] = True
        both = both[np.repeat(kept, 2)]
    elif dedup_tol > 0 and len(v) > 1:
        tree = cKDTree(both)
        kept = np.zeros(len(both), dtype=bool)
        for k in range(len(v)):
            near = tree.query_ball_point(both[2 * k], dedup_tol)
            if not kept[near].any():
                kept[2 * k] = kept[2 * k + 1] = True
        both = both[kept]

    meta = {
        "pairs_total": int(total),
        "pairs_used": int(len(i)),
        "coincident_pairs": int((~keep).sum()),
        "subsampled": bool(subsampled),
        "dedup_tol": float(dedup_tol),
    }
    if subsampled:
        meta["subsample_seed"] = int(seed)
    return SecantSet(both, n, meta)


def gaussian_width_mc(S, trials: int = 1000, seed: int = 0):
    """Monte-Carlo estimate of the Gaussian width ``E sup_{s in S} <g, s>``.

    The same ``(seed, trials)`` always uses the same Gaussian draws, whatever
    ``S`` is, so estimates are monotone under set inclusion.

    Returns
    -------
    estimate, std_error : float
        Sample mean of the per-trial suprema and its standard error.
    """
    if trials < 2:
        raise DomainError("gaussian_width_mc needs at least 2 trials")
    dirs = S.directions if isinstance(S, SecantSet) else np.atleast_2d(np.asarray(S, dtype=np.float64))
    if dirs.size == 0 or len(dirs) == 0:
        raise DegenerateInput("Gaussian width of an empty set is undefined")

    rng = make_rng(seed, "gaussian-width")
    sups = np.empty(trials)
    for start in range(0, trials, _WIDTH_CHUNK):
        stop = min(start + _WIDTH_CHUNK, trials)
        g = rng.standard_normal((stop - start, dirs.shape[1]))
        sups[start:stop] = (g @ dirs.T).max(axis=1)
    return float(sups.mean()), float(sups.std(ddof=1) / math.sqrt(trials))


def unit_ball_volume(d: int) -> float:
    """Volume of the unit ball in R^d, ``pi^(d/2) / Gamma(d/2 + 1)``."""
    if d < 0:
        raise DomainError("dimension must be >= 0")
    return math.exp(0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d + 1.0))


def manifold_alpha(p: ManifoldParams) -> float:
    if p.d == 1:
        return 20.0 * p.volume / p.tau + p.boundary_volume
    return (p.volume / unit_ball_volume(p.d) * (41.0 / p.tau) ** p.d
            + p.boundary_volume / unit_ball_volume(p.d - 1) * (81.0 / p.tau) ** (p.d - 1))


def manifold_beta(p: ManifoldParams) -> float:
    alpha = manifold_alpha(p)
    return alpha * alpha + 3.0 ** p.d * alpha


def manifold_width_bound(p: ManifoldParams) -> float:
    """Upper bound on the Gaussian width of the unit secants of a manifold.

    Returns ``8 sqrt(2) sqrt(ln(beta) + 4 d)`` where beta is built from the
    volume/reach ratio (natural logarithm).
    """
    beta = manifold_beta(p)
    if not beta > 1.0:
        raise DomainError(f"beta = {beta} <= 1, bound undefined")
    return 8.0 * math.sqrt(2.0) * math.sqrt(math.log(beta) + 4.0 * p.d)


def target_dimension(width: float, eps: float, fail_prob: float,
                     c_prime: float = 1.0) -> int:
    """Rows of a scaled Gaussian matrix sufficient for eps-convex hull distortion.

    ``ceil(c_prime / eps**2 * (width + sqrt(ln(2 / fail_prob)))**2)``.  The
    constant ``c_prime`` depends on the row distribution and is not known
    numerically; 1.0 is a placeholder the caller should calibrate.
    """
    if not 0 < eps < 1:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    if not 0 < fail_prob < 1:
        raise DomainError(f"fail_prob must lie in (0, 1), got {fail_prob}")
    if not width >= 0:
        raise DomainError(f"width must be >= 0, got {width}")
    if not c_prime > 0:
        raise DomainError(f"c_prime must be positive, got {c_prime}")
    value = c_prime / eps ** 2 * (width + math.sqrt(math.log(2.0 / fail_prob))) ** 2
    # absorb last-ulp round-off so that exact integers are not bumped up
    return max(1, math.ceil(value * (1.0 - 1e-12)))
