"""Gaussian Johnson-Lindenstrauss matrices and distortion measurements."""
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DegenerateInput, DimensionError, DomainError, FormatError
from .geometry import PointSet, SecantSet
from .seeding import GENERATOR_NAME, generator_record, make_rng

MAGIC = b"JLM1"
_HEADER = struct.Struct("<4sIII")

#: default cap on pairwise midpoints examined by ``hull_distortion_estimate``
MIDPOINT_CAP = 10_000


@dataclass(frozen=True, eq=False)
class JLMatrix:
    """Unscaled Gaussian sensing matrix ``pi`` (m x N).

    The scaled view ``phi = pi / sqrt(m)`` is derived on access; it is never
    stored separately.
    """

    pi: np.ndarray
    seed: int = 0
    generator: str = GENERATOR_NAME

    def __post_init__(self):
        pi = np.ascontiguousarray(np.asarray(self.pi, dtype=np.float64))
        if pi.ndim != 2 or pi.shape[0] < 1 or pi.shape[1] < 1:
            raise DimensionError(f"pi must be a nonempty 2-D array, got shape {pi.shape}")
        object.__setattr__(self, "pi", pi)

    @property
    def m(self) -> int:
        return self.pi.shape[0]

    @property
    def N(self) -> int:
        return self.pi.shape[1]

    @property
    def phi(self) -> np.ndarray:
        return self.pi / math.sqrt(self.m)

    def __eq__(self, other):
        if not isinstance(other, JLMatrix):
            return NotImplemented
        return self.seed == other.seed and np.array_equal(self.pi, other.pi)

    __hash__ = None


def sample_jl(m: int, N: int, seed: int = 0) -> JLMatrix:
    """Draw ``pi`` with i.i.d. standard normal entries from PCG64(seed)."""
    if m < 1 or N < 1:
        raise DomainError(f"need m >= 1 and N >= 1, got m={m}, N={N}")
    if not 0 <= seed < 2 ** 32:
        raise DomainError("seed must fit in an unsigned 32-bit integer")
    rng = np.random.default_rng(seed)
    return JLMatrix(rng.standard_normal((m, N)), seed=int(seed))


def apply_scaled(A: JLMatrix, v) -> np.ndarray:
    """Compute ``phi @ v`` as ``(pi @ v) / sqrt(m)``.

    ``v`` may be one N-vector or an (k, N) array of row vectors; the result is
    then an (k, m) array.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != A.N or v.ndim > 2:
        raise DimensionError(f"expected vectors of length {A.N}, got shape {v.shape}")
    if v.ndim == 1:
        return (A.pi @ v) / math.sqrt(A.m)
    return (v @ A.pi.T) / math.sqrt(A.m)


@dataclass(frozen=True)
class DistortionStats:
    max_ratio: float
    min_ratio: float
    pair_count: int
    skipped_pairs: int = 0


def jl_distortion_stats(A: JLMatrix, X) -> DistortionStats:
    """Extremes of ``||phi x - phi y|| / ||x - y||`` over unordered pairs of X.

    Coincident pairs are skipped and counted.
    """
    pts = X.points if isinstance(X, PointSet) else PointSet(X).points
    if len(pts) < 2:
        raise DegenerateInput("need at least two points")
    if pts.shape[1] != A.N:
        raise DimensionError(f"points have dimension {pts.shape[1]}, matrix expects {A.N}")
    return _ratio_stats(pdist(apply_scaled(A, pts)), pdist(pts))


def _ratio_stats(embedded, original) -> DistortionStats:
    ok = original > 0
    if not ok.any():
        raise DegenerateInput("all points coincide")
    ratio = embedded[ok] / original[ok]
    return DistortionStats(float(ratio.max()), float(ratio.min()),
                           int(ok.sum()), int((~ok).sum()))


def _norm_gap(A: JLMatrix, pts: np.ndarray) -> np.ndarray:
    return np.abs(np.linalg.norm(apply_scaled(A, pts), axis=1) - np.linalg.norm(pts, axis=1))


def hull_distortion_estimate(A: JLMatrix, S, samples: int = 1000, seed: int = 0,
                             midpoint_cap: int = MIDPOINT_CAP) -> float:
    """Lower bound on ``sup_{x in conv(S)} | ||phi x|| - ||x|| |``.

    Exact evaluation is a nonconvex maximization, so the supremum is taken
    over a finite subset of the hull: every vertex, every pairwise midpoint
    (a seeded subsample once there are more than ``midpoint_cap`` pairs), and
    ``samples`` random convex combinations.  Each combination draws a subset
    of at most ``min(|S|, N + 1)`` vertices and flat Dirichlet weights.  The
    combinations come from their own substream in a fixed order, so raising
    ``samples`` only adds candidates.
    """
    dirs = S.directions if isinstance(S, SecantSet) else np.atleast_2d(np.asarray(S, dtype=np.float64))
    k = len(dirs)
    if k == 0:
        return 0.0
    if dirs.shape[1] != A.N:
        raise DimensionError("secant dimension does not match the matrix")

    best = float(_norm_gap(A, dirs).max())

    if k > 1:
        n_pairs = k * (k - 1) // 2
        if n_pairs <= midpoint_cap:
            i, j = np.triu_indices(k, 1)
        else:
            rng = make_rng(seed, "hull-midpoints")
            flat = np.sort(rng.choice(n_pairs, size=midpoint_cap, replace=False))
            i, j = _unrank_pairs(flat, k)
        for start in range(0, len(i), 4096):
            sl = slice(start, start + 4096)
            mids = 0.5 * (dirs[i[sl]] + dirs[j[sl]])
            best = max(best, float(_norm_gap(A, mids).max()))

    if samples > 0:
        rng = make_rng(seed, "hull-combinations")
        cap = min(k, A.N + 1)
        points = np.empty((samples, A.N))
        for t in range(samples):
            size = int(rng.integers(1, cap + 1))
            idx = rng.choice(k, size=size, replace=False)
            w = rng.dirichlet(np.ones(size))
            points[t] = w @ dirs[idx]
        best = max(best, float(_norm_gap(A, points).max()))
    return best


def _unrank_pairs(flat, k):
    """Invert the row-major ranking of pairs ``(i, j)``, ``i < j < k``."""
    flat = np.asarray(flat, dtype=np.int64)
    b = 2 * k - 1
    i = np.floor((b - np.sqrt(b * b - 8.0 * flat)) / 2).astype(np.int64)
    before = i * (2 * k - i - 1) // 2
    # float sqrt can land one row off near row boundaries
    low = flat < before
    i[low] -= 1
    before = i * (2 * k - i - 1) // 2
    high = flat >= before + (k - 1 - i)
    i[high] += 1
    before = i * (2 * k - i - 1) // 2
    return i, flat - before + i + 1


def save_jl(A: JLMatrix, path) -> Path:
    """Write ``pi`` as a JLM1 file plus a ``.json`` sidecar.

    Layout: 16-byte header (magic ``JLM1``, u32 m, u32 N, u32 seed, all
    little-endian) followed by m*N little-endian float64 values, row-major.
    """
    path = Path(path)
    if not 0 <= A.seed < 2 ** 32:
        raise DomainError("seed does not fit the u32 header field")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, A.m, A.N, A.seed))
        fh.write(A.pi.astype("<f8").tobytes(order="C"))
    sidecar = {"format": "JLM1", "m": A.m, "N": A.N, "seed": A.seed,
               "scaling": "phi = pi / sqrt(m)"}
    sidecar.update(generator_record())
    sidecar["generator"] = A.generator
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return path


def load_jl(path) -> JLMatrix:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated JLM1 header")
    magic, m, N, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * m * N
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    pi = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(m, N)
    generator = GENERATOR_NAME
    side = path.with_suffix(path.suffix + ".json")
    if side.exists():
        generator = json.loads(side.read_text()).get("generator", GENERATOR_NAME)
    return JLMatrix(pi.astype(np.float64), seed=int(seed), generator=generator)
