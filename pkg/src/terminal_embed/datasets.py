"""Data ingestion (IDX, CSV) and synthetic generators.

Generators return :class:`PointSet` objects whose ``meta`` dict holds the
generating parameters (and the random plane of circle tubes); it can be
written next to the data with :func:`write_meta`.
"""
import csv
import json
import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError, FormatError, InsufficientData
from .geometry import PointSet
from .seeding import make_rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def read_idx_images(images_path) -> np.ndarray:
    """Pixels of an IDX3 ubyte file as an (count, rows*cols) array in [0, 1]."""
    raw = _read_bytes(images_path)
    if len(raw) < 16:
        raise FormatError(f"{images_path}: truncated IDX image header")
    magic, count, rows, cols = struct.unpack_from(">IIII", raw)
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"{images_path}: bad image magic 0x{magic:08x}")
    size = count * rows * cols
    if len(raw) != 16 + size:
        raise FormatError(f"{images_path}: expected {16 + size} bytes, found {len(raw)}")
    pix = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows * cols)
    return pix.astype(np.float64) / 255.0


def read_idx_labels(labels_path) -> np.ndarray:
    raw = _read_bytes(labels_path)
    if len(raw) < 8:
        raise FormatError(f"{labels_path}: truncated IDX label header")
    magic, count = struct.unpack_from(">II", raw)
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"{labels_path}: bad label magic 0x{magic:08x}")
    if len(raw) != 8 + count:
        raise FormatError(f"{labels_path}: expected {8 + count} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def read_idx(images_path, labels_path) -> PointSet:
    """Read an MNIST-style image/label pair (pixels scaled by 1/255)."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    return PointSet(images, labels, {"source": "idx", "images": str(images_path),
                                     "labels": str(labels_path)})


def write_idx(points: PointSet, images_path, labels_path, shape=None):
    """Inverse of :func:`read_idx` for points in [0, 1] on a 1/255 grid."""
    pix = np.rint(points.points * 255.0)
    if pix.min() < 0 or pix.max() > 255:
        raise DomainError("pixel values must lie in [0, 1]")
    if shape is None:
        side = math.isqrt(points.dim)
        shape = (side, points.dim // side) if side * side == points.dim else (1, points.dim)
    rows, cols = shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, len(points), rows, cols))
        fh.write(pix.astype(np.uint8).tobytes())
    labels = points.labels if points.labels is not None else np.zeros(len(points), int)
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(points)))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def read_csv(path, has_labels: bool = False) -> PointSet:
    """One point per line, comma separated; optional integer label last.

    Blank lines are ignored.  Ragged rows or unparsable fields raise
    :class:`FormatError` naming the line.
    """
    rows, labels = [], []
    width = None
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
                if width < (2 if has_labels else 1):
                    raise FormatError("no coordinates", line=lineno)
            elif len(row) != width:
                raise FormatError(f"expected {width} fields, found {len(row)}", line=lineno)
            try:
                if has_labels:
                    rows.append([float(c) for c in row[:-1]])
                    labels.append(int(row[-1]))
                else:
                    rows.append([float(c) for c in row])
            except ValueError as exc:
                raise FormatError(str(exc), line=lineno) from None
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return PointSet(np.array(rows), np.array(labels) if has_labels else None,
                    {"source": "csv", "path": str(path)})


def write_csv(points: PointSet, path, with_labels: bool = None):
    if with_labels is None:
        with_labels = points.labels is not None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for k, p in enumerate(points.points):
            row = [repr(float(c)) for c in p]
            if with_labels:
                row.append(str(int(points.labels[k])))
            w.writerow(row)


def write_meta(points: PointSet, path):
    Path(path).write_text(json.dumps(points.meta, indent=2, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


# ---------------------------------------------------------------------------
# synthetic generators
# ---------------------------------------------------------------------------

def random_plane(N: int, rng) -> np.ndarray:
    """Orthonormal 2 x N basis of a uniformly random 2-plane."""
    q, r = np.linalg.qr(rng.standard_normal((N, 2)))
    return (q * np.sign(np.diag(r))).T


def uniform_ball(n: int, N: int, radius: float, rng) -> np.ndarray:
    """``n`` points uniform in the N-dimensional ball of the given radius."""
    g = rng.standard_normal((n, N))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (radius * rng.random(n) ** (1.0 / N))[:, None]


def circle_distance(points, center, plane, radius) -> np.ndarray:
    """Euclidean distance from each point to the circle in ``plane`` about ``center``."""
    q = np.asarray(points) - center
    inplane = q @ plane.T
    out = q - inplane @ plane
    rho = np.linalg.norm(inplane, axis=1)
    return np.sqrt((rho - radius) ** 2 + np.einsum("ij,ij->i", out, out))


def _circle(N, n, radius, delta, rng, center, plane, phase, angles):
    if angles == "grid":
        theta = phase + 2.0 * np.pi * np.arange(n) / n
    elif angles == "random":
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
    else:
        raise DomainError(f"unknown angle scheme {angles!r}")
    pts = center + radius * (np.cos(theta)[:, None] * plane[0] + np.sin(theta)[:, None] * plane[1])
    if delta > 0:
        pts = pts + uniform_ball(n, N, delta, rng)
    return pts, theta


def gen_circle_tube(N: int, n: int, radius: float = 1.0, delta: float = 0.0,
                    seed: int = 0, plane=None, center=None, angles: str = "grid") -> PointSet:
    """Points of ``tube(delta, circle)`` for a circle in a random 2-plane.

    With ``angles="grid"`` the base angles are ``n`` equally spaced values
    with a random phase; ``"random"`` draws them uniformly.  Each point is
    then moved by a vector drawn uniformly from the ``delta``-ball.
    """
    if N < 2:
        raise DomainError("a circle needs N >= 2")
    if delta < 0 or radius <= 0:
        raise DomainError("need radius > 0 and delta >= 0")
    rng = make_rng(seed, "circle-tube")
    plane = random_plane(N, rng) if plane is None else np.asarray(plane, dtype=np.float64)
    center = np.zeros(N) if center is None else np.asarray(center, dtype=np.float64)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    pts, theta = _circle(N, n, radius, delta, rng, center, plane, phase, angles)
    meta = {"generator": "circle_tube", "N": N, "n": n, "radius": radius, "delta": delta,
            "seed": seed, "angles": angles, "plane": plane, "center": center,
            "theta": theta}
    return PointSet(pts, None, meta)


def gen_two_manifolds(N: int, n_per_class: int, separation: float, delta: float = 0.0,
                      seed: int = 0, radius: float = 1.0, same_plane: bool = True,
                      angles: str = "grid") -> PointSet:
    """Two labelled circle tubes whose centers are ``separation`` apart.

    Class 0 is centered at the origin, class 1 at ``separation * u`` where
    ``u`` is the first axis of the class-0 plane when ``same_plane`` (else a
    random unit vector, and class 1 gets its own random plane).  Both circles
    share their base angles.  Points are ordered class by class, each class
    in angular order.  Any cross-class pair is at least
    ``separation - 2 (radius + delta)`` apart.
    """
    if N < 2:
        raise DomainError("circles need N >= 2")
    if separation < 0 or delta < 0 or radius <= 0:
        raise DomainError("need separation >= 0, delta >= 0, radius > 0")
    rng = make_rng(seed, "two-manifolds")
    plane0 = random_plane(N, rng)
    if same_plane:
        plane1, shift = plane0, plane0[0]
    else:
        plane1 = random_plane(N, rng)
        shift = rng.standard_normal(N)
        shift /= np.linalg.norm(shift)
    c0, c1 = np.zeros(N), separation * shift
    phase = rng.uniform(0.0, 2.0 * np.pi)
    p0, theta = _circle(N, n_per_class, radius, delta, rng, c0, plane0, phase, angles)
    p1, theta1 = _circle(N, n_per_class, radius, delta, rng, c1, plane1, phase, angles)
    labels = np.repeat([0, 1], n_per_class)
    meta = {"generator": "two_manifolds", "N": N, "n_per_class": n_per_class,
            "separation": separation, "delta": delta, "radius": radius, "seed": seed,
            "same_plane": same_plane, "angles": angles,
            "centers": [c0, c1], "planes": [plane0, plane1], "theta": [theta, theta1]}
    return PointSet(np.vstack([p0, p1]), labels, meta)


def cross_class_min_distance(data: PointSet) -> float:
    """Smallest distance between two points with different labels."""
    if data.labels is None:
        raise DomainError("need labelled data")
    classes = np.unique(data.labels)
    if len(classes) < 2:
        raise DomainError("need at least two classes")
    best = np.inf
    for c in classes[:-1]:
        inside = data.labels == c
        tree = cKDTree(data.points[inside])
        others = data.points[data.labels > c]
        best = min(best, float(tree.query(others)[0].min()))
    return best


def gen_sparse(N: int, s: int, n: int, seed: int = 0) -> PointSet:
    """``n`` vectors with a uniformly random support of size ``s`` and N(0,1) entries."""
    if not 1 <= s <= N:
        raise DomainError(f"need 1 <= s <= N, got s={s}, N={N}")
    rng = make_rng(seed, "sparse")
    out = np.zeros((n, N))
    for k in range(n):
        support = rng.choice(N, size=s, replace=False)
        out[k, support] = rng.standard_normal(s)
    return PointSet(out, None, {"generator": "sparse", "N": N, "s": s, "n": n, "seed": seed})


# ---------------------------------------------------------------------------
# train / test split
# ---------------------------------------------------------------------------

class SplitStrategy(str, Enum):
    UNIFORM_RANDOM = "UNIFORM_RANDOM"
    DOWNSAMPLED_SEQUENCE = "DOWNSAMPLED_SEQUENCE"


@dataclass(frozen=True)
class SplitSpec:
    """Per-class split sizes.

    UNIFORM_RANDOM draws train then test uniformly without replacement.
    DOWNSAMPLED_SEQUENCE treats each class as an ordered sequence (e.g. a
    rotation sweep) and keeps every ``floor(L / train_per_class)``-th item
    for training; test items are drawn at random from the rest.
    """

    train_per_class: int
    test_per_class: int
    seed: int = 0
    strategy: SplitStrategy = SplitStrategy.UNIFORM_RANDOM

    def __post_init__(self):
        object.__setattr__(self, "strategy", SplitStrategy(self.strategy))
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise DomainError("split counts must be >= 1")


def split_indices(labels, spec: SplitSpec):
    """Global train and test indices (each sorted ascending)."""
    labels = np.asarray(labels)
    rng = make_rng(spec.seed, "split")
    train, test = [], []
    need = spec.train_per_class + spec.test_per_class
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        if len(members) < need:
            raise InsufficientData(int(label), len(members), need)
        if spec.strategy is SplitStrategy.UNIFORM_RANDOM:
            perm = rng.permutation(members)
            train.append(perm[:spec.train_per_class])
            test.append(perm[spec.train_per_class:need])
        else:
            stride = len(members) // spec.train_per_class
            pos = stride * np.arange(spec.train_per_class)
            train.append(members[pos])
            rest = np.setdiff1d(members, members[pos])
            test.append(rng.choice(rest, size=spec.test_per_class, replace=False))
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split(data: PointSet, spec: SplitSpec):
    """Disjoint per-class train/test subsets of a labelled point set."""
    if data.labels is None:
        raise DomainError("split needs labelled data")
    tr, te = split_indices(data.labels, spec)
    train, test = data.subset(tr), data.subset(te)
    train.meta["split"] = test.meta["split"] = {
        "train_per_class": spec.train_per_class, "test_per_class": spec.test_per_class,
        "seed": spec.seed, "strategy": spec.strategy.value}
    train.meta["indices"], test.meta["indices"] = tr, te
    return train, test


def two_circles_benchmark(seed: int = 1):
    """Fixed labelled two-circles benchmark: (train, test), 100 + 100 per class.

    Two unit circles in one random 2-plane of R^50 with centers 1.0 apart
    (so they intersect), tube noise delta = 0.05, 200 grid points per class.
    """
    data = gen_two_manifolds(50, 200, 1.0, 0.05, seed=seed, radius=1.0)
    return split(data, SplitSpec(100, 100, seed=seed))
