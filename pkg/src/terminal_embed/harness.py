"""Compressive nearest-neighbour classification experiments.

A run embeds a training set and a test set with one embedding variant,
classifies every test point by its nearest embedded training point, and
measures distortion and nonlinearity of the embedding.

Variants
--------
IDENTITY       f(y) = y (no compression, independent of m)
LINEAR         f(y) = (phi y, 0) for every y, the plain JL map
LINEAR_BYPASS  terminal extension with y' = ball projection of phi (y - a)
INNER_PROD     terminal extension, linear objective
QUADRATIC      terminal extension, quadratic objective

LINEAR is not part of the default sweep; MaxDist/MinDist of the linear map
are reported alongside every other variant anyway.
"""
import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import DimensionError, TerminalEmbedError
from .geometry import PointSet
from .jl import JLMatrix, apply_scaled, jl_distortion_stats, sample_jl
from .seeding import derive_seed, generator_record
from .solver import (Objective, PiConvention, SolverConfig, TerminalModel,
                     embed_batch)

SCHEMA = "ter-report/1"
SWEEP_COLUMNS = ["variant", "m", "accuracy_pct", "max_dist", "min_dist",
                 "mean_nonlinearity_pct", "mean_solve_ms"]
VARIANTS = ("IDENTITY", "LINEAR", "LINEAR_BYPASS", "INNER_PROD", "QUADRATIC")
DEFAULT_VARIANTS = ("IDENTITY", "LINEAR_BYPASS", "INNER_PROD", "QUADRATIC")


@dataclass
class ExperimentReport:
    """Outcome of one (variant, m, trial) run.

    ``max_dist``/``min_dist`` are the extremes of the embedded-to-original
    distance ratio over pairs (x, y) with x in the training set and y in
    train or test, y != x.  ``linear_*`` are the same extremes for the
    component linear map y -> (phi y, 0); ``jl_train_*`` restrict the JL
    matrix to training pairs.
    """

    variant: str
    m: Optional[int]
    trial: int
    accuracy_pct: float
    max_dist: float
    min_dist: float
    mean_nonlinearity_pct: float
    mean_solve_ms: float
    per_query: list = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    linear_max_dist: float = float("nan")
    linear_min_dist: float = float("nan")
    jl_train_max: float = float("nan")
    jl_train_min: float = float("nan")
    train_max_dist: float = float("nan")
    train_min_dist: float = float("nan")
    skipped_pairs: int = 0
    nonlinearity_skipped: int = 0
    infeasible_queries: int = 0
    relaxed_queries: int = 0
    error: Optional[str] = None
    schema: str = SCHEMA

    def to_dict(self) -> dict:
        return _clean(asdict(self))


def _clean(obj):
    # JSON has no NaN/inf; emit null instead
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def nn_classify(train_embedded, train_labels, test_embedded, test_labels):
    """1-NN classification in the embedded space.

    Ties go to the lowest training index.  Rows containing NaN (failed
    embeddings) never win and, as queries, are predicted as -1.

    Returns
    -------
    accuracy_pct : float
    per_query : list of dict
        ``query_id, predicted_label, true_label, nn_train_index``.
    """
    F = np.atleast_2d(np.asarray(train_embedded, dtype=np.float64))
    G = np.atleast_2d(np.asarray(test_embedded, dtype=np.float64))
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)
    if len(F) == 0:
        raise DimensionError("empty training set")
    if F.shape[1] != G.shape[1]:
        raise DimensionError(f"train embedded in {F.shape[1]} dims, test in {G.shape[1]}")
    if len(train_labels) != len(F) or len(test_labels) != len(G):
        raise DimensionError("label count does not match point count")
    nn = np.empty(len(G), dtype=np.int64)
    for start in range(0, len(G), 512):
        d = cdist(G[start:start + 512], F, "sqeuclidean")
        d[np.isnan(d)] = np.inf
        nn[start:start + 512] = np.argmin(d, axis=1)
    bad = np.isnan(G).any(axis=1)
    pred = train_labels[nn].copy()
    pred[bad] = -1
    nn[bad] = -1
    correct = int((pred == test_labels).sum())
    per_query = [{"query_id": k, "predicted_label": int(pred[k]),
                  "true_label": int(test_labels[k]), "nn_train_index": int(nn[k])}
                 for k in range(len(G))]
    return 100.0 * correct / len(G), per_query


@dataclass(frozen=True)
class PairExtremes:
    max_dist: float
    min_dist: float
    pair_count: int
    skipped_pairs: int


def distortion_extremes(f_train, x_train, f_test=None, x_test=None) -> PairExtremes:
    """Extremes of ``||f(y) - f(x)|| / ||y - x||`` for x in X, y in S u X \\ {x}.

    ``f_*`` are embedded rows matching the original rows ``x_*``.  Pairs with
    ``||y - x|| = 0`` are skipped and counted.
    """
    f_train = np.asarray(f_train, dtype=np.float64)
    x_train = np.asarray(x_train, dtype=np.float64)
    emb = [pdist(f_train)] if len(f_train) > 1 else []
    orig = [pdist(x_train)] if len(x_train) > 1 else []
    if f_test is not None and len(f_test):
        f_test = np.asarray(f_test, dtype=np.float64)
        x_test = np.asarray(x_test, dtype=np.float64)
        for start in range(0, len(f_test), 512):
            sl = slice(start, start + 512)
            emb.append(cdist(f_test[sl], f_train).ravel())
            orig.append(cdist(x_test[sl], x_train).ravel())
    if not emb:
        raise DimensionError("need at least one pair")
    emb, orig = np.concatenate(emb), np.concatenate(orig)
    ok = orig > 0
    ratio = emb[ok] / orig[ok]
    ratio = ratio[np.isfinite(ratio)]
    if len(ratio) == 0:
        return PairExtremes(float("nan"), float("nan"), 0, int((~ok).sum()))
    return PairExtremes(float(ratio.max()), float(ratio.min()), int(len(ratio)),
                        int((~ok).sum()))


def linear_images(A: JLMatrix, Q, pi_convention=PiConvention.SCALED) -> np.ndarray:
    """Rows ``(M y, 0)`` with M = phi (SCALED) or pi (UNSCALED)."""
    pts = Q.points if isinstance(Q, PointSet) else np.atleast_2d(np.asarray(Q, dtype=np.float64))
    img = apply_scaled(A, pts) if PiConvention(pi_convention) is PiConvention.SCALED else pts @ A.pi.T
    return np.hstack([img, np.zeros((len(pts), 1))])


def nonlinearity_pct(embedded, A: JLMatrix, Q, pi_convention=PiConvention.SCALED) -> np.ndarray:
    """Per-query ``100 ||f(y) - (phi y, 0)|| / ||(phi y, 0)||``; NaN where phi y = 0."""
    ref = linear_images(A, Q, pi_convention)
    E = np.atleast_2d(np.asarray(embedded, dtype=np.float64))
    den = np.linalg.norm(ref, axis=1)
    num = np.linalg.norm(E - ref, axis=1)
    out = np.full(len(ref), np.nan)
    ok = den > 0
    out[ok] = 100.0 * num[ok] / den[ok]
    return out


def mean_nonlinearity(results, A: JLMatrix, Q, pi_convention=PiConvention.SCALED) -> float:
    """Mean nonlinearity (percent) over the queries with ``phi y != 0``.

    ``results`` is a list of ExtensionResults (or an array of embedded rows)
    in the order of the rows of ``Q``.
    """
    E = np.array([r.embedded for r in results]) if len(results) and hasattr(results[0], "embedded") \
        else np.asarray(results)
    vals = nonlinearity_pct(E, A, Q, pi_convention)
    vals = vals[np.isfinite(vals)]
    return float(vals.mean()) if len(vals) else float("nan")


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def jl_seed(seed: int, m: int, trial: int) -> int:
    """Seed of the JL matrix shared by every variant at (m, trial)."""
    return derive_seed(seed, f"jl/m={m}/trial={trial}")


def _embed_variant(variant, train, test, A, config, threads):
    """Embedded train rows, test rows, per-query solve ms and ExtensionResults."""
    if variant == "IDENTITY":
        return train.points, test.points, np.zeros(len(test)), None
    if variant == "LINEAR":
        t0 = time.perf_counter()
        F, G = linear_images(A, train, config.pi_convention), linear_images(A, test, config.pi_convention)
        ms = 1e3 * (time.perf_counter() - t0) / max(len(test), 1)
        return F, G, np.full(len(test), ms), None
    cfg = SolverConfig(**{**config.to_dict(), "objective": Objective(variant)})
    model = TerminalModel(train, A, cfg)
    F = np.hstack([model.anchor_images, np.zeros((len(train), 1))])
    results = embed_batch(model, test, threads=threads)
    G = np.array([r.embedded for r in results]).reshape(len(test), model.m + 1)
    return F, G, np.array([r.elapsed_ms for r in results]), results


def run_single(train: PointSet, test: PointSet, variant: str, A: Optional[JLMatrix],
               config: SolverConfig = SolverConfig(), threads: int = 1,
               trial: int = 0, seeds: Optional[dict] = None) -> ExperimentReport:
    """One report for one variant and one matrix (``A`` unused for IDENTITY)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    m = None if variant == "IDENTITY" else A.m
    F, G, ms, results = _embed_variant(variant, train, test, A, config, threads)
    acc, per_query = nn_classify(F, train.labels, G, test.labels)
    for k, q in enumerate(per_query):
        q["solve_ms"] = float(ms[k])
        q["relaxations"] = int(results[k].relaxations) if results else 0
        if results and results[k].failed:
            q["failed"] = True
    ext = distortion_extremes(F, train.points, G, test.points)
    tr = distortion_extremes(F, train.points)
    rep = ExperimentReport(
        variant=variant, m=m, trial=trial, accuracy_pct=acc,
        max_dist=ext.max_dist, min_dist=ext.min_dist,
        mean_nonlinearity_pct=float("nan"), mean_solve_ms=float(ms.mean()) if len(ms) else 0.0,
        per_query=per_query, config_echo=config.to_dict(), seeds=dict(seeds or {}),
        train_max_dist=tr.max_dist, train_min_dist=tr.min_dist,
        skipped_pairs=ext.skipped_pairs)
    if variant != "IDENTITY":
        nl = nonlinearity_pct(G, A, test, config.pi_convention)
        finite = nl[np.isfinite(nl)]
        rep.mean_nonlinearity_pct = float(finite.mean()) if len(finite) else float("nan")
        rep.nonlinearity_skipped = int(np.isnan(nl).sum())
        lin = distortion_extremes(linear_images(A, train, config.pi_convention), train.points,
                                  linear_images(A, test, config.pi_convention), test.points)
        rep.linear_max_dist, rep.linear_min_dist = lin.max_dist, lin.min_dist
        jl = jl_distortion_stats(A, train)
        rep.jl_train_max, rep.jl_train_min = jl.max_ratio, jl.min_ratio
    if results:
        rep.infeasible_queries = sum(r.failed for r in results)
        rep.relaxed_queries = sum(r.relaxations > 0 for r in results)
    return rep


def _failed_report(variant, m, trial, config, seeds, exc) -> ExperimentReport:
    nan = float("nan")
    return ExperimentReport(variant, m, trial, nan, nan, nan, nan, nan,
                            config_echo=config.to_dict(), seeds=seeds,
                            error=f"{type(exc).__name__}: {exc}")


def run_experiment(train: PointSet, test: PointSet, m_values, variants=DEFAULT_VARIANTS,
                   config: SolverConfig = SolverConfig(), seed: int = 0, trials: int = 1,
                   threads: int = 1) -> list:
    """Sweep variants x m x trials; one :class:`ExperimentReport` each.

    Every variant at a given (m, trial) shares one JL matrix, drawn from
    ``jl_seed(seed, m, trial)``.  IDENTITY is computed once and its report
    repeated for each m (with that m recorded).  A run that raises is
    reported with ``error`` set and NaN metrics; the sweep continues.
    """
    if train.labels is None or test.labels is None:
        raise ValueError("train and test sets must be labelled")
    if train.dim != test.dim:
        raise DimensionError("train and test dimensions differ")
    variants = list(variants)
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}; choose from {VARIANTS}")
    reports = []
    identity = None
    for trial in range(trials):
        for m in m_values:
            s = jl_seed(seed, m, trial)
            seeds = {"seed": seed, "jl_seed": s, **generator_record()}
            A = None
            try:
                A = sample_jl(m, train.dim, s)
            except TerminalEmbedError as exc:
                reports.extend(_failed_report(v, m, trial, config, seeds, exc) for v in variants)
                continue
            for v in variants:
                try:
                    if v == "IDENTITY":
                        if identity is None:
                            identity = run_single(train, test, v, None, config, threads,
                                                  seeds={"seed": seed})
                        rep = ExperimentReport(**{**asdict(identity), "m": m, "trial": trial})
                    else:
                        rep = run_single(train, test, v, A, config, threads, trial, seeds)
                except (TerminalEmbedError, ArithmeticError, ValueError) as exc:
                    rep = _failed_report(v, m, trial, config, seeds, exc)
                reports.append(rep)
    return reports


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def summarize(reports) -> list:
    """Rows of ``sweep.csv``: per (variant, m) means over trials, in first-seen order."""
    groups = {}
    for r in reports:
        groups.setdefault((r.variant, r.m), []).append(r)
    rows = []
    for (variant, m), reps in groups.items():
        row = {"variant": variant, "m": m}
        for col in SWEEP_COLUMNS[2:]:
            vals = np.array([getattr(r, col) for r in reps], dtype=np.float64)
            vals = vals[np.isfinite(vals)]
            row[col] = float(vals.mean()) if len(vals) else float("nan")
        rows.append(row)
    return rows


def write_sweep_csv(reports, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in summarize(reports):
            w.writerow(["" if row[c] is None else
                        (format(row[c], ".10g") if isinstance(row[c], float) else row[c])
                        for c in SWEEP_COLUMNS])
    return path


def write_reports_json(reports, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps({"schema": SCHEMA, "reports": [r.to_dict() for r in reports]},
                               indent=1) + "\n")
    return path


def load_reports_json(path) -> list:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != SCHEMA:
        raise ValueError(f"unsupported report schema {doc.get('schema')!r}")
    out = []
    for d in doc["reports"]:
        d = {k: (float("nan") if v is None and k not in ("m", "error") else v) for k, v in d.items()}
        out.append(ExperimentReport(**d))
    return out
