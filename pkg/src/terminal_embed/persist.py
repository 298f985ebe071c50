"""Model manifests and embedded-output CSV files."""
import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .datasets import read_csv, read_idx
from .errors import FormatError
from .jl import load_jl, save_jl
from .solver import SolverConfig, TerminalModel

MODEL_SCHEMA = "ter-model/1"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def save_model(model: TerminalModel, directory, train_paths, train_format="csv",
               has_labels=False) -> Path:
    """Write ``matrix.jlm`` (+ sidecar) and ``model.json`` into ``directory``.

    The training data is referenced, not copied: ``train_paths`` (one CSV
    path, or IDX images and labels) are recorded with their sha256.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if isinstance(train_paths, (str, Path)):
        train_paths = [train_paths]
    matrix = save_jl(model.A, directory / "matrix.jlm")
    manifest = {
        "schema": MODEL_SCHEMA,
        "matrix": matrix.name,
        "matrix_sha256": sha256_file(matrix),
        "train": [{"path": str(Path(p).resolve()), "sha256": sha256_file(p)} for p in train_paths],
        "train_format": train_format,
        "has_labels": bool(has_labels),
        "config": model.config.to_dict(),
    }
    out = directory / "model.json"
    out.write_text(json.dumps(manifest, indent=2) + "\n")
    return out


def load_model(manifest_path) -> TerminalModel:
    """Rebuild a model from ``model.json``; hashes must match."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read model manifest {manifest_path}: {exc}") from exc
    if doc.get("schema") != MODEL_SCHEMA:
        raise FormatError(f"unsupported model schema {doc.get('schema')!r}")
    matrix = manifest_path.parent / doc["matrix"]
    if sha256_file(matrix) != doc["matrix_sha256"]:
        raise FormatError(f"{matrix}: hash does not match manifest")
    paths = []
    for entry in doc["train"]:
        if sha256_file(entry["path"]) != entry["sha256"]:
            raise FormatError(f"{entry['path']}: hash does not match manifest")
        paths.append(entry["path"])
    if doc["train_format"] == "idx":
        X = read_idx(*paths)
    else:
        X = read_csv(paths[0], doc["has_labels"])
    return TerminalModel(X, load_jl(matrix), SolverConfig(**doc["config"]))


def embedded_header(m: int) -> list:
    return ["query_id", "anchor_index", "eps_used", "feas_residual"] + [f"coord_{k}" for k in range(m + 1)]


def write_embedded_csv(results, path) -> Path:
    """One row per query: ids, solver diagnostics and the m+1 coordinates.

    Floats are written with 17 significant digits so they round-trip exactly.
    """
    path = Path(path)
    m = len(results[0].embedded) - 1 if results else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(embedded_header(m))
        for k, r in enumerate(results):
            w.writerow([k, r.anchor_index, format(r.eps_used, ".17g"),
                        format(r.feas_residual, ".17g")]
                       + [format(c, ".17g") for c in r.embedded])
    return path


def read_embedded_csv(path):
    """Inverse of :func:`write_embedded_csv`: (anchor_index, eps_used, feas_residual, coords)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:4] != ["query_id", "anchor_index", "eps_used", "feas_residual"]:
        raise FormatError(f"{path}: not an embedded-output file")
    body = np.array([[float(c) for c in row] for row in rows[1:]]).reshape(len(rows) - 1, -1)
    return body[:, 1].astype(np.int64), body[:, 2], body[:, 3], body[:, 4:]
