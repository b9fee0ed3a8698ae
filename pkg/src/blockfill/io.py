"""On-disk formats: Matrix Market arrays, CSV vectors and tables, JSON manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np
import scipy.io

from .datagen import GroundTruthInstance, compute_kappas
from .embeddings import EmbeddingPair

MARKER = ".blockfill"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, non-finite floats as strings."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _unjson(obj):
    if isinstance(obj, dict):
        return {k: _unjson(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unjson(v) for v in obj]
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    return obj


def read_json(path):
    with open(path) as fh:
        return _unjson(json.load(fh))


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def content_hash(obj) -> str:
    return hashlib.sha256(dumps(obj).encode()).hexdigest()[:16]


def write_matrix(path, M):
    scipy.io.mmwrite(str(path), np.asarray(M, dtype=float), precision=17)


def read_matrix(path) -> np.ndarray:
    M = scipy.io.mmread(str(path))
    return np.asarray(M.todense() if hasattr(M, "todense") else M, dtype=float)


def write_vectors(path, columns: dict):
    names = list(columns)
    rows = zip(*(np.asarray(columns[k], dtype=float) for k in names))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def read_vectors(path) -> dict:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        names = next(rd)
        data = [list(map(float, row)) for row in rd]
    arr = np.array(data, dtype=float).reshape(len(data), len(names))
    return {k: arr[:, i].copy() for i, k in enumerate(names)}


def write_table(path, rows, fields):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: _cell(row.get(k)) for k in fields})


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return v


class atomic_dir:
    """Write into a sibling temp dir, then swap it into place on success."""

    def __init__(self, target):
        self.target = Path(target)

    def __enter__(self):
        self.target.parent.mkdir(parents=True, exist_ok=True)
        if self.target.exists() and any(self.target.iterdir()) and not (self.target / MARKER).exists():
            raise FileExistsError(f"{self.target} exists and was not written by blockfill")
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.target.name}.", dir=self.target.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        (self.tmp / MARKER).write_text("")
        os.chmod(self.tmp, 0o755)
        if self.target.exists():
            shutil.rmtree(self.target)
        os.replace(self.tmp, self.target)
        return False


def instance_manifest(inst: GroundTruthInstance, kappas=None) -> dict:
    kap = kappas or compute_kappas(inst)
    body = {
        "dims": {"n": inst.n, "m": inst.m, "d": inst.d},
        "split": {"n1": inst.n1, "m1": inst.m1},
        "train_weights": dict(inst.train_weights),
        "test_weights": dict(inst.test_weights),
        "B": inst.B,
        "seed": inst.seed,
        "meta": inst.meta,
        "spectrum": inst.sigma_star().tolist(),
        "kappas": kap.as_dict(),
    }
    body["matrix_hash"] = hashlib.sha256(
        np.ascontiguousarray(inst.Fstar).tobytes() + np.ascontiguousarray(inst.Gstar).tobytes()
    ).hexdigest()[:16]
    body["manifest_hash"] = content_hash(body)
    return body


def save_instance(inst: GroundTruthInstance, out_dir, adversarial: EmbeddingPair | None = None):
    with atomic_dir(out_dir) as tmp:
        write_json(tmp / "manifest.json", instance_manifest(inst))
        write_matrix(tmp / "Fstar.mtx", inst.Fstar)
        write_matrix(tmp / "Gstar.mtx", inst.Gstar)
        write_vectors(tmp / "dx.csv", {"dx1": inst.dx1, "dx2": inst.dx2})
        write_vectors(tmp / "dy.csv", {"dy1": inst.dy1, "dy2": inst.dy2})
        if adversarial is not None:
            save_pair_files(tmp, adversarial, prefix="adversarial_")
    return Path(out_dir)


def load_instance(path) -> GroundTruthInstance:
    path = Path(path)
    man = read_json(path / "manifest.json")
    dx, dy = read_vectors(path / "dx.csv"), read_vectors(path / "dy.csv")
    return GroundTruthInstance(
        n=man["dims"]["n"], m=man["dims"]["m"], n1=man["split"]["n1"], m1=man["split"]["m1"],
        Fstar=read_matrix(path / "Fstar.mtx"), Gstar=read_matrix(path / "Gstar.mtx"),
        dx1=dx["dx1"], dx2=dx["dx2"], dy1=dy["dy1"], dy2=dy["dy2"],
        train_weights=man["train_weights"], test_weights=man["test_weights"],
        B=float(man["B"]), seed=man.get("seed"), meta=man.get("meta", {}))


def load_adversarial(path) -> EmbeddingPair | None:
    path = Path(path)
    if not (path / "adversarial_F.mtx").exists():
        return None
    return load_pair_files(path, prefix="adversarial_")


def save_pair_files(directory, pair: EmbeddingPair, prefix=""):
    Path(directory).mkdir(parents=True, exist_ok=True)
    write_matrix(Path(directory) / f"{prefix}F.mtx", pair.F)
    write_matrix(Path(directory) / f"{prefix}G.mtx", pair.G)


def load_pair_files(directory, prefix="") -> EmbeddingPair:
    return EmbeddingPair(read_matrix(Path(directory) / f"{prefix}F.mtx"),
                         read_matrix(Path(directory) / f"{prefix}G.mtx"))
