"""Learned QPSK policy: oracle-labelled data, per-antenna GBDT, refinement.

Feature layout for an N-element array (length N^2 + 5N):

1. strictly-lower-triangular entries of R (i > j, row-major), real then
   imaginary part of each entry: N(N-1) values
2. the diagonal of R: N values
3. eigenvalues of R, descending: N values
4. per element of a_g: real, imaginary, magnitude, phase in (-pi, pi]:
   4N values

Labels are canonical oracle solutions (symbols[0] == 0); without this the
four globally rotated optima would make the targets ambiguous.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import __version__
from .array_model import (ArrayGeometry, ScenarioDistribution, derive_seed, random_scenario,
                          sample_covariance, steering_vector, synthesize_snapshots)
from .beamformers import (ObjectiveParams, QpskWeights, coordinate_descent, oracle_search,
                          MAX_ORACLE_N, OracleTooLargeError)
from .gbdt import N_CLASSES, DenseForest, Tree, fit_softmax_boosting, presort
from .linalg import HermitianMatrix, as_vector, hermitian_eigenvalues

log = logging.getLogger(__name__)

MODEL_FORMAT = "qpskbf-gbdt"
MODEL_VERSION = 1
DEFAULT_REFINE_SWEEPS = 3
DEFAULT_DATASET_SIZE = 20000


class ModelFormatError(ValueError):
    pass


def feature_length(n: int) -> int:
    return n * n + 5 * n


def extract_features(r: HermitianMatrix, a_g) -> np.ndarray:
    a = as_vector(a_g)
    n = r.order
    if a.shape[0] != n:
        raise ValueError(f"covariance order {n} does not match steering length {a.shape[0]}")
    m = r.array
    rows, cols = np.tril_indices(n, -1)
    low = m[rows, cols]
    tri = np.column_stack([low.real, low.imag]).ravel()
    phase = np.angle(a)
    phase[phase <= -np.pi] = np.pi
    per_elem = np.column_stack([a.real, a.imag, np.abs(a), phase]).ravel()
    return np.concatenate([tri, m.diagonal().real, hermitian_eigenvalues(r), per_elem])


@dataclass
class TrainingDataset:
    n_antennas: int
    features: np.ndarray          # (M, N^2 + 5N)
    labels: np.ndarray            # (M, N), canonical symbols
    scenario_ids: np.ndarray      # (M,)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64).reshape(-1, feature_length(self.n_antennas))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1, self.n_antennas)
        self.scenario_ids = np.asarray(self.scenario_ids, dtype=np.int64).reshape(-1)
        if not (len(self.features) == len(self.labels) == len(self.scenario_ids)):
            raise ValueError("features, labels and scenario ids differ in length")
        if np.any((self.labels < 0) | (self.labels > 3)):
            raise ValueError("labels must lie in {0,1,2,3}")
        if len(self.labels) and np.any(self.labels[:, 0] != 0):
            raise ValueError("labels must be canonical (first symbol 0)")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite features")

    def __len__(self):
        return len(self.labels)

    def subset(self, rows) -> TrainingDataset:
        return TrainingDataset(self.n_antennas, self.features[rows], self.labels[rows],
                               self.scenario_ids[rows], dict(self.provenance))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()

    def save_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"header": {"n_antennas": self.n_antennas, "version": __version__,
                                            **self.provenance}}, sort_keys=True) + "\n")
            for f, lab, sid in zip(self.features, self.labels, self.scenario_ids):
                fh.write(json.dumps({"features": f.tolist(), "labels": lab.tolist(),
                                     "scenario_id": int(sid)}) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> TrainingDataset:
        feats, labs, ids, header = [], [], [], {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: malformed JSON ({exc})") from None
                if "header" in row:
                    header = row["header"]
                    continue
                feats.append(row["features"])
                labs.append(row["labels"])
                ids.append(row["scenario_id"])
        if not labs:
            raise ValueError(f"{path}: dataset has no rows")
        n = header.get("n_antennas", len(labs[0]))
        if any(len(lab) != n for lab in labs) or any(len(f) != feature_length(n) for f in feats):
            raise ValueError(f"{path}: rows inconsistent with N={n}")
        prov = {k: v for k, v in header.items() if k not in ("n_antennas",)}
        return cls(n, np.array(feats), np.array(labs), np.array(ids), prov)


def _dataset_row(args):
    geom, dist, p, seed, idx = args
    sc = random_scenario(dist, derive_seed(seed, idx))
    r = sample_covariance(synthesize_snapshots(geom, sc))
    a_g = steering_vector(geom, sc.sat_dir)
    return extract_features(r, a_g), oracle_search(r, a_g, p).array


def generate_dataset(dist: ScenarioDistribution, count: int, geom: ArrayGeometry,
                     p: ObjectiveParams, seed: int, workers: int = 1) -> TrainingDataset:
    """Oracle-labelled rows for ``count`` random scenarios.

    Scenario i uses seed ``derive_seed(seed, i)``, so the result does not
    depend on ``workers``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    n = geom.n_elements
    if n > MAX_ORACLE_N:
        raise OracleTooLargeError(
            f"oracle refused for N={n}: 4^(N-1) = {4 ** (n - 1)} candidates per row")
    jobs = [(geom, dist, p, seed, i) for i in range(count)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_dataset_row, jobs, chunksize=max(1, count // (8 * workers))))
    else:
        rows = [_dataset_row(j) for j in jobs]
    prov = {"seed": int(seed), "count": int(count), "alpha": p.alpha,
            "distribution": dist.to_dict()}
    return TrainingDataset(n, np.array([r[0] for r in rows]), np.array([r[1] for r in rows]),
                           np.arange(count), prov)


@dataclass(frozen=True)
class TrainingConfig:
    rounds: int = 150
    max_depth: int = 5
    learning_rate: float = 0.1
    min_leaf: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1 or self.max_depth < 1 or self.min_leaf < 1:
            raise ValueError("rounds, max_depth and min_leaf must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")


@dataclass
class GbdtModel:
    n_antennas: int
    feature_length: int
    learning_rate: float
    max_depth: int
    # classifiers[antenna][round][class]
    classifiers: list[list[list[Tree]]]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.classifiers) != self.n_antennas:
            raise ModelFormatError(f"{len(self.classifiers)} classifiers for {self.n_antennas} antennas")
        rounds = {len(c) for c in self.classifiers}
        if len(rounds) != 1:
            raise ModelFormatError("classifiers have different round counts")
        for clf in self.classifiers:
            for rnd in clf:
                if len(rnd) != N_CLASSES:
                    raise ModelFormatError("each round needs one tree per class")
                for t in rnd:
                    if t.depth() > self.max_depth:
                        raise ModelFormatError("tree deeper than max_depth")
                    if np.any(t.feature >= self.feature_length):
                        raise ModelFormatError("tree uses a feature index out of range")

    @property
    def rounds(self) -> int:
        return len(self.classifiers[0])

    @cached_property
    def _forest(self) -> DenseForest:
        trees = [t for clf in self.classifiers for rnd in clf for t in rnd]
        return DenseForest(trees, self.max_depth)

    @property
    def comparisons_per_inference(self) -> int:
        return self._forest.leaf.shape[0] * self.max_depth

    def class_scores(self, features) -> np.ndarray:
        """(N, 4) accumulated scores per antenna and class."""
        x = np.asarray(features, dtype=np.float64)
        if x.shape != (self.feature_length,):
            raise ValueError(f"expected {self.feature_length} features, got {x.shape}")
        leaf = self._forest.leaf_values(x)
        return leaf.reshape(self.n_antennas, self.rounds, N_CLASSES).sum(axis=1)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "n_antennas": self.n_antennas,
            "feature_length": self.feature_length,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "metadata": self.metadata,
            "classifiers": [[[t.to_dict() for t in rnd] for rnd in clf] for clf in self.classifiers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> GbdtModel:
        if d.get("format") != MODEL_FORMAT:
            raise ModelFormatError(f"not a {MODEL_FORMAT} model file")
        if d.get("version") != MODEL_VERSION:
            raise ModelFormatError(f"unsupported model version {d.get('version')!r}")
        n = int(d["n_antennas"])
        if int(d["feature_length"]) != feature_length(n):
            raise ModelFormatError(f"feature_length {d['feature_length']} inconsistent with N={n}")
        try:
            clfs = [[[Tree.from_dict(t) for t in rnd] for rnd in clf] for clf in d["classifiers"]]
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"malformed tree data: {exc}") from None
        return cls(n, int(d["feature_length"]), float(d["learning_rate"]), int(d["max_depth"]),
                   clfs, d.get("metadata", {}))


def _fit_antenna(args):
    x, presorted, y, cfg = args
    return fit_softmax_boosting(x, y, cfg.rounds, cfg.max_depth, cfg.learning_rate,
                                cfg.min_leaf, presorted)


def train_gbdt(ds: TrainingDataset, cfg: TrainingConfig = TrainingConfig(),
               threads: int = 1) -> GbdtModel:
    """One four-class softmax-boosted classifier per antenna."""
    if len(ds) == 0:
        raise ValueError("cannot train on an empty dataset")
    x = np.ascontiguousarray(ds.features)
    ps = presort(x)
    jobs = [(x, ps, ds.labels[:, a], cfg) for a in range(ds.n_antennas)]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(threads) as ex:
            clfs = list(ex.map(_fit_antenna, jobs))
    else:
        clfs = [_fit_antenna(j) for j in jobs]
    warnings = []
    if len(ds) < 2:
        warnings.append("degenerate dataset: fewer than 2 rows")
    meta = {
        "tool_version": __version__,
        "seed": cfg.seed,
        "rounds": cfg.rounds,
        "max_depth": cfg.max_depth,
        "learning_rate": cfg.learning_rate,
        "min_leaf": cfg.min_leaf,
        "hessian_reg": 1.0,
        "n_rows": len(ds),
        "dataset_fingerprint": ds.fingerprint(),
        "warnings": warnings,
    }
    return GbdtModel(ds.n_antennas, feature_length(ds.n_antennas), cfg.learning_rate,
                     cfg.max_depth, clfs, meta)


def predict_weights(m: GbdtModel, features) -> QpskWeights:
    """Per-antenna argmax of class scores; ties go to the lowest class."""
    scores = m.class_scores(features)
    return QpskWeights(tuple(np.argmax(scores, axis=1)))


def predict_batch(m: GbdtModel, features: np.ndarray) -> np.ndarray:
    return np.array([predict_weights(m, f).symbols for f in np.asarray(features)])


def gbdt_refine(m: GbdtModel, r: HermitianMatrix, a_g, p: ObjectiveParams,
                max_sweeps: int = DEFAULT_REFINE_SWEEPS) -> QpskWeights:
    return gbdt_predict_refine(m, r, a_g, p, max_sweeps)[1]


def gbdt_predict_refine(m: GbdtModel, r: HermitianMatrix, a_g, p: ObjectiveParams,
                        max_sweeps: int = DEFAULT_REFINE_SWEEPS) -> tuple[QpskWeights, QpskWeights]:
    """Raw GBDT prediction and its coordinate-descent refinement."""
    if r.order != m.n_antennas:
        raise ValueError(f"model is for N={m.n_antennas}, covariance has order {r.order}")
    raw = predict_weights(m, extract_features(r, a_g))
    return raw, coordinate_descent(raw, r, a_g, p, max_sweeps)


def heldout_accuracy(m: GbdtModel, ds: TrainingDataset) -> np.ndarray:
    pred = predict_batch(m, ds.features)
    return (pred == ds.labels).mean(axis=0)


def save_model(m: GbdtModel, path) -> None:
    Path(path).write_text(json.dumps(m.to_dict(), sort_keys=True, separators=(",", ":")))


def load_model(path, n_antennas: int | None = None) -> GbdtModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: cannot parse model file ({exc})") from None
    if not isinstance(d, dict):
        raise ModelFormatError(f"{path}: model file is not a JSON object")
    m = GbdtModel.from_dict(d)
    if n_antennas is not None and m.n_antennas != n_antennas:
        raise ModelFormatError(f"{path}: model is for N={m.n_antennas}, expected N={n_antennas}")
    return m
