"""End-to-end orchestration: sequences -> embedded maps -> thermomics -> CV report."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import classify, embedding, factorize, jse, seqio, thermomics

logger = logging.getLogger(__name__)

STAGES = ("ingest", "factorize", "jse", "embed", "features", "spectral", "classify")

DEFAULT_COMPARISON_METHODS = (
    "CCIPCT", "PCT", "NMF", "SparseNMF", "SemiNMF", "SparsePCT", "DeepSemiNMF",
)
COMPARISON_COLUMNS = (
    "method", "embedding", "accuracy_median", "accuracy_q25", "accuracy_q75",
    "kappa", "kappa_q25", "kappa_q75", "auc", "fold_hash", "cohort_hash", "seconds",
)


class ConfigError(ValueError):
    """Invalid pipeline configuration (CLI exit code 2)."""


class StageError(RuntimeError):
    """A pipeline stage failed (CLI exit code 3)."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


# --------------------------------------------------------------------------
# configuration


@dataclass
class InputConfig:
    path: str | None = None
    n_healthy: int = 30
    n_abnormal: int = 30
    phantom: dict = field(default_factory=lambda: {
        "M": 32, "N": 32, "tau": 23, "hotspot_count": 2, "hotspot_amplitude": 2.0,
        "hotspot_sigma": 2.5, "flicker_amplitude": 0.5, "noise_sigma": 0.05,
    })


@dataclass
class FactorizationConfig:
    method: str = "PCT"
    p: int = 5
    max_iters: int = 500
    tol: float = 1e-6
    l1_penalty: float = 0.1
    layer_dims: list | None = None
    amnesic: float = 2.0


@dataclass
class FeatureConfig:
    levels: int = 32
    spectral_d: int = 7
    spectral_k: int = 10


@dataclass
class ClassifierConfig:
    name: str = "RandomForest"
    folds: int = 5
    repeats: int = 3
    inner_folds: int = 3
    param_grid: dict | None = None


@dataclass
class PipelineConfig:
    input: InputConfig = field(default_factory=InputConfig)
    factorization: FactorizationConfig = field(default_factory=FactorizationConfig)
    apply_jse: bool = True
    embedding: dict = field(default_factory=lambda: asdict(embedding.EmbeddingParams()))
    features: FeatureConfig = field(default_factory=FeatureConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    output_dir: str = "thermolr-out"
    master_seed: int = 7
    jobs: int = 1

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in data:
                continue
            value = data.pop(f.name)
            sub = {"input": InputConfig, "factorization": FactorizationConfig,
                   "features": FeatureConfig, "classifier": ClassifierConfig}.get(f.name)
            if sub is not None:
                if not isinstance(value, dict):
                    raise ConfigError(f"'{f.name}' must be an object")
                unknown = set(value) - {g.name for g in dataclasses.fields(sub)}
                if unknown:
                    raise ConfigError(f"unknown keys in '{f.name}': {sorted(unknown)}")
                if f.name == "input" and "phantom" in value:
                    value = dict(value, phantom={**InputConfig().phantom, **value["phantom"]})
                value = sub(**value)
            elif f.name == "embedding":
                value = {**asdict(embedding.EmbeddingParams()), **value}
            kwargs[f.name] = value
        if data:
            raise ConfigError(f"unknown configuration keys: {sorted(data)}")
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_dict(self):
        return asdict(self)

    def factorize_config(self, seed=0):
        fc = self.factorization
        try:
            return factorize.FactorizeConfig(
                p=fc.p, max_iters=fc.max_iters, tol=fc.tol, l1_penalty=fc.l1_penalty,
                layer_dims=tuple(fc.layer_dims) if fc.layer_dims else None,
                amnesic=fc.amnesic, seed=seed,
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"factorization config: {exc}") from None

    def embedding_params(self):
        try:
            return embedding.EmbeddingParams(**self.embedding)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"embedding config: {exc}") from None

    def phantom_template(self):
        try:
            return seqio.PhantomSpec(label="abnormal", **self.input.phantom)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"phantom config: {exc}") from None

    def validate(self):
        self.factorize_config()
        if self.factorization.method not in factorize.METHODS:
            raise ConfigError(f"factorization method must be one of {factorize.METHODS}")
        params = self.embedding_params()
        if params.p > self.factorization.p:
            raise ConfigError(f"embedding p={params.p} exceeds factorization rank {self.factorization.p}")
        if self.input.path is None:
            self.phantom_template()
            if self.input.n_healthy < 1 or self.input.n_abnormal < 1:
                raise ConfigError("phantom cohort needs at least one sample per class")
        elif not Path(self.input.path).exists():
            raise ConfigError(f"input path {self.input.path} does not exist")
        if self.classifier.name not in classify.CLASSIFIERS:
            raise ConfigError(f"classifier must be one of {classify.CLASSIFIERS}")
        if self.classifier.folds < 2 or self.classifier.repeats < 1:
            raise ConfigError("classifier folds must be >= 2 and repeats >= 1")
        if self.features.levels < 2:
            raise ConfigError("features.levels must be >= 2")
        return self


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data, overrides):
    """Apply ``key.sub=value`` overrides to a nested config dict (values parsed as JSON)."""
    data = json.loads(json.dumps(data or {}))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {key}: {part} is not an object")
        node[parts[-1]] = _parse_value(value)
    return data


def load_config(path=None, overrides=(), **top_level):
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    data = apply_overrides(data, overrides)
    for k, v in top_level.items():
        if v is not None:
            data[k] = v
    try:
        return PipelineConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# cohort ingestion


@dataclass
class Cohort:
    sequences: list
    labels: np.ndarray
    ids: list
    heat: list = field(default_factory=list)

    def digest(self):
        h = hashlib.sha256()
        for hm in self.heat:
            h.update(np.ascontiguousarray(hm.data).tobytes())
        h.update(np.asarray(self.labels, dtype=np.int64).tobytes())
        return h.hexdigest()


def write_cohort(directory, sequences, labels, ids=None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    ids = ids or [f"sample_{i:04d}" for i in range(len(sequences))]
    with open(d / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "file", "label"])
        for sid, seq, lab in zip(ids, sequences, labels):
            seqio.write_sequence(d / f"{sid}.thsq", seq)
            w.writerow([sid, f"{sid}.thsq", int(lab)])
    return d


def read_cohort(directory):
    d = Path(directory)
    labels_file = d / "labels.csv"
    if not labels_file.exists():
        raise ValueError(f"{d} has no labels.csv")
    seqs, labels, ids = [], [], []
    with open(labels_file, newline="") as fh:
        for row in csv.DictReader(fh):
            seqs.append(seqio.load_sequence(d / row["file"]))
            labels.append(int(row["label"]))
            ids.append(row["id"])
    return seqs, np.array(labels), ids


def ingest(cfg: PipelineConfig) -> Cohort:
    if cfg.input.path is None:
        seqs, labels = seqio.phantom_cohort(
            cfg.input.n_healthy, cfg.input.n_abnormal, cfg.phantom_template(), cfg.master_seed
        )
        ids = [f"sample_{i:04d}" for i in range(len(seqs))]
    else:
        seqs, labels, ids = read_cohort(cfg.input.path)
    normalized = [seqio.normalize_by_reference(s) for s in seqs]
    heat = [seqio.build_heat_matrix(s) for s in normalized]
    return Cohort(normalized, labels, ids, heat)


# --------------------------------------------------------------------------
# per-sequence processing


def sample_seeds(master_seed, n):
    return [int(s) for s in np.random.SeedSequence([master_seed, 2]).generate_state(n, dtype=np.uint64)]


def basis_for(heat, method, fcfg, apply_jse):
    res = factorize.factorize(heat, method, fcfg)
    B = res.B
    info = None
    if apply_jse:
        B, jres = jse.jse_correct_basis(heat, B)
        info = {"c_jse": jres.c_jse, "clamped": jres.clamped, "s2": jres.s2, "nu2": jres.nu2}
    return res, B, info


class ThermomicsExtractor(TransformerMixin, BaseEstimator):
    """Map a list of :class:`ThermalSequence` to their 32 thermomic features.

    Each sequence is normalized, factorized, optionally JSE-corrected,
    embedded inside its ROI, and summarized by the feature catalog. The
    transform is stateless; ``fit`` only records the feature names.
    """

    def __init__(self, method="PCT", n_components=5, apply_jse=True, embedding="Weibull",
                 weibull_k=2.0, weibull_lambda=1.0, bell_b=1.0, levels=32, max_iter=500,
                 tol=1e-6, l1_penalty=0.1, random_state=0):
        self.method = method
        self.n_components = n_components
        self.apply_jse = apply_jse
        self.embedding = embedding
        self.weibull_k = weibull_k
        self.weibull_lambda = weibull_lambda
        self.bell_b = bell_b
        self.levels = levels
        self.max_iter = max_iter
        self.tol = tol
        self.l1_penalty = l1_penalty
        self.random_state = random_state

    def fit(self, X, y=None):
        self.feature_names_out_ = np.array(thermomics.FEATURE_NAMES)
        return self

    def get_feature_names_out(self, input_features=None):
        return np.array(thermomics.FEATURE_NAMES)

    def transform(self, X):
        fcfg = factorize.FactorizeConfig(p=self.n_components, max_iters=self.max_iter, tol=self.tol,
                                        l1_penalty=self.l1_penalty, seed=self.random_state)
        params = embedding.EmbeddingParams(self.embedding, self.bell_b, self.weibull_k,
                                           self.weibull_lambda, self.n_components)
        rows = []
        for seq in X:
            seq = seqio.normalize_by_reference(seq)
            heat = seqio.build_heat_matrix(seq)
            _, B, _ = basis_for(heat, self.method, fcfg, self.apply_jse)
            img = embedding.embed(B, seq.require_roi(), params)
            rows.append(thermomics.extract_features(img, seq.roi_mask, self.levels).values)
        return np.vstack(rows)


# --------------------------------------------------------------------------
# run


@dataclass
class PipelineOutcome:
    report: classify.ClassificationReport
    manifest: dict
    output_dir: Path
    features: np.ndarray
    reduced: np.ndarray


class _Stages:
    """Tracks stage status for the manifest and wraps failures in StageError."""

    def __init__(self):
        self.records = {s: {"status": "pending"} for s in STAGES}

    def run(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            out = fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:
            self.records[name] = {"status": "failed", "error": str(exc)}
            raise StageError(name, exc) from exc
        self.records[name] = {"status": "ok", "seconds": round(time.perf_counter() - t0, 6)}
        return out

    def skip(self, name):
        self.records[name] = {"status": "skipped"}

    def listing(self):
        # a list keeps pipeline order when the manifest is dumped with sorted keys
        return [{"name": s, **self.records[s]} for s in STAGES]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(header)
        w.writerows(rows)


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _factorize_cohort(cohort, method, cfg, apply_jse):
    seeds = sample_seeds(cfg.master_seed, len(cohort.heat))
    bases, jse_info = [], []
    for hm, s in zip(cohort.heat, seeds):
        _, B, info = basis_for(hm, method, cfg.factorize_config(seed=s), apply_jse)
        bases.append(B)
        jse_info.append(info)
    return bases, jse_info


def _embed_cohort(cohort, bases, params):
    return [embedding.embed(B, seq.require_roi(), params) for B, seq in zip(bases, cohort.sequences)]


def _feature_matrix(cohort, images, levels, source):
    return np.vstack([
        thermomics.extract_features(img, seq.roi_mask, levels, source).values
        for img, seq in zip(images, cohort.sequences)
    ])


def _classify(reduced, cohort, cfg):
    ds = classify.Dataset(reduced, cohort.labels, cohort.ids)
    cc = cfg.classifier
    return classify.cross_validate(
        ds, cc.name, folds=cc.folds, repeats=cc.repeats, seed=cfg.master_seed,
        param_grid=cc.param_grid, inner_folds=cc.inner_folds,
        n_jobs=cfg.jobs if cfg.jobs and cfg.jobs > 1 else None,
    )


def _evaluate(cohort, bases, params, cfg, method, stages):
    images = stages.run("embed", _embed_cohort, cohort, bases, params)
    source = {"method": method, "embedding": params.kind}
    F = stages.run("features", _feature_matrix, cohort, images, cfg.features.levels, source)
    red = stages.run(
        "spectral", thermomics.spectral_embed_connected, F, cfg.features.spectral_d, cfg.features.spectral_k
    )
    report = stages.run("classify", _classify, red.matrix, cohort, cfg)
    return images, F, red, report


def run_pipeline(cfg: PipelineConfig, write=True) -> PipelineOutcome:
    """Run every stage for ``cfg`` and write artifacts to ``cfg.output_dir``.

    Stage failures raise :class:`StageError` after a manifest marking the
    partial run has been written.
    """
    cfg.validate()
    out = Path(cfg.output_dir)
    stages = _Stages()
    manifest = {"config": cfg.to_dict(), "stages": stages.listing(), "partial": True}
    try:
        cohort = stages.run("ingest", ingest, cfg)
        method = cfg.factorization.method
        bases, jse_info = stages.run("factorize", _factorize_cohort, cohort, method, cfg, False)
        if cfg.apply_jse:
            def correct():
                info = []
                for i, hm in enumerate(cohort.heat):
                    bases[i], r = jse.jse_correct_basis(hm, bases[i])
                    info.append({"c_jse": r.c_jse, "clamped": r.clamped})
                return info
            jse_info = stages.run("jse", correct)
        else:
            stages.skip("jse")
        params = cfg.embedding_params()
        images, F, red, report = _evaluate(cohort, bases, params, cfg, method, stages)
    except StageError:
        manifest["stages"] = stages.listing()
        if write:
            out.mkdir(parents=True, exist_ok=True)
            (out / "manifest.json").write_text(_dumps(manifest))
        raise

    report.extras = {"method": method, "embedding": params.kind, "apply_jse": cfg.apply_jse,
                     "spectral_k": red.graph_k}
    manifest.update(
        partial=False,
        stages=stages.listing(),
        cohort={"n": len(cohort.labels), "n_abnormal": int(cohort.labels.sum()),
                "hash": cohort.digest(), "fold_hash": report.fold_hash},
        sample_seeds=sample_seeds(cfg.master_seed, len(cohort.heat)),
        spectral=red.diagnostics,
        jse=jse_info if cfg.apply_jse else None,
    )
    if write:
        _write_artifacts(out, cohort, images, F, red, report, manifest)
    return PipelineOutcome(report, manifest, out, F, red.matrix)


def _write_artifacts(out, cohort, images, F, red, report, manifest):
    out.mkdir(parents=True, exist_ok=True)
    emb_dir = out / "embedded"
    emb_dir.mkdir(exist_ok=True)
    for sid, img, seq in zip(cohort.ids, images, cohort.sequences):
        img.to_pgm(emb_dir / f"{sid}.pgm", seq.roi_mask)
        img.to_csv(emb_dir / f"{sid}.csv")
    _write_csv(out / "features.csv", ("id", "label") + thermomics.FEATURE_NAMES,
               [[sid, int(lab), *map(repr, row.tolist())]
                for sid, lab, row in zip(cohort.ids, cohort.labels, F)])
    d = red.matrix.shape[1]
    _write_csv(out / "reduced.csv", ["id", "label"] + [f"dim_{i + 1}" for i in range(d)],
               [[sid, int(lab), *map(repr, row.tolist())]
                for sid, lab, row in zip(cohort.ids, cohort.labels, red.matrix)])
    (out / "graph.json").write_text(_dumps(red.diagnostics))
    (out / "report.json").write_text(_dumps(report.to_dict()))
    _write_csv(out / "roc.csv", ("fpr", "tpr"), [[repr(a), repr(b)] for a, b in report.roc_points])
    cm = report.confusion
    _write_csv(out / "confusion.csv", ("truth", "pred_healthy", "pred_abnormal"),
               [["healthy", *cm[0]], ["abnormal", *cm[1]]])
    (out / "manifest.json").write_text(_dumps(manifest))


# --------------------------------------------------------------------------
# comparison


def run_comparison(cfg: PipelineConfig, methods=DEFAULT_COMPARISON_METHODS,
                   embeddings=embedding.KINDS, write=True):
    """Evaluate every (method, embedding) cell on one shared cohort and fold split.

    Returns a list of row dicts with the ``COMPARISON_COLUMNS`` keys and, when
    ``write`` is set, writes ``comparison.csv`` and ``comparison_manifest.json``.
    """
    cfg.validate()
    methods, embeddings = list(methods), list(embeddings)
    if not methods or not embeddings:
        raise ConfigError("comparison needs at least one method and one embedding")
    for m in methods:
        if m not in factorize.METHODS:
            raise ConfigError(f"unknown factorization method {m!r}")
    for e in embeddings:
        if e not in embedding.KINDS:
            raise ConfigError(f"unknown embedding kind {e!r}")

    stages = _Stages()
    cohort = stages.run("ingest", ingest, cfg)
    cohort_hash = cohort.digest()
    rows, cells = [], []
    for m in methods:
        t0 = time.perf_counter()
        bases, _ = stages.run("factorize", _factorize_cohort, cohort, m, cfg, cfg.apply_jse)
        t_fact = time.perf_counter() - t0
        for e in embeddings:
            t1 = time.perf_counter()
            params = embedding.EmbeddingParams(**{**cfg.embedding, "kind": e})
            _, _, red, report = _evaluate(cohort, bases, params, cfg, m, stages)
            secs = t_fact + time.perf_counter() - t1
            rows.append({
                "method": m, "embedding": e,
                "accuracy_median": report.accuracy_median,
                "accuracy_q25": report.accuracy_iqr[0], "accuracy_q75": report.accuracy_iqr[1],
                "kappa": report.kappa, "kappa_q25": report.kappa_iqr[0], "kappa_q75": report.kappa_iqr[1],
                "auc": report.auc, "fold_hash": report.fold_hash, "cohort_hash": cohort_hash,
                "seconds": round(secs, 3),
            })
            cells.append({"method": m, "embedding": e, "best_params": report.best_params,
                          "spectral_k": red.graph_k})
            logger.info("%s/%s accuracy %.3f", m, e, report.accuracy_median)
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "comparison.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=COMPARISON_COLUMNS)
            w.writeheader()
            w.writerows(rows)
        manifest = {"config": cfg.to_dict(), "methods": methods, "embeddings": embeddings,
                    "cohort_hash": cohort_hash,
                    "fold_hashes": sorted({r["fold_hash"] for r in rows}), "cells": cells}
        (out / "comparison_manifest.json").write_text(_dumps(manifest))
    return rows
