"""Benchmark runner: learn -> restructure -> evaluate over a task stream."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import memory as mem
from .backbone import Backbone, backbone_init, forward
from .detector import DetectorConfig, OnlineExperience, defer_mask
from .errors import OracleError, SRCISError, ValidationError
from .learner import TrainConfig, learn_task, seen_confidence
from .memory import MemoryStore
from .oracles import (GarblerOracle, GroundTruthOracle, HttpOracle, MockDescriber,
                      MockReproducer, build_query, slow_answer)
from .restructurer import RestructureConfig, restructure
from .stream import TaskStream, gen_stream

logger = logging.getLogger(__name__)

MODES = ("srcis", "no-restructure", "sequential", "joint")
ORACLES = ("none", "truth", "garbler", "http")


@dataclass
class RunConfig:
    # dataset
    dataset: str = "gaussian-clusters"
    csv_path: str | None = None
    input_dim: int = 16
    n_classes: int = 10
    n_tasks: int = 5
    train_per_class: int = 200
    test_per_class: int = 100
    cluster_std: float = 0.5
    center_spread: float = 1.0
    data_seed: int = 0
    # backbone
    embed_dim: int = 32
    depth: int = 2
    backbone_seed: int = 0
    rank: int = 4
    # training
    lr: float = 1e-3
    batch_size: int = 10
    epochs: int = 1
    m: int = 5
    seed: int = 0
    # detector
    kappa: float = 1.2
    gamma_p: float = 1.28
    gamma_n: float = -1.28
    beta_e: float = 0.01
    beta_std: float = 0.01
    # restructuring
    period_e: int = 3
    n_replay: int = 64
    nm_max_evals: int = 200
    describe_q: int = 2
    replay_sigma: float = 0.05
    # inference
    topk: int = 5
    oracle: str = "none"
    oracle_p: float = 1.0
    oracle_timeout: float = 30.0
    mode: str = "srcis"
    out_dir: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")
        if self.oracle not in ORACLES:
            raise ValidationError(f"oracle must be one of {ORACLES}")
        if self.period_e < 1 or self.topk < 2 or self.n_replay < 1 or self.m < 0:
            raise ValidationError("period_e >= 1, topk >= 2, n_replay >= 1 and m >= 0 required")
        if not 0.0 <= self.oracle_p <= 1.0:
            raise ValidationError("oracle_p must lie in [0, 1]")
        # remaining ranges are checked by the component configs
        self.train_config()
        self.detector_config()
        OnlineExperience(self.beta_e, self.beta_std)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.batch_size, self.epochs, self.m, self.rank, self.seed)

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(self.gamma_p, self.gamma_n, self.kappa)

    def restructure_config(self) -> RestructureConfig:
        return RestructureConfig(self.n_replay, self.nm_max_evals, seed=self.seed)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


class AccuracyMatrix:
    """Lower-triangular ``a[i][j]``: accuracy on task j after learning task i."""

    def __init__(self, rows: list[list[float]] | None = None):
        self.rows: list[list[float]] = []
        for r in rows or []:
            self.add_row(r)

    def add_row(self, row):
        row = [float(v) for v in row]
        if len(row) != len(self.rows) + 1:
            raise ValidationError(f"row {len(self.rows) + 1} must have {len(self.rows) + 1} entries")
        if any(not 0.0 <= v <= 1.0 for v in row):
            raise ValidationError("accuracies must lie in [0, 1]")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    def to_csv(self, path) -> Path:
        path = Path(path)
        n = len(self.rows)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["after_task"] + [f"task{j + 1}" for j in range(n)])
            for i, row in enumerate(self.rows):
                w.writerow([i + 1] + [repr(v) for v in row] + [""] * (n - len(row)))
        return path


def metrics(a: AccuracyMatrix) -> dict:
    """``ACC_i`` (mean of row i) for every i, plus the final current-task accuracy."""
    acc = [sum(row) / len(row) for row in a.rows]
    return {"acc": acc, "acc_final": acc[-1] if acc else None,
            "a_tt": a.rows[-1][-1] if a.rows else None}


# -- inference ---------------------------------------------------------------

def eval_delta(store: MemoryStore, mode: str = "srcis"):
    """Adaptation-layer delta used at inference.

    Long-term memory when present, else the most recent short-term adapter
    (the only option when restructuring is disabled).
    """
    if mode in ("srcis", "joint") and store.ltm_adapter is not None:
        return store.ltm_adapter
    return store.stm_adapters[-1].delta() if store.stm_adapters else None


@dataclass
class Prediction:
    labels: np.ndarray
    fast: np.ndarray
    confidence: np.ndarray
    deferred: np.ndarray
    oracle_failures: int = 0
    invalid_answers: int = 0


def predict_batch(x, backbone: Backbone, store: MemoryStore, experience: OnlineExperience | None,
                  det_cfg: DetectorConfig, slow_oracle=None, k: int = 5, mode: str = "srcis",
                  delta=None) -> Prediction:
    """Fast prediction for every row of ``x``; low-confidence rows go to the slow oracle.

    Never mutates ``store`` or ``experience``.
    """
    if not store.seen_classes:
        raise ValidationError("no classes have been learned")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if delta is None:
        delta = eval_delta(store, mode)
    xi = forward(backbone, delta, x)
    conf, fast, probs = seen_confidence(xi, store)
    labels = fast.copy()
    if experience is None or slow_oracle is None:
        deferred = np.zeros(len(labels), dtype=bool)
    else:
        deferred = defer_mask(experience, det_cfg, conf)
    seen = np.asarray(store.seen_classes)
    k = min(k, len(seen))
    failures = invalid = 0
    if k < 2:
        deferred[:] = False
    for i in np.flatnonzero(deferred):
        top = seen[np.argsort(-probs[i], kind="stable")[:k]]
        query = build_query(top, store.class_names or None)
        try:
            ans = slow_answer(slow_oracle, x[i], query)
        except OracleError as exc:
            logger.debug("slow oracle failed: %s", exc)
            failures += 1
            continue
        if ans.matched_class is None:
            invalid += 1
        else:
            labels[i] = ans.matched_class
    return Prediction(labels, fast, conf, deferred, failures, invalid)


def predict(x, backbone, store, experience, det_cfg, slow_oracle=None, k: int = 5,
            mode: str = "srcis") -> int:
    return int(predict_batch(x, backbone, store, experience, det_cfg, slow_oracle, k, mode).labels[0])


def state_digest(store: MemoryStore) -> str:
    return hashlib.sha256(mem.dumps(store).encode()).hexdigest()


# -- run -----------------------------------------------------------------------

class RunError(SRCISError):
    def __init__(self, task: int, phase: str, cause: Exception):
        super().__init__(f"task {task}, phase {phase}: {type(cause).__name__}: {cause}")
        self.task = task
        self.phase = phase
        self.cause = cause


@dataclass
class RunResult:
    config: RunConfig
    matrix: AccuracyMatrix
    metrics: dict
    restructure_reports: list[dict] = field(default_factory=list)
    deferral: list[dict] = field(default_factory=list)
    store: MemoryStore | None = None
    seconds: float = 0.0

    def summary(self) -> dict:
        return {"config": asdict(self.config), "metrics": self.metrics,
                "matrix": self.matrix.rows, "deferral": self.deferral,
                "restructure": self.restructure_reports, "seconds": self.seconds}


def build_stream(cfg: RunConfig) -> TaskStream:
    params = {}
    if cfg.dataset == "gaussian-clusters":
        params = {"cluster_std": cfg.cluster_std, "center_spread": cfg.center_spread}
    elif cfg.dataset == "rings":
        params = {"cluster_std": cfg.cluster_std}
    stream = gen_stream(cfg.dataset, n_classes=cfg.n_classes, n_tasks=cfg.n_tasks,
                        input_dim=cfg.input_dim, train_per_class=cfg.train_per_class,
                        test_per_class=cfg.test_per_class, seed=cfg.data_seed,
                        csv_path=cfg.csv_path, **params)
    return stream.merged() if cfg.mode == "joint" else stream


def build_backbone(cfg: RunConfig, input_dim: int) -> Backbone:
    return backbone_init(input_dim, cfg.embed_dim, cfg.depth, cfg.backbone_seed)


def build_oracle(cfg: RunConfig, stream: TaskStream):
    if cfg.oracle == "none":
        return None
    if cfg.oracle == "garbler":
        return GarblerOracle()
    if cfg.oracle == "http":
        oracle = HttpOracle.from_env(cfg.oracle_timeout)
        if oracle is None:
            raise ValidationError("http oracle selected but SRCIS_ORACLE_URL is not set")
        return oracle
    truth = {}
    for t in stream.tasks:
        for x, y in zip(t.x_test, t.y_test):
            truth[x.tobytes()] = int(y)
    return GroundTruthOracle(lambda x: truth.get(np.asarray(x, dtype=np.float64).tobytes()),
                             cfg.oracle_p, seed=cfg.seed, names=stream.class_names)


def evaluate(stream: TaskStream, upto: int, backbone, store, experience, det_cfg, oracle,
             k: int, mode: str) -> tuple[list[float], dict]:
    """Accuracy on each task ``0..upto`` plus deferral counts."""
    row = []
    n_eval = n_def = fails = invalid = 0
    delta = eval_delta(store, mode)
    for t in stream.tasks[: upto + 1]:
        pred = predict_batch(t.x_test, backbone, store, experience, det_cfg, oracle, k, mode, delta)
        row.append(float(np.mean(pred.labels == t.y_test)))
        n_eval += len(t.y_test)
        n_def += int(pred.deferred.sum())
        fails += pred.oracle_failures
        invalid += pred.invalid_answers
    return row, {"task": upto, "evaluated": n_eval, "deferred": n_def,
                 "rate": n_def / n_eval if n_eval else 0.0,
                 "oracle_failures": fails, "invalid_answers": invalid}


def run(cfg: RunConfig, *, stream: TaskStream | None = None,
        log: Callable[[dict], None] | None = None) -> RunResult:
    """Run the whole workflow for ``cfg.mode``.

    srcis: fresh adapter per task, restructure after each task, cascade at
    evaluation. no-restructure: adapters accumulate in short-term memory and
    inference uses the most recent one.
    sequential: one adapter trained throughout, no restructuring or
    temperature feedback, fast inference only. joint: all tasks merged.
    """
    t0 = time.perf_counter()
    log = log or (lambda ev: None)
    stream = stream or build_stream(cfg)
    backbone = build_backbone(cfg, stream.input_dim)
    store = MemoryStore(period_e=cfg.period_e, class_names=dict(stream.class_names),
                        backbone=backbone.config())
    experience = OnlineExperience(cfg.beta_e, cfg.beta_std)
    store.experience = experience
    det_cfg = cfg.detector_config()
    tcfg = cfg.train_config()
    rcfg = cfg.restructure_config()
    describer = MockDescriber(cfg.describe_q, stream.class_names)
    reproducer = MockReproducer(cfg.replay_sigma, seed=cfg.seed)
    oracle = build_oracle(cfg, stream) if cfg.mode != "sequential" else None

    matrix = AccuracyMatrix()
    reports, deferral = [], []
    adapter = None
    for t, task in enumerate(stream.tasks):
        phase = "learn"
        try:
            if cfg.mode == "sequential":
                adapter = learn_task(task, store, backbone, experience, det_cfg, describer, tcfg,
                                     adapter=adapter, push=False, feedback=False, log=log)
                store.stm_adapters = [adapter]
            else:
                learn_task(task, store, backbone, experience, det_cfg, describer, tcfg, log=log)
            if cfg.mode in ("srcis", "joint"):
                phase = "restructure"
                rep = restructure(store, backbone, reproducer, rcfg, round_idx=t).to_dict()
                rep["task"] = t
                rep["stm_size"] = len(store.stm_adapters)
                rep["param_floats"] = store.parameter_float_count()
                reports.append(rep)
                log({"event": "restructure", **rep})
            phase = "evaluate"
            row, dstats = evaluate(stream, t, backbone, store, experience, det_cfg, oracle,
                                   cfg.topk, cfg.mode)
        except SRCISError as exc:
            raise RunError(t, phase, exc) from exc
        matrix.add_row(row)
        deferral.append(dstats)
        log({"event": "evaluate", "task": t, "row": row, **dstats})
    result = RunResult(cfg, matrix, metrics(matrix), reports, deferral, store,
                       time.perf_counter() - t0)
    return result


def write_outputs(result: RunResult, out_dir, events: list[dict] | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = result.summary()
    summary.pop("seconds")
    (out / "run.json").write_text(json.dumps(summary, indent=1) + "\n")
    result.matrix.to_csv(out / "matrix.csv")
    with (out / "curves.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "acc", "a_tt", "deferral_rate"])
        for i, (acc, row, d) in enumerate(zip(result.metrics["acc"], result.matrix.rows, result.deferral)):
            w.writerow([i + 1, repr(acc), repr(row[-1]), repr(d["rate"])])
    with (out / "events.jsonl").open("w") as fh:
        for ev in events or []:
            fh.write(json.dumps(ev, default=_jsonable) + "\n")
    if result.store is not None:
        mem.save(result.store, out / "checkpoint.json")
    return out


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")
