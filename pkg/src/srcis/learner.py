"""Task learning: adapter + prototype training with temperature feedback."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .backbone import Backbone, LowRankAdapter, backward, forward_trace
from .detector import (DetectorConfig, OnlineExperience, ema_update, normalize,
                       pre_detect, temperature_update)
from .errors import InvariantError, NumericError, OracleError, ValidationError
from .memory import MemoryStore, ScenarioRecord, allocate_prototypes, push_stm, record_scenario
from .numkit import child_seed, log_softmax, seeded_rng, softmax
from .stream import Task

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 10
    epochs_per_task: int = 1
    m_scenarios_per_class: int = 5
    rank: int = 4
    seed: int = 0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValidationError("lr must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")


def tpa_arrays(xi, y_idx, w, b, tau):
    """Loss and gradients on stacked arrays.

    ``xi`` (n, d) embeddings, ``y_idx`` (n,) row indices into the class arrays
    ``w`` (k, d), ``b`` (k,), ``tau`` (k,). Temperatures get no gradient.
    Returns ``(loss, d_xi, d_w, d_b)``.
    """
    xi = np.asarray(xi, dtype=np.float64)
    n = xi.shape[0]
    z = (xi @ w.T + b) / tau
    logp = log_softmax(z, axis=1)
    rows = np.arange(n)
    loss = -float(logp[rows, y_idx].mean())
    dz = np.exp(logp)
    dz[rows, y_idx] -= 1.0
    dz /= n
    ds = dz / tau  # d loss / d raw score
    return loss, ds @ w, ds.T @ xi, ds.sum(axis=0)


def tpa_loss(embeddings, labels, prototypes, batch_classes: Iterable[int] | None = None):
    """Prototype alignment loss with per-class temperatures.

    Mean over the batch of ``-log softmax_y((<xi, p_w^y> + p_b^y) / tau^y)``,
    the softmax running over ``batch_classes`` (default: the labels present).
    ``prototypes`` maps class id to :class:`PrototypeEntry`.

    Returns ``(loss, grads)`` with ``grads`` holding ``"xi"`` (n, d) and
    per-class dicts ``"p_w"`` and ``"p_b"``.
    """
    labels = [int(y) for y in labels]
    classes = sorted(set(labels)) if batch_classes is None else list(batch_classes)
    missing = [c for c in classes if c not in prototypes]
    if missing:
        raise InvariantError(f"no prototype for classes {missing}")
    index = {c: i for i, c in enumerate(classes)}
    try:
        y_idx = np.array([index[y] for y in labels])
    except KeyError as exc:
        raise InvariantError(f"label {exc.args[0]} is outside the batch classes") from exc
    w = np.stack([prototypes[c].p_w for c in classes])
    b = np.array([prototypes[c].p_b for c in classes], dtype=np.float64)
    tau = np.array([prototypes[c].tau for c in classes], dtype=np.float64)
    loss, d_xi, d_w, d_b = tpa_arrays(np.atleast_2d(embeddings), y_idx, w, b, tau)
    grads = {"xi": d_xi,
             "p_w": {c: d_w[i] for c, i in index.items()},
             "p_b": {c: float(d_b[i]) for c, i in index.items()}}
    return loss, grads


def seen_confidence(xi, store: MemoryStore):
    """Untempered softmax over all seen classes: (max prob, argmax class id, probs)."""
    w, b, _ = store.prototype_arrays()
    probs = softmax(np.atleast_2d(xi) @ w.T + b, axis=1)
    seen = np.asarray(store.seen_classes)
    return probs.max(axis=1), seen[probs.argmax(axis=1)], probs


@dataclass
class StepStats:
    loss: float
    mean_confidence: float
    counts: dict = field(default_factory=dict)
    tau: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"loss": self.loss, "mean_confidence": self.mean_confidence,
                "counts": self.counts, "tau": self.tau}


def train_step(adapter: LowRankAdapter, store: MemoryStore, backbone: Backbone, x, y,
               experience: OnlineExperience, det_cfg: DetectorConfig, cfg: TrainConfig,
               feedback: bool = True) -> StepStats:
    """One SGD step, updating adapter, prototypes, temperatures and experience in place.

    Order: confidences, pre-detection, temperature feedback for the classes
    in the batch, gradient step, then the EMA update.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    acts = forward_trace(backbone, adapter, x)
    xi = acts[-1]
    conf, pred, _ = seen_confidence(xi, store)

    counts = {}
    batch_classes = sorted(set(y.tolist()))
    if feedback and experience.warm:
        z = normalize(experience, conf, det_cfg.std_floor)
        res = pre_detect(experience, det_cfg, zip(z, pred, y))
        counts = res.counts()
        for c in batch_classes:
            entry = store.prototypes[c]
            entry.tau = temperature_update(entry.tau, counts, det_cfg.kappa)

    loss, grads = tpa_loss(xi, y, store.prototypes, batch_classes)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss on task {adapter.task_id}: classes {batch_classes}")
    if cfg.lr > 0:
        g_w = backward(backbone, adapter, acts, grads["xi"])
        g_b = g_w @ adapter.a.T
        g_a = adapter.b.T @ g_w
        adapter.b = adapter.b - cfg.lr * g_b
        adapter.a = adapter.a - cfg.lr * g_a
        for c in batch_classes:
            entry = store.prototypes[c]
            entry.p_w = entry.p_w - cfg.lr * grads["p_w"][c]
            entry.p_b = entry.p_b - cfg.lr * grads["p_b"][c]

    ema_update(experience, conf)
    return StepStats(loss, float(conf.mean()), counts,
                     {c: store.prototypes[c].tau for c in batch_classes})


def new_adapter(task_id: int, shape: tuple[int, int], rank: int, seed: int) -> LowRankAdapter:
    """B = 0 so the initial delta vanishes; A ~ N(0, 1/d_in)."""
    d_out, d_in = shape
    rng = seeded_rng(seed)
    a = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(rank, d_in))
    return LowRankAdapter(task_id, a, np.zeros((d_out, rank)))


def learn_task(task: Task, store: MemoryStore, backbone: Backbone, experience: OnlineExperience,
               det_cfg: DetectorConfig, describer, cfg: TrainConfig, *,
               adapter: LowRankAdapter | None = None, push: bool = True, feedback: bool = True,
               log: Callable[[dict], None] | None = None) -> LowRankAdapter:
    """Learn one task; returns its adapter (also pushed to short-term memory if ``push``).

    Passing ``adapter`` continues training an existing adapter instead of
    starting a fresh one.
    """
    allocate_prototypes(store, task.classes, backbone.embed_dim,
                        child_seed(cfg.seed, 1, task.task_id), store.class_names or None)
    if adapter is None:
        adapter = new_adapter(task.task_id, backbone.target_shape, cfg.rank,
                              child_seed(cfg.seed, 2, task.task_id))
    if store.experience is None:
        store.experience = experience

    n = len(task.y_train)
    described = {c: 0 for c in task.classes}
    failures = 0
    step = 0
    for epoch in range(cfg.epochs_per_task):
        order = seeded_rng(child_seed(cfg.seed, 3, task.task_id, epoch)).permutation(n)
        if epoch == 0 and describer is not None:
            for i in order:
                c = int(task.y_train[i])
                if described[c] >= cfg.m_scenarios_per_class:
                    continue
                described[c] += 1
                try:
                    text = describer.describe(task.x_train[i], c)
                    record_scenario(store, ScenarioRecord(task.task_id, c, text))
                except (OracleError, ValidationError) as exc:
                    failures += 1
                    logger.warning("scenario for class %d skipped: %s", c, exc)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            stats = train_step(adapter, store, backbone, task.x_train[idx], task.y_train[idx],
                               experience, det_cfg, cfg, feedback=feedback)
            if log is not None:
                log({"event": "step", "task": task.task_id, "epoch": epoch, "step": step,
                     **stats.to_dict()})
            step += 1
    if failures and log is not None:
        log({"event": "describe_failures", "task": task.task_id, "count": failures})
    if push:
        push_stm(store, adapter)
    return adapter
