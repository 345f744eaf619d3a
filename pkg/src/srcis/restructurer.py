"""Memory restructuring: replay stored scenarios and merge task adapters.

Composition coefficients are searched with Nelder-Mead (scipy) on the replay
prototype-alignment loss, starting from uniform weights.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .backbone import Backbone, LowRankAdapter, compose, forward
from .errors import OracleError, SRCISError, ValidationError
from .learner import tpa_arrays
from .memory import MemoryStore
from .numkit import child_seed, seeded_rng

logger = logging.getLogger(__name__)


@dataclass
class ReplaySet:
    x: np.ndarray
    y: np.ndarray
    source: list[int] = field(default_factory=list)  # pool indices

    def __len__(self):
        return len(self.y)


@dataclass
class CompositionResult:
    alpha: np.ndarray
    w_sigma: np.ndarray
    replay_loss_before: float
    replay_loss_after: float
    n_evals: int = 0


@dataclass
class RestructureConfig:
    n_replay: int = 64
    max_evals: int = 200
    init_step: float = 0.25
    alpha_bound: float = 1.5
    seed: int = 0


@dataclass
class RestructureReport:
    alpha: list[float]
    loss_before: float | None
    loss_after: float | None
    pool_size: int
    n_replayed: int
    reset: bool = False
    skipped: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def replay(store: MemoryStore, reproducer, n: int, seed: int) -> ReplaySet:
    """Sample ``n`` scenario texts and reproduce them into inputs.

    Sampling is without replacement unless ``n`` exceeds the pool. Records
    the reproducer cannot parse are skipped.
    """
    pool = store.scenario_pool
    if not pool:
        raise ValidationError("scenario pool is empty")
    if n < 1:
        raise ValidationError("replay count must be >= 1")
    rng = seeded_rng(child_seed(seed, 11))
    picks = rng.choice(len(pool), size=n, replace=n > len(pool))
    xs, ys, src = [], [], []
    for k, i in enumerate(picks):
        rec = pool[int(i)]
        try:
            xs.append(reproducer.reproduce(rec.text, child_seed(seed, 12, k)))
        except OracleError as exc:
            logger.warning("replay of pool[%d] skipped: %s", i, exc)
            continue
        ys.append(rec.class_id)
        src.append(int(i))
    if not xs:
        return ReplaySet(np.empty((0, 0)), np.empty(0, dtype=np.int64), [])
    return ReplaySet(np.stack(xs), np.array(ys, dtype=np.int64), src)


def replay_loss(delta, backbone: Backbone, store: MemoryStore, rs: ReplaySet) -> float:
    """Prototype alignment loss of the replay set under adaptation delta ``delta``."""
    classes = sorted(set(rs.y.tolist()))
    index = {c: i for i, c in enumerate(classes)}
    w, b, tau = store.prototype_arrays(classes)
    xi = forward(backbone, delta, rs.x)
    return tpa_arrays(xi, np.array([index[c] for c in rs.y]), w, b, tau)[0]


def optimize_alpha(adapters: Sequence[LowRankAdapter], store: MemoryStore, backbone: Backbone,
                   rs: ReplaySet, cfg: RestructureConfig | None = None) -> CompositionResult:
    if not adapters:
        raise ValidationError("need at least one adapter to compose")
    if len(rs) == 0:
        raise ValidationError("replay set is empty")
    cfg = cfg or RestructureConfig()
    t = len(adapters)
    best = {"alpha": None, "loss": np.inf}
    n_evals = 0

    def objective(alpha):
        nonlocal n_evals
        n_evals += 1
        try:
            loss = replay_loss(compose(adapters, alpha), backbone, store, rs)
        except (SRCISError, FloatingPointError):
            return np.inf
        if not np.isfinite(loss):
            return np.inf
        if loss < best["loss"]:
            best["alpha"], best["loss"] = np.array(alpha, dtype=np.float64), loss
        return loss

    alpha0 = np.full(t, 1.0 / t)
    loss0 = objective(alpha0)
    if not np.isfinite(loss0):
        raise ValidationError("replay loss is not finite at the initial coefficients")
    simplex = np.vstack([alpha0] + [alpha0 + cfg.init_step * np.eye(t)[i] for i in range(t)])
    with np.errstate(over="ignore", invalid="ignore"):
        lim = cfg.alpha_bound
        bounds = None if lim is None else [(-lim, lim)] * t
        minimize(objective, alpha0, method="Nelder-Mead", bounds=bounds,
                 options={"maxfev": max(cfg.max_evals - 1, 1), "initial_simplex": simplex,
                          "xatol": 1e-6, "fatol": 1e-10})
    alpha = best["alpha"]
    return CompositionResult(alpha, compose(adapters, alpha), loss0, best["loss"], n_evals)


def restructure(store: MemoryStore, backbone: Backbone, reproducer,
                cfg: RestructureConfig | None = None, round_idx: int = 0) -> RestructureReport:
    """Merge short-term adapters into long-term memory; reset at the period boundary.

    Prototypes are carried over unchanged. With an empty pool nothing changes.
    """
    cfg = cfg or RestructureConfig()
    if not store.stm_adapters:
        raise ValidationError("nothing to restructure: short-term memory is empty")
    pool_size = len(store.scenario_pool)
    if pool_size == 0:
        logger.warning("scenario pool empty; long-term memory left unchanged")
        return RestructureReport([], None, None, 0, 0, skipped=True)
    n = min(pool_size, cfg.n_replay)
    rs = replay(store, reproducer, n, child_seed(cfg.seed, 13, round_idx))
    if len(rs) == 0:
        logger.warning("no scenario could be reproduced; long-term memory left unchanged")
        return RestructureReport([], None, None, pool_size, 0, skipped=True)
    res = optimize_alpha(store.stm_adapters, store, backbone, rs, cfg)
    assert res.replay_loss_after <= res.replay_loss_before
    store.ltm_adapter = res.w_sigma
    reset = len(store.stm_adapters) >= store.period_e
    if reset:
        last = store.stm_adapters[-1].task_id
        store.stm_adapters = [LowRankAdapter.from_matrix(last, res.w_sigma)]
    return RestructureReport([float(a) for a in res.alpha], res.replay_loss_before,
                             res.replay_loss_after, pool_size, len(rs), reset=reset)
