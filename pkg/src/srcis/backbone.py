"""Frozen feature network with low-rank adapter injection on its first layer."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NumericError, ShapeError
from .numkit import mat, seeded_rng

ACTIVATIONS = ("tanh", "linear")


@dataclass(frozen=True)
class Backbone:
    """Seeded frozen network ``x -> act(W_L ... act(W_1 x + b_1) ... + b_L)``.

    Only ``layers[0]`` (the adaptation layer) accepts a low-rank delta.
    """

    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    input_dim: int
    embed_dim: int
    seed: int
    activation: str = "tanh"

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def target_shape(self) -> tuple[int, int]:
        return self.layers[0][0].shape

    def config(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "embed_dim": self.embed_dim,
            "depth": self.depth,
            "seed": self.seed,
            "activation": self.activation,
            "hidden_dim": self.layers[0][0].shape[0] if self.depth > 1 else None,
        }

    def merged(self, delta: np.ndarray) -> "Backbone":
        """A copy whose adaptation-layer weight is ``W_1 + delta``."""
        w0, b0 = self.layers[0]
        delta = _check_delta(self, delta)
        layers = ((w0 + delta, b0),) + self.layers[1:]
        return Backbone(layers, self.input_dim, self.embed_dim, self.seed, self.activation)


@dataclass
class LowRankAdapter:
    """Task parameter memory ``W = b @ a``.

    ``composite`` marks the entry that replaces short-term memory after a
    period reset; it stores the full merged matrix as ``b`` with ``a`` the
    identity, so ``b @ a`` is still the stored delta.
    """

    task_id: int
    a: np.ndarray  # (r, d_in)
    b: np.ndarray  # (d_out, r)
    composite: bool = False

    def __post_init__(self):
        self.a = mat(self.a)
        self.b = mat(self.b)
        if self.a.shape[0] != self.b.shape[1]:
            raise ShapeError(f"adapter inner dims differ: a {self.a.shape}, b {self.b.shape}")
        if not self.composite:
            d_out, d_in = self.b.shape[0], self.a.shape[1]
            if not 1 <= self.rank <= min(d_in, d_out):
                raise ShapeError(f"rank {self.rank} outside [1, {min(d_in, d_out)}]")

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.b.shape[0], self.a.shape[1])

    @property
    def n_floats(self) -> int:
        # a composite's identity factor is implicit and never stored
        return self.b.size if self.composite else self.a.size + self.b.size

    def delta(self) -> np.ndarray:
        return self.b @ self.a

    @classmethod
    def from_matrix(cls, task_id: int, w: np.ndarray) -> "LowRankAdapter":
        w = mat(w)
        return cls(task_id, np.eye(w.shape[1]), w.copy(), composite=True)


def backbone_init(input_dim: int, embed_dim: int, depth: int = 2, seed: int = 0, *,
                  hidden_dim: int | None = None, activation: str = "tanh") -> Backbone:
    if input_dim < 1 or embed_dim < 1 or depth < 1:
        raise ShapeError("backbone dims and depth must be >= 1")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    hidden = hidden_dim or embed_dim
    dims = [input_dim] + [hidden] * (depth - 1) + [embed_dim]
    rng = seeded_rng(seed)
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        w = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_out, d_in))
        b = rng.normal(0.0, 0.1, size=d_out)
        w.setflags(write=False)
        b.setflags(write=False)
        layers.append((w, b))
    return Backbone(tuple(layers), input_dim, embed_dim, int(seed), activation)


def _check_delta(bk: Backbone, delta) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != bk.target_shape:
        raise ShapeError(f"adapter delta {delta.shape} does not fit target layer {bk.target_shape}")
    return delta


def _resolve_delta(bk: Backbone, adapter) -> np.ndarray | None:
    if adapter is None:
        return None
    if isinstance(adapter, LowRankAdapter):
        return _check_delta(bk, adapter.delta())
    return _check_delta(bk, adapter)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if name == "tanh" else z


def _layer_weights(bk: Backbone, adapter):
    delta = _resolve_delta(bk, adapter)
    weights = [w for w, _ in bk.layers]
    if delta is not None:
        weights[0] = weights[0] + delta
    return weights


def forward(bk: Backbone, adapter, x) -> np.ndarray:
    """Embedding for one input (1-D) or a batch of inputs (2-D, one row each).

    ``adapter`` may be ``None``, a :class:`LowRankAdapter` or a full delta
    matrix for the adaptation layer.
    """
    return forward_trace(bk, adapter, x)[-1]


def forward_trace(bk: Backbone, adapter, x) -> list[np.ndarray]:
    """Activations of every layer, input first; used by :func:`backward`."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != bk.input_dim or x.ndim not in (1, 2):
        raise ShapeError(f"input of shape {x.shape} does not match input_dim {bk.input_dim}")
    weights = _layer_weights(bk, adapter)
    acts = [x]
    h = x
    for w, (_, b) in zip(weights, bk.layers):
        h = _act(bk.activation, h @ w.T + b)
        acts.append(h)
    if not np.all(np.isfinite(h)):
        raise NumericError("backbone forward produced non-finite output")
    return acts


def backward(bk: Backbone, adapter, acts: list[np.ndarray], grad_out: np.ndarray) -> np.ndarray:
    """Gradient of a loss w.r.t. the adaptation-layer weight.

    ``acts`` comes from :func:`forward_trace` on a batch (2-D) and ``grad_out``
    is dL/d(embedding) with the same shape as ``acts[-1]``.
    """
    weights = _layer_weights(bk, adapter)
    g = np.asarray(grad_out, dtype=np.float64)
    for k in range(bk.depth - 1, -1, -1):
        if bk.activation == "tanh":
            g = g * (1.0 - acts[k + 1] ** 2)
        if k == 0:
            return g.T @ acts[0]
        g = g @ weights[k]
    raise AssertionError("unreachable")


def compose(adapters: Sequence[LowRankAdapter], alpha) -> np.ndarray:
    """Merged delta ``(sum_i alpha_i B_i) @ (sum_i alpha_i A_i)``.

    This is not ``sum_i alpha_i B_i A_i``. Adapters with different inner
    dimensions (a composite entry next to rank-r ones) are zero-padded to the
    widest inner dimension first.
    """
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    if len(adapters) == 0 or alpha.size != len(adapters):
        raise ShapeError(f"need one coefficient per adapter: {alpha.size} vs {len(adapters)}")
    shapes = {ad.shape for ad in adapters}
    if len(shapes) != 1:
        raise ShapeError(f"adapters target different shapes: {sorted(shapes)}")
    d_out, d_in = adapters[0].shape
    inner = max(ad.rank for ad in adapters)
    b_sum = np.zeros((d_out, inner))
    a_sum = np.zeros((inner, d_in))
    for coef, ad in zip(alpha, adapters):
        b_sum[:, : ad.rank] += coef * ad.b
        a_sum[: ad.rank, :] += coef * ad.a
    return b_sum @ a_sum
