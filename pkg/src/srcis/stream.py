"""Class-incremental task streams: synthetic generators and a CSV loader."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .numkit import child_seed, seeded_rng

STREAM_KINDS = ("gaussian-clusters", "rings", "csv")


@dataclass
class Task:
    task_id: int
    classes: list[int]
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


@dataclass
class TaskStream:
    tasks: list[Task]
    input_dim: int
    class_names: dict[int, str]

    def __post_init__(self):
        seen: set[int] = set()
        for t in self.tasks:
            overlap = seen & set(t.classes)
            if overlap:
                raise ValidationError(f"task {t.task_id} repeats classes {sorted(overlap)}")
            seen |= set(t.classes)

    def __len__(self):
        return len(self.tasks)

    @property
    def classes(self) -> list[int]:
        return [c for t in self.tasks for c in t.classes]

    def merged(self) -> "TaskStream":
        """All tasks folded into a single task (joint upper-bound setting)."""
        task = Task(
            0, self.classes,
            np.concatenate([t.x_train for t in self.tasks]),
            np.concatenate([t.y_train for t in self.tasks]),
            np.concatenate([t.x_test for t in self.tasks]),
            np.concatenate([t.y_test for t in self.tasks]),
        )
        return TaskStream([task], self.input_dim, dict(self.class_names))


def _gaussian_clusters(n_classes, dim, n_train, n_test, rng, cluster_std=1.0, center_spread=1.0, **_):
    centers = rng.uniform(-center_spread, center_spread, size=(n_classes, dim))
    xs, ys = [], []
    for c in range(n_classes):
        n = n_train + n_test
        xs.append(centers[c] + rng.normal(0.0, cluster_std, size=(n, dim)))
        ys.append(np.full(n, c))
    return xs, ys, centers


def _rings(n_classes, dim, n_train, n_test, rng, cluster_std=0.1, ring_gap=1.0, **_):
    if dim < 2:
        raise ValidationError("rings need at least two input dimensions")
    xs, ys = [], []
    for c in range(n_classes):
        n = n_train + n_test
        radius = ring_gap * (c + 1) + rng.normal(0.0, cluster_std, size=n)
        theta = rng.uniform(0.0, 2 * np.pi, size=n)
        x = rng.normal(0.0, cluster_std, size=(n, dim))
        x[:, 0] = radius * np.cos(theta)
        x[:, 1] = radius * np.sin(theta)
        xs.append(x)
        ys.append(np.full(n, c))
    return xs, ys, None


def read_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Rows of ``label,f0,...,f{d-1}`` after a header line."""
    path = Path(path)
    xs, ys = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "label":
            raise ParseError("CSV must start with a 'label,f0,...' header", line=1)
        width = len(header)
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ParseError(f"expected {width} columns, got {len(row)}", line=row_no)
            try:
                ys.append(int(row[0]))
                xs.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ParseError(f"bad value: {exc}", line=row_no) from exc
    if not ys:
        raise ParseError("CSV holds no data rows", line=2)
    x = np.array(xs, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ParseError("CSV holds non-finite features")
    return x, np.array(ys, dtype=np.int64)


def write_csv(path, x: np.ndarray, y: np.ndarray) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{i}" for i in range(x.shape[1])])
        for xi, yi in zip(x, y):
            w.writerow([int(yi)] + [repr(float(v)) for v in xi])
    return path


def _split(xs, ys, n_train, rng):
    out = []
    for x, y in zip(xs, ys):
        perm = rng.permutation(len(y))
        x, y = x[perm], y[perm]
        out.append((x[:n_train], y[:n_train], x[n_train:], y[n_train:]))
    return out


def gen_stream(kind: str, *, n_classes: int = 10, n_tasks: int = 5, input_dim: int = 16,
               train_per_class: int = 200, test_per_class: int = 100, seed: int = 0,
               csv_path=None, test_fraction: float = 1 / 3, **params) -> TaskStream:
    """Build a class-incremental stream; classes are split evenly over tasks in id order."""
    if kind not in STREAM_KINDS:
        raise ValidationError(f"unknown stream kind {kind!r}; pick one of {STREAM_KINDS}")
    rng = seeded_rng(child_seed(seed, 7))
    if kind == "csv":
        if csv_path is None:
            raise ValidationError("csv streams need csv_path")
        x, y = read_csv(csv_path)
        labels = sorted(set(y.tolist()))
        input_dim = x.shape[1]
        xs = [x[y == c] for c in labels]
        ys = [np.full(len(v), i) for i, v in enumerate(xs)]
        names = {i: f"class{c}" for i, c in enumerate(labels)}
        n_classes = len(labels)
        parts = []
        for xc, yc in zip(xs, ys):
            n_tr = max(1, int(round(len(yc) * (1 - test_fraction))))
            parts.extend(_split([xc], [yc], n_tr, rng))
    else:
        gen = _gaussian_clusters if kind == "gaussian-clusters" else _rings
        xs, ys, _ = gen(n_classes, input_dim, train_per_class, test_per_class, rng, **params)
        names = {c: f"class{c}" for c in range(n_classes)}
        parts = _split(xs, ys, train_per_class, rng)
    if n_tasks < 1 or n_classes % n_tasks:
        raise ValidationError(f"{n_classes} classes cannot be split evenly into {n_tasks} tasks")
    per_task = n_classes // n_tasks
    tasks = []
    for t in range(n_tasks):
        cls = list(range(t * per_task, (t + 1) * per_task))
        chunk = [parts[c] for c in cls]
        tasks.append(Task(
            t, cls,
            np.concatenate([p[0] for p in chunk]), np.concatenate([p[1] for p in chunk]),
            np.concatenate([p[2] for p in chunk]), np.concatenate([p[3] for p in chunk]),
        ))
    return TaskStream(tasks, input_dim, names)


def class_centers(kind: str, *, n_classes: int = 10, input_dim: int = 16, seed: int = 0,
                  train_per_class: int = 200, test_per_class: int = 100, **params) -> np.ndarray:
    """Generating centers of a gaussian-clusters stream with the same arguments."""
    if kind != "gaussian-clusters":
        raise ValidationError("only gaussian-clusters streams have centers")
    rng = seeded_rng(child_seed(seed, 7))
    return _gaussian_clusters(n_classes, input_dim, train_per_class, test_per_class, rng, **params)[2]
