"""Complementary memory: adapters, prototype table and scenario pool.

Checkpoints are a single JSON document. Floats are written with Python's
shortest round-trip repr, so load(save(store)) is value-exact.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .backbone import LowRankAdapter
from .detector import OnlineExperience
from .errors import InvariantError, ParseError, ShapeError, ValidationError
from .numkit import seeded_rng, vec

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PROTO_INIT_SCALE = 0.05


@dataclass
class PrototypeEntry:
    class_id: int
    p_w: np.ndarray
    p_b: float = 0.0
    tau: float = 1.0

    def __post_init__(self):
        self.p_w = vec(self.p_w)
        if not self.tau > 0:
            raise InvariantError(f"class {self.class_id}: temperature must be > 0")


@dataclass
class ScenarioRecord:
    task_id: int
    class_id: int
    text: str

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValidationError("scenario text must be a non-empty string")

    def to_dict(self) -> dict:
        return {"task": self.task_id, "class": self.class_id, "text": self.text}


@dataclass
class MemoryStore:
    period_e: int = 3
    stm_adapters: list[LowRankAdapter] = field(default_factory=list)
    ltm_adapter: np.ndarray | None = None
    prototypes: dict[int, PrototypeEntry] = field(default_factory=dict)
    scenario_pool: list[ScenarioRecord] = field(default_factory=list)
    seen_classes: list[int] = field(default_factory=list)
    class_names: dict[int, str] = field(default_factory=dict)
    experience: OnlineExperience | None = None
    backbone: dict | None = None

    def __post_init__(self):
        if self.period_e < 1:
            raise ValidationError("restructuring period must be >= 1")

    def label(self, class_id: int) -> str:
        return self.class_names.get(class_id, f"class{class_id}")

    def prototype_arrays(self, classes: Iterable[int] | None = None):
        """Stacked ``(W, b, tau)`` for ``classes`` (default: all seen, in order)."""
        classes = list(self.seen_classes if classes is None else classes)
        missing = [c for c in classes if c not in self.prototypes]
        if missing:
            raise InvariantError(f"no prototype for classes {missing}")
        w = np.stack([self.prototypes[c].p_w for c in classes])
        b = np.array([self.prototypes[c].p_b for c in classes])
        tau = np.array([self.prototypes[c].tau for c in classes])
        return w, b, tau

    def parameter_float_count(self) -> int:
        n = sum(ad.n_floats for ad in self.stm_adapters)
        if self.ltm_adapter is not None:
            n += self.ltm_adapter.size
        return n


def allocate_prototypes(store: MemoryStore, new_classes: Iterable[int], embed_dim: int,
                        init_seed: int, names: dict[int, str] | None = None) -> MemoryStore:
    new_classes = list(new_classes)
    dup = sorted(set(new_classes) & set(store.seen_classes))
    if dup or len(set(new_classes)) != len(new_classes):
        raise InvariantError(f"classes already allocated or repeated: {dup or new_classes}")
    rng = seeded_rng(init_seed)
    for c in new_classes:
        p_w = rng.uniform(-PROTO_INIT_SCALE, PROTO_INIT_SCALE, size=embed_dim)
        store.prototypes[c] = PrototypeEntry(c, p_w, 0.0, 1.0)
        store.seen_classes.append(c)
        if names and c in names:
            store.class_names[c] = names[c]
    return store


def record_scenario(store: MemoryStore, rec: ScenarioRecord) -> MemoryStore:
    if not isinstance(rec, ScenarioRecord):
        raise ValidationError("expected a ScenarioRecord")
    store.scenario_pool.append(rec)
    return store


def push_stm(store: MemoryStore, adapter: LowRankAdapter) -> MemoryStore:
    if any(ad.task_id == adapter.task_id for ad in store.stm_adapters):
        raise InvariantError(f"task {adapter.task_id} already has a short-term adapter")
    if store.stm_adapters and store.stm_adapters[0].shape != adapter.shape:
        raise ShapeError("adapter targets a different layer shape than stored ones")
    store.stm_adapters.append(adapter)
    return store


# -- serialization ---------------------------------------------------------

def _adapter_doc(ad: LowRankAdapter) -> dict:
    doc = {"task_id": ad.task_id, "composite": ad.composite}
    if ad.composite:
        doc["w"] = ad.b.tolist()
    else:
        doc["a"] = ad.a.tolist()
        doc["b"] = ad.b.tolist()
    return doc


def to_document(store: MemoryStore) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "period_e": store.period_e,
        "seen_classes": list(store.seen_classes),
        "class_names": {str(k): v for k, v in sorted(store.class_names.items())},
        "stm_adapters": [_adapter_doc(ad) for ad in store.stm_adapters],
        "ltm_adapter": None if store.ltm_adapter is None else store.ltm_adapter.tolist(),
        "prototypes": [
            {"class_id": c, "p_w": store.prototypes[c].p_w.tolist(),
             "p_b": float(store.prototypes[c].p_b), "tau": float(store.prototypes[c].tau)}
            for c in store.seen_classes
        ],
        "scenario_pool": [r.to_dict() for r in store.scenario_pool],
        "experience": None if store.experience is None else store.experience.to_dict(),
        "backbone": store.backbone,
    }


def dumps(store: MemoryStore) -> str:
    return json.dumps(to_document(store), indent=1) + "\n"


def save(store: MemoryStore, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(store), encoding="utf-8")
    return path


def _need(doc: dict, key: str, where: str):
    if not isinstance(doc, dict) or key not in doc:
        raise ParseError("missing field", field=f"{where}{key}")
    return doc[key]


def from_document(doc: dict) -> MemoryStore:
    version = _need(doc, "version", "")
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported checkpoint version {version!r}", field="version")
    try:
        store = MemoryStore(period_e=int(_need(doc, "period_e", "")))
        store.seen_classes = [int(c) for c in _need(doc, "seen_classes", "")]
        store.class_names = {int(k): str(v) for k, v in doc.get("class_names", {}).items()}
        for i, ad in enumerate(_need(doc, "stm_adapters", "")):
            where = f"stm_adapters[{i}]."
            if _need(ad, "composite", where):
                store.stm_adapters.append(
                    LowRankAdapter.from_matrix(int(_need(ad, "task_id", where)), np.array(_need(ad, "w", where))))
            else:
                store.stm_adapters.append(LowRankAdapter(
                    int(_need(ad, "task_id", where)), np.array(_need(ad, "a", where)), np.array(_need(ad, "b", where))))
        ltm = _need(doc, "ltm_adapter", "")
        store.ltm_adapter = None if ltm is None else np.array(ltm, dtype=np.float64)
        for i, p in enumerate(_need(doc, "prototypes", "")):
            where = f"prototypes[{i}]."
            c = int(_need(p, "class_id", where))
            store.prototypes[c] = PrototypeEntry(
                c, np.array(_need(p, "p_w", where)), float(_need(p, "p_b", where)), float(_need(p, "tau", where)))
        for i, r in enumerate(_need(doc, "scenario_pool", "")):
            where = f"scenario_pool[{i}]."
            store.scenario_pool.append(ScenarioRecord(
                int(_need(r, "task", where)), int(_need(r, "class", where)), _need(r, "text", where)))
        exp = doc.get("experience")
        store.experience = None if exp is None else OnlineExperience.from_dict(exp)
        store.backbone = doc.get("backbone")
    except ParseError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ParseError(f"malformed checkpoint: {exc}") from exc
    if set(store.prototypes) != set(store.seen_classes):
        raise ParseError("prototype table does not match seen classes", field="prototypes")
    return store


def loads(text: str) -> MemoryStore:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    return from_document(doc)


def load(path) -> MemoryStore:
    return loads(Path(path).read_text(encoding="utf-8"))


def export_scenarios(store: MemoryStore, path) -> Path:
    """Write the scenario pool as JSON lines ``{task, class, text}``."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in store.scenario_pool:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")
    return path


def import_scenarios(path) -> list[ScenarioRecord]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append(ScenarioRecord(int(d["task"]), int(d["class"]), d["text"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad scenario record: {exc}", line=lineno) from exc
    return out
