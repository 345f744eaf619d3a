"""Pluggable stand-ins for the captioning, generative and slow-inference models.

Mocks are deterministic given their seed. :class:`HttpOracle` speaks a small
JSON protocol to an external service::

    POST <url>  {"features": [float, ...], "prompt": str, "choices": [str, ...]}
    200         {"text": str}
"""
from __future__ import annotations

import json
import os
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import OracleError, ValidationError
from .numkit import child_seed, seeded_rng

ORACLE_URL_ENV = "SRCIS_ORACLE_URL"

QUESTION = ("Analyze the given picture and select the most likely class it belongs to "
            "from the options provided below. Please choose only one class.")
DESCRIBE_PROMPT = "Describe the given picture in one sentence."

_SKETCH_RE = re.compile(r"^class=(?P<label>[^;]+); v=\[(?P<vals>[^\]]*)\]$")


class ReproductionError(OracleError):
    pass


def textualize(class_id: int, names: dict[int, str] | None = None) -> str:
    if names and class_id in names:
        return names[class_id]
    return f"class{class_id}"


@dataclass(frozen=True)
class Query:
    prompt: str
    choices: tuple[str, ...]
    class_ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.choices) < 2:
            raise ValidationError("a query needs at least two choices")
        if len({c.lower() for c in self.choices}) != len(self.choices):
            raise ValidationError(f"duplicate choices in {self.choices}")
        if len(self.class_ids) != len(self.choices):
            raise ValidationError("choices and class ids differ in length")

    def render(self) -> str:
        lines = [f"Question: {self.prompt}", "Choices:"]
        lines += list(self.choices)
        return "\n".join(lines)


@dataclass
class OracleAnswer:
    raw_text: str
    matched_class: int | None = None


def build_query(topk: Sequence[int], names: dict[int, str] | None = None) -> Query:
    topk = [int(c) for c in topk]
    if len(set(topk)) != len(topk):
        raise ValidationError(f"duplicate classes in TopK list {topk}")
    return Query(QUESTION, tuple(textualize(c, names) for c in topk), tuple(topk))


def _label_pattern(label: str) -> re.Pattern:
    return re.compile(r"(?<!\w)" + re.escape(label.lower()) + r"(?!\w)")


def match_answer(raw_text: str | None, query: Query) -> int | None:
    """Class of the single choice named in ``raw_text``; None if zero or several."""
    if not raw_text:
        return None
    text = raw_text.lower()
    hits = [cid for label, cid in zip(query.choices, query.class_ids)
            if _label_pattern(label).search(text)]
    return hits[0] if len(hits) == 1 else None


def slow_answer(oracle, x, query: Query) -> OracleAnswer:
    raw = oracle.answer(x, query)
    return OracleAnswer(raw, match_answer(raw, query))


# -- scenario recording / reproduction -------------------------------------

class MockDescriber:
    """Caption stand-in: the label plus each coordinate rounded to ``q`` places."""

    concurrent_safe = True

    def __init__(self, q: int = 2, names: dict[int, str] | None = None):
        self.q = q
        self.names = names

    def describe(self, x, y: int) -> str:
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise OracleError("cannot describe a non-finite input")
        vals = ",".join(f"{v:.{self.q}f}" for v in x)
        return f"class={textualize(y, self.names)}; v=[{vals}]"


def parse_sketch(text: str) -> tuple[str, np.ndarray]:
    m = _SKETCH_RE.match(text.strip()) if isinstance(text, str) else None
    if m is None:
        raise ReproductionError(f"unparseable scenario text: {text!r:.60}")
    try:
        vals = np.array([float(v) for v in m["vals"].split(",")], dtype=np.float64)
    except ValueError as exc:
        raise ReproductionError(f"bad number in scenario text: {exc}") from exc
    if not np.all(np.isfinite(vals)):
        raise ReproductionError("scenario text holds non-finite values")
    return m["label"], vals


class MockReproducer:
    """Generative-replay stand-in: parsed sketch plus seeded Gaussian noise.

    Noise for record ``index`` comes from its own derived stream, so records
    are independent of each other and of call order.
    """

    concurrent_safe = True

    def __init__(self, sigma: float = 0.05, seed: int = 0):
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        self.sigma = sigma
        self.seed = seed

    def reproduce(self, text: str, index: int = 0) -> np.ndarray:
        _, vals = parse_sketch(text)
        if self.sigma == 0:
            return vals
        rng = seeded_rng(child_seed(self.seed, index))
        return vals + rng.normal(0.0, self.sigma, size=vals.shape)


# -- slow inference ---------------------------------------------------------

class GroundTruthOracle:
    """Answers the true class with probability ``p`` when it is among the choices.

    Otherwise it names a wrong choice uniformly at random (any choice if the
    truth is absent). ``lookup`` maps an input to its true class or None.
    """

    concurrent_safe = False

    def __init__(self, lookup: Callable[[np.ndarray], int | None], p: float = 1.0, seed: int = 0,
                 names: dict[int, str] | None = None):
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        self.lookup = lookup
        self.p = p
        self.rng = seeded_rng(seed)
        self.names = names

    def answer(self, x, query: Query) -> str:
        truth = self.lookup(x)
        ids = list(query.class_ids)
        u = self.rng.random()
        if truth in ids:
            if u < self.p:
                pick = truth
            else:
                others = [c for c in ids if c != truth]
                pick = others[int(self.rng.integers(len(others)))]
        else:
            pick = ids[int(self.rng.integers(len(ids)))]
        return f"The most likely class is {query.choices[ids.index(pick)]}."


class GarblerOracle:
    """Invalid responses only: alternately names no choice and two choices."""

    concurrent_safe = True

    def __init__(self):
        self._n = 0

    def answer(self, x, query: Query) -> str:
        self._n += 1
        if self._n % 2:
            return "I cannot tell what this picture shows."
        return f"It could be {query.choices[0]} or {query.choices[1]}."


class HttpOracle:
    concurrent_safe = True

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    @classmethod
    def from_env(cls, timeout: float = 30.0) -> "HttpOracle | None":
        url = os.environ.get(ORACLE_URL_ENV)
        return cls(url, timeout) if url else None

    def _post(self, body: dict) -> str:
        req = urllib.request.Request(
            self.url, data=json.dumps(body).encode("utf-8"),
            headers={"Content-Type": "application/json"}, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, TimeoutError, json.JSONDecodeError) as exc:
            raise OracleError(f"oracle request to {self.url} failed: {exc}") from exc
        text = payload.get("text") if isinstance(payload, dict) else None
        if not isinstance(text, str):
            raise OracleError("oracle response lacks a 'text' string")
        return text

    def answer(self, x, query: Query) -> str:
        return self._post({"features": np.asarray(x, dtype=float).tolist(),
                           "prompt": query.prompt, "choices": list(query.choices)})

    def describe(self, x, y: int) -> str:
        return self._post({"features": np.asarray(x, dtype=float).tolist(),
                           "prompt": DESCRIBE_PROMPT, "choices": [textualize(y)]})
