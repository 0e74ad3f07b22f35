"""Tabular bigram language model and its checkpoint format.

``theta[c, t]`` is the logit of token ``t`` following context token ``c``.
Responses are scored teacher-forced: the context of response token ``t`` is
response token ``t-1``, and for ``t = 0`` the last prompt token (``bos`` when
the prompt is empty). Prompt tokens themselves are never scored.

Checkpoint layout (JSON, UTF-8, LF)::

    {"format": "gatelab.tabular-lm", "version": 1, "V": int, "bos": int,
     "theta": [V*V floats, row-major], "config": {...}}

Floats are written in shortest round-trip form, so a load/save cycle is
bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import kernels
from ..errors import InvalidInput, InvalidToken
from ..probability import ScoredResponse

CHECKPOINT_FORMAT = "gatelab.tabular-lm"
CHECKPOINT_VERSION = 1


@dataclass
class TabularLM:
    theta: np.ndarray
    bos: int = 0

    def __post_init__(self):
        theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if theta.ndim != 2 or theta.shape[0] != theta.shape[1] or theta.shape[0] < 2:
            raise InvalidInput(f"theta must be V x V with V >= 2, got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise InvalidInput("theta contains non-finite values")
        if not 0 <= self.bos < theta.shape[0]:
            raise InvalidInput("bos index out of range")
        self.theta = theta

    @classmethod
    def uniform(cls, V: int, bos: int = 0) -> "TabularLM":
        return cls(np.zeros((V, V)), bos)

    @property
    def V(self) -> int:
        return self.theta.shape[0]

    def copy(self) -> "TabularLM":
        return TabularLM(self.theta.copy(), self.bos)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.array([self.V, self.bos], dtype=np.int64).tobytes())
        h.update(self.theta.tobytes())
        return h.hexdigest()

    def log_probs(self) -> np.ndarray:
        """Row-wise log-softmax of the whole table."""
        return self.theta - kernels.logsumexp_rows(self.theta)[:, None]

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())


def check_tokens(seq, V: int, what: str = "sequence"):
    for t in seq:
        if not 0 <= int(t) < V:
            raise InvalidToken(f"token id {t} in {what} is outside [0, {V})")


def contexts(prompt, response, bos: int) -> np.ndarray:
    first = prompt[-1] if len(prompt) else bos
    return np.array([first, *response[:-1]], dtype=np.int64)


def score_sequence(model: TabularLM, prompt, response) -> ScoredResponse:
    if len(response) == 0:
        raise InvalidInput("cannot score an empty response")
    check_tokens(prompt, model.V, "prompt")
    check_tokens(response, model.V, "response")
    ctx = contexts(prompt, response, model.bos)
    tok = np.asarray(response, dtype=np.int64)
    lse = kernels.logsumexp_rows(model.theta)
    return ScoredResponse(kernels.gather_logprobs(model.theta, lse, ctx, tok))


def save_checkpoint(path, model: TabularLM, config: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "V": model.V,
        "bos": model.bos,
        "theta": [float(x) for x in model.theta.reshape(-1)],
        "config": config or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8", newline="\n")


def load_checkpoint(path) -> tuple[TabularLM, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise InvalidInput(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise InvalidInput(f"{path}: unsupported checkpoint version {doc.get('version')}")
    V = int(doc["V"])
    theta = np.array(doc["theta"], dtype=np.float64)
    if theta.shape != (V * V,):
        raise InvalidInput(f"{path}: theta has {theta.shape[0]} entries, expected {V * V}")
    return TabularLM(theta.reshape(V, V), int(doc["bos"])), doc.get("config", {})
