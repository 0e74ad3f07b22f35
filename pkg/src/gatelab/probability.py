"""Stable probability kernels: log-softmax, sigmoid/softplus, sequence
log-probabilities and the lower order-statistic quantile.

Everything stays in natural-log space; linear probabilities are only
formed inside the gate statistics.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput, EmptyResponse, InvalidInput

log = logging.getLogger(__name__)

# exp(-745) is the smallest positive subnormal double.
LOGPROB_FLOOR = -745.0

_TINY = np.nextafter(0.0, 1.0)
_ONE_MINUS = np.nextafter(1.0, 0.0)


def log_softmax(logits) -> np.ndarray:
    """Max-shifted log-softmax of a 1-D logit vector.

    Raises InvalidInput for non-finite entries or fewer than two classes.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise InvalidInput(f"expected a 1-D vector with K >= 2, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInput("logits must be finite")
    shifted = z - z.max()
    return shifted - np.log(np.exp(shifted).sum())


def softmax(logits) -> np.ndarray:
    return np.exp(log_softmax(logits))


def sigmoid(x: float) -> float:
    """Logistic function, branch-stable for large |x|."""
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def open_sigmoid(x: float) -> float:
    """Logistic function clamped into the open interval (0, 1).

    float64 rounds sigma(x) to exactly 1.0 beyond x ~ 37 and to 0.0 below
    x ~ -745; clamping to the neighbouring representable values keeps the
    result strictly inside (0, 1) while staying monotone.
    """
    if x > 500.0:
        return float(_ONE_MINUS)
    if x < -500.0:
        return float(_TINY)
    return min(max(sigmoid(x), float(_TINY)), float(_ONE_MINUS))


def softplus(x: float) -> float:
    """log(1 + e^x) without overflow."""
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def entropy(p) -> float:
    """Shannon entropy in nats; zero-probability entries contribute nothing."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


@dataclass
class ScoredResponse:
    """Per-token log-probabilities of one response under one model.

    ``valid_mask`` marks non-padding positions; masked entries are ignored
    by every downstream statistic.
    """

    token_logprobs: np.ndarray
    valid_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        lp = np.array(self.token_logprobs, dtype=np.float64, copy=True).reshape(-1)
        if self.valid_mask is None:
            mask = np.ones(lp.shape[0], dtype=bool)
        else:
            mask = np.asarray(self.valid_mask, dtype=bool).reshape(-1)
        if mask.shape != lp.shape:
            raise InvalidInput("token_logprobs and valid_mask differ in length")
        valid = lp[mask]
        if np.any(np.isnan(valid)) or np.any(valid > 0):
            raise InvalidInput("valid token log-probabilities must be <= 0")
        low = mask & (lp < LOGPROB_FLOOR)
        if np.any(low):
            log.warning("clamping %d token log-probabilities to %s", int(low.sum()), LOGPROB_FLOOR)
            lp[low] = LOGPROB_FLOOR
        self.token_logprobs = lp
        self.valid_mask = mask

    @property
    def length(self) -> int:
        return int(self.token_logprobs.shape[0])

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())

    def valid_logprobs(self) -> np.ndarray:
        if self.n_valid == 0:
            raise EmptyResponse("response has no valid positions")
        return self.token_logprobs[self.valid_mask]


def sequence_logprob(resp: ScoredResponse) -> float:
    """Sum of valid token log-probabilities (correctly rounded, so the result
    does not depend on token order)."""
    return math.fsum(resp.valid_logprobs())


def lower_quantile(values, q: float) -> float:
    """Lower order statistic: sorted(values)[clamp(ceil(q*N) - 1, 0, N-1)].

    ``q*N`` is rounded to 9 decimals before the ceiling so products like
    0.1*30 = 3.0000000000000004 pick index 2, not 3.
    """
    if not 0.0 < q < 1.0:
        raise InvalidInput(f"q must lie in (0, 1), got {q}")
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    n = v.shape[0]
    if n == 0:
        raise EmptyInput("lower_quantile of an empty sequence")
    k = math.ceil(round(q * n, 9)) - 1
    return float(v[min(max(k, 0), n - 1)])
