"""Valley statistics and the detached multiplicative gate.

Two distinct gates live here:

* :func:`gate_value` thresholds a linear-space statistic,
  ``g = sigmoid(alpha * (s - tau))``; used by the preference objectives.
* :func:`toy_gate` thresholds in log space,
  ``g = sigmoid(alpha * (log p - log tau))``; used by the logistic-regression toy.

They are never substituted for each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidInput
from .probability import ScoredResponse, lower_quantile, open_sigmoid, sigmoid


class Statistic(str, Enum):
    SEQ_MEAN = "seq"
    TOKEN_QUANTILE = "tok"


DEFAULT_TAU = {Statistic.SEQ_MEAN: 0.10, Statistic.TOKEN_QUANTILE: 0.005}
DEFAULT_ALPHA = 50.0
DEFAULT_Q = 0.10


@dataclass(frozen=True)
class GateConfig:
    statistic: Statistic = Statistic.SEQ_MEAN
    tau: float | None = None
    alpha: float = DEFAULT_ALPHA
    q: float = DEFAULT_Q

    def __post_init__(self):
        object.__setattr__(self, "statistic", Statistic(self.statistic))
        if self.tau is None:
            object.__setattr__(self, "tau", DEFAULT_TAU[self.statistic])
        if not 0.0 < self.tau < 1.0:
            raise InvalidInput(f"tau must lie in (0, 1), got {self.tau}")
        if not self.alpha > 0.0:
            raise InvalidInput(f"alpha must be positive, got {self.alpha}")
        if not 0.0 < self.q < 1.0:
            raise InvalidInput(f"q must lie in (0, 1), got {self.q}")

    @property
    def floor(self) -> float:
        """Smallest attainable gate value, sigmoid(-alpha * tau)."""
        return open_sigmoid(-self.alpha * self.tau)


@dataclass(frozen=True)
class GateResult:
    statistic_value: float
    gate_value: float
    detached: bool = True


# Gate used when an objective runs ungated.
UNGATED = GateResult(statistic_value=math.nan, gate_value=1.0, detached=True)


def seq_statistic(rejected: ScoredResponse) -> float:
    """Geometric mean of the valid token probabilities."""
    lp = rejected.valid_logprobs()
    return math.exp(math.fsum(lp) / lp.shape[0])


def tok_statistic(rejected: ScoredResponse, q: float = DEFAULT_Q) -> float:
    """Lower q-quantile of the valid token probabilities."""
    return lower_quantile(np.exp(rejected.valid_logprobs()), q)


def statistic(rejected: ScoredResponse, cfg: GateConfig) -> float:
    if cfg.statistic is Statistic.SEQ_MEAN:
        return seq_statistic(rejected)
    return tok_statistic(rejected, cfg.q)


def gate_value(s: float, cfg: GateConfig) -> GateResult:
    if not s >= 0.0:
        raise InvalidInput(f"valley statistic must be non-negative, got {s}")
    return GateResult(statistic_value=float(s), gate_value=open_sigmoid(cfg.alpha * (s - cfg.tau)))


def gate_complement(s: float, cfg: GateConfig) -> float:
    """1 - g evaluated as sigma(-alpha (s - tau)).

    The stored gate never exceeds the float just below 1, so subtracting it
    from 1 bottoms out at 2**-53; this form keeps the tail accurate.
    """
    if not s >= 0.0:
        raise InvalidInput(f"valley statistic must be non-negative, got {s}")
    return sigmoid(-cfg.alpha * (s - cfg.tau))


def compute_gate(rejected: ScoredResponse, cfg: GateConfig) -> GateResult:
    """Statistic of the rejected response followed by the gate. The result is
    a plain float and never enters any derivative."""
    return gate_value(statistic(rejected, cfg), cfg)


def toy_gate(p: float, tau: float, alpha: float) -> float:
    if not p > 0.0:
        raise InvalidInput(f"toy gate needs p > 0, got {p}")
    if not (tau > 0.0 and alpha > 0.0):
        raise InvalidInput("toy gate needs tau > 0 and alpha > 0")
    return open_sigmoid(alpha * (math.log(p) - math.log(tau)))
