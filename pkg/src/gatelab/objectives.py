"""DPO, IPO and Cal-DPO with optional detached gating.

Gradients are reported at sequence log-probability granularity:
``grad_chosen = dL/dlog pi(y+|x)`` and ``grad_rejected = dL/dlog pi(y-|x)``.
The gate enters every formula as a constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import mpmath
import numpy as np

from .errors import InvalidInput
from .gate import UNGATED, GateConfig, GateResult, compute_gate, statistic
from .probability import ScoredResponse, sigmoid, softplus


class Objective(str, Enum):
    DPO = "DPO"
    IPO = "IPO"
    CALDPO = "CalDPO"


DEFAULT_BETA = {Objective.DPO: 0.1, Objective.IPO: 0.1, Objective.CALDPO: 1e-3}


@dataclass(frozen=True)
class LossConfig:
    objective: Objective = Objective.DPO
    gated: bool = False
    beta: float | None = None
    gate: GateConfig = field(default_factory=GateConfig)
    # Cal-DPO only: multiply the sigmoid argument by beta (off = formula as written).
    beta_in_sigmoid: bool = False

    def __post_init__(self):
        object.__setattr__(self, "objective", Objective(self.objective))
        if self.beta is None:
            object.__setattr__(self, "beta", DEFAULT_BETA[self.objective])
        if not self.beta > 0.0:
            raise InvalidInput(f"beta must be positive, got {self.beta}")

    @property
    def c_cal(self) -> float:
        return 1.0 / (2.0 * self.beta)

    @property
    def name(self) -> str:
        base = {"DPO": "DPO", "IPO": "IPO", "CalDPO": "Cal-DPO"}[self.objective.value]
        return f"Gate-{base}" if self.gated else base

    def ungated(self) -> "LossConfig":
        return replace(self, gated=False)


@dataclass(frozen=True)
class PairAdvantages:
    logpi_chosen: float
    logpi_rejected: float
    logref_chosen: float = 0.0
    logref_rejected: float = 0.0

    @property
    def delta_chosen(self) -> float:
        return self.logpi_chosen - self.logref_chosen

    @property
    def delta_rejected(self) -> float:
        return self.logpi_rejected - self.logref_rejected

    @classmethod
    def from_deltas(cls, delta_chosen: float, delta_rejected: float) -> "PairAdvantages":
        return cls(float(delta_chosen), float(delta_rejected), 0.0, 0.0)

    def shifted(self, d_chosen: float = 0.0, d_rejected: float = 0.0) -> "PairAdvantages":
        return replace(
            self,
            logpi_chosen=self.logpi_chosen + d_chosen,
            logpi_rejected=self.logpi_rejected + d_rejected,
        )


@dataclass(frozen=True)
class PairResult:
    """Loss, logit and sequence-level gradients for one preference pair.

    ``z`` is the argument of the sigmoid (DPO, Cal-DPO) or of the square
    (IPO). ``grad_coeff`` is ``beta * (1 - sigmoid(z))`` for DPO,
    ``-grad_chosen`` for IPO and the logistic part ``1 - sigmoid(z)``
    (times beta when ``beta_in_sigmoid``) for Cal-DPO.
    """

    z: float
    loss: float
    grad_coeff: float
    grad_chosen: float
    grad_rejected: float
    gate: GateResult


@dataclass(frozen=True)
class BatchResult:
    pairs: tuple

    @property
    def loss(self) -> float:
        # correctly rounded, hence independent of evaluation order
        return math.fsum(p.loss for p in self.pairs) / len(self.pairs)

    @property
    def gate_values(self) -> np.ndarray:
        return np.array([p.gate.gate_value for p in self.pairs])


# --- loss values, generic over the arithmetic -------------------------------
#
# ``m`` is any namespace providing ``exp`` and ``log1p``: ``math`` for the
# float64 path, ``numpy`` for extended-precision arrays/scalars, or
# ``mpmath.mp`` for the high-precision finite-difference oracle.


def _softplus_m(x, m):
    return (x if x > 0 else 0 * x) + m.log1p(m.exp(-abs(x)))


def loss_value(objective, delta_chosen, delta_rejected, g, beta, beta_in_sigmoid=False, m=math):
    objective = Objective(objective)
    gd = g * delta_rejected
    if objective is Objective.DPO:
        return _softplus_m(-(beta * (delta_chosen - gd)), m)
    if objective is Objective.IPO:
        r = beta * (delta_chosen - gd) - 1 / (2 * beta)
        return r * r
    c = 1 / (2 * beta)
    u = delta_chosen - gd
    if beta_in_sigmoid:
        u = beta * u
    return _softplus_m(-u, m) + (delta_chosen - c) ** 2 + (gd + c) ** 2


# --- closed-form results ----------------------------------------------------


def gated_logit(adv: PairAdvantages, g: float, beta: float) -> float:
    if not 0.0 < g <= 1.0:
        raise InvalidInput(f"gate must lie in (0, 1], got {g}")
    z = beta * (adv.delta_chosen - g * adv.delta_rejected)
    if not math.isfinite(z):
        raise InvalidInput("non-finite gated logit")
    return z


def _resolve_gate(cfg: LossConfig, rejected_resp, gate) -> GateResult:
    if gate is not None:
        return gate if isinstance(gate, GateResult) else GateResult(math.nan, float(gate))
    if not cfg.gated:
        return UNGATED
    if rejected_resp is None:
        raise InvalidInput("a gated objective needs the scored rejected response")
    return compute_gate(rejected_resp, cfg.gate)


def _check(cfg: LossConfig, expected: Objective):
    if cfg.objective is not expected:
        raise InvalidInput(f"config objective is {cfg.objective.value}, expected {expected.value}")


def dpo_family_loss(adv, cfg, rejected_resp=None, *, gate=None) -> PairResult:
    """-log sigmoid(z) with z the (gated) DPO logit."""
    _check(cfg, Objective.DPO)
    gr = _resolve_gate(cfg, rejected_resp, gate)
    g = gr.gate_value
    z = gated_logit(adv, g, cfg.beta)
    c = cfg.beta * sigmoid(-z)
    return PairResult(z=z, loss=softplus(-z), grad_coeff=c, grad_chosen=-c, grad_rejected=g * c, gate=gr)


def ipo_family_loss(adv, cfg, rejected_resp=None, *, gate=None) -> PairResult:
    _check(cfg, Objective.IPO)
    gr = _resolve_gate(cfg, rejected_resp, gate)
    g = gr.gate_value
    z = gated_logit(adv, g, cfg.beta)
    r = z - 1.0 / (2.0 * cfg.beta)
    d_chosen = 2.0 * r * cfg.beta
    return PairResult(
        z=z, loss=r * r, grad_coeff=-d_chosen, grad_chosen=d_chosen, grad_rejected=-d_chosen * g, gate=gr
    )


def caldpo_family_loss(adv, cfg, rejected_resp=None, *, gate=None) -> PairResult:
    _check(cfg, Objective.CALDPO)
    gr = _resolve_gate(cfg, rejected_resp, gate)
    g = gr.gate_value
    if not 0.0 < g <= 1.0:
        raise InvalidInput(f"gate must lie in (0, 1], got {g}")
    c = cfg.c_cal
    dp, gd = adv.delta_chosen, g * adv.delta_rejected
    scale = cfg.beta if cfg.beta_in_sigmoid else 1.0
    u = scale * (dp - gd)
    logistic = scale * sigmoid(-u)
    loss = softplus(-u) + (dp - c) ** 2 + (gd + c) ** 2
    return PairResult(
        z=u,
        loss=loss,
        grad_coeff=logistic,
        grad_chosen=-logistic + 2.0 * (dp - c),
        grad_rejected=g * logistic + 2.0 * g * (gd + c),
        gate=gr,
    )


_FAMILY = {
    Objective.DPO: dpo_family_loss,
    Objective.IPO: ipo_family_loss,
    Objective.CALDPO: caldpo_family_loss,
}


def evaluate_pair(adv, cfg: LossConfig, rejected_resp=None, *, gate=None) -> PairResult:
    return _FAMILY[cfg.objective](adv, cfg, rejected_resp, gate=gate)


def evaluate_batch(advs: Sequence[PairAdvantages], cfg: LossConfig, rejected_resps=None, gates=None) -> BatchResult:
    """One gate per pair; the minibatch loss is the mean over pairs."""
    n = len(advs)
    if n == 0:
        raise InvalidInput("empty batch")
    rejected_resps = rejected_resps if rejected_resps is not None else [None] * n
    gates = gates if gates is not None else [None] * n
    return BatchResult(
        tuple(evaluate_pair(a, cfg, r, gate=g) for a, r, g in zip(advs, rejected_resps, gates))
    )


# --- finite-difference probe ------------------------------------------------


@dataclass(frozen=True)
class GradCheck:
    analytic_chosen: float
    analytic_rejected: float
    numeric_chosen: float
    numeric_rejected: float
    gate_value: float
    mode: str

    @staticmethod
    def _rel(a, n):
        denom = max(abs(a), abs(n))
        return 0.0 if denom == 0.0 else abs(a - n) / denom

    @property
    def rel_err_chosen(self) -> float:
        return self._rel(self.analytic_chosen, self.numeric_chosen)

    @property
    def rel_err_rejected(self) -> float:
        return self._rel(self.analytic_rejected, self.numeric_rejected)

    @property
    def max_rel_err(self) -> float:
        return max(self.rel_err_chosen, self.rel_err_rejected)


def analytic_vs_numeric_grads(
    adv: PairAdvantages,
    cfg: LossConfig,
    rejected_resp: ScoredResponse | None = None,
    h: float = 1e-5,
    *,
    gate=None,
    mode: str = "detached",
    dps: int | None = 50,
) -> GradCheck:
    """Central differences of the loss in ``logpi_chosen`` and ``logpi_rejected``.

    ``mode="detached"`` holds the gate fixed across the perturbation, which is
    what the closed-form gradients assume. ``mode="recompute"`` re-derives the
    valley statistic from the perturbed rejected response (each valid token
    shifted by h/T), exposing the extra term a live gate would contribute.

    With ``dps`` set, losses are evaluated with mpmath at that many digits;
    ``dps=None`` runs the same formulas in float64.
    """
    if not 1e-7 <= h <= 1e-3:
        raise InvalidInput(f"h must lie in [1e-7, 1e-3], got {h}")
    if mode not in ("detached", "recompute"):
        raise InvalidInput(f"unknown mode {mode!r}")
    analytic = evaluate_pair(adv, cfg, rejected_resp, gate=gate)
    g0 = analytic.gate.gate_value

    if mode == "recompute":
        if not cfg.gated or rejected_resp is None:
            raise InvalidInput("recompute mode needs a gated config and a rejected response")
        s0 = statistic(rejected_resp, cfg.gate)
        n_tok = rejected_resp.n_valid

    def run(m, to_num):
        dp0, dm0 = to_num(adv.delta_chosen), to_num(adv.delta_rejected)
        beta, step = to_num(cfg.beta), to_num(h)

        def gate_at(shift):
            if mode == "detached":
                return to_num(g0)
            # a uniform per-token shift of shift/T scales every token probability,
            # and therefore either statistic, by exp(shift/T)
            s = to_num(s0) * m.exp(shift / n_tok)
            x = to_num(cfg.gate.alpha) * (s - to_num(cfg.gate.tau))
            return 1 / (1 + m.exp(-x))

        def f(dp, dm, g):
            return loss_value(cfg.objective, dp, dm, g, beta, cfg.beta_in_sigmoid, m)

        fd_c = (f(dp0 + step, dm0, gate_at(0)) - f(dp0 - step, dm0, gate_at(0))) / (2 * step)
        fd_r = (f(dp0, dm0 + step, gate_at(step)) - f(dp0, dm0 - step, gate_at(-step))) / (2 * step)
        return float(fd_c), float(fd_r)

    if dps is None:
        fd_c, fd_r = run(math, float)
    else:
        with mpmath.workdps(dps):
            fd_c, fd_r = run(mpmath.mp, mpmath.mpf)
    return GradCheck(
        analytic_chosen=analytic.grad_chosen,
        analytic_rejected=analytic.grad_rejected,
        numeric_chosen=fd_c,
        numeric_rejected=fd_r,
        gate_value=g0,
        mode=mode,
    )
