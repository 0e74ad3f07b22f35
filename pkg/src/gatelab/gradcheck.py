"""Seeded gradient-check suites.

Scalar suite: random advantages and gate parameters, closed-form sequence
gradients against central differences evaluated with mpmath. Parameter
suite: the tabular LM's full theta gradient on a 4-pair batch against long
double central differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gate import GateConfig, Statistic, gate_value
from .lm.data import SyntheticSpec, make_synthetic_dataset, sft_initialize
from .lm.train import encode, param_gradcheck, sequence_logps
from .objectives import LossConfig, Objective, PairAdvantages, analytic_vs_numeric_grads, evaluate_pair
from .probability import ScoredResponse

SCALAR_THRESHOLD = 1e-5
PARAM_THRESHOLD = 1e-4

VARIANTS = tuple((obj, gated) for obj in Objective for gated in (False, True))


@dataclass(frozen=True)
class FuzzCase:
    delta_chosen: float
    delta_rejected: float
    s: float
    tau: float
    alpha: float
    beta: float
    n_tokens: int

    def rejected_response(self) -> ScoredResponse:
        """A response whose valid tokens all have probability s."""
        return ScoredResponse(np.full(self.n_tokens, math.log(self.s)))

    def gate(self):
        return gate_value(self.s, GateConfig(Statistic.SEQ_MEAN, self.tau, self.alpha))

    def config(self, objective, gated: bool) -> LossConfig:
        return LossConfig(objective, gated, self.beta, GateConfig(Statistic.SEQ_MEAN, self.tau, self.alpha))


def fuzz_cases(n: int = 1000, seed: int = 0) -> list[FuzzCase]:
    rng = np.random.default_rng(seed)
    dp = rng.uniform(-20, 20, n)
    dm = rng.uniform(-20, 20, n)
    s = rng.uniform(0, 1, n)
    tau = rng.uniform(1e-3, 0.5, n)
    alpha = rng.uniform(1, 100, n)
    beta = 10 ** rng.uniform(-2, 0, n)
    T = rng.integers(1, 33, n)
    # s = 0 has no finite log-probability; resample the measure-zero case
    s = np.where(s > 0, s, 0.5)
    return [FuzzCase(*map(float, row[:6]), int(row[6])) for row in zip(dp, dm, s, tau, alpha, beta, T)]


@dataclass(frozen=True)
class SuiteResult:
    name: str
    mode: str
    n: int
    max_rel_err: float
    worst_index: int
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.threshold


def scalar_suite(n: int = 1000, seed: int = 0, mode: str = "detached", h: float = 1e-5, dps: int = 50):
    """One SuiteResult per objective variant.

    ``mode="recompute"`` lets the gate follow the perturbed rejected
    response (the non-detached debug setting); gated variants then fail.
    """
    cases = fuzz_cases(n, seed)
    out = []
    for obj, gated in VARIANTS:
        worst, widx = 0.0, -1
        for i, c in enumerate(cases):
            cfg = c.config(obj, gated)
            adv = PairAdvantages.from_deltas(c.delta_chosen, c.delta_rejected)
            m = mode if gated else "detached"
            gc = analytic_vs_numeric_grads(adv, cfg, c.rejected_response(), h, mode=m, dps=dps)
            if gc.max_rel_err > worst or widx < 0:
                worst, widx = gc.max_rel_err, i
        out.append(SuiteResult(cfg.name, mode, n, worst, widx, SCALAR_THRESHOLD))
    return out


def param_suite(seed: int = 0, spec: SyntheticSpec = SyntheticSpec(), noise: float = 0.3, h: float = 1e-4):
    """Full-parameter check on a 4-pair batch (two valley, two normal pairs).

    The policy is the SFT reference plus seeded Gaussian noise, so that
    advantages are non-zero and gates differ from pair to pair.
    """
    train_pairs, _ = make_synthetic_dataset(spec, seed)
    ref = sft_initialize(spec.vocab_size, train_pairs)
    valley = [p for p in train_pairs if p.valley][:2]
    normal = [p for p in train_pairs if not p.valley][: 4 - len(valley)]
    batch = valley + normal
    theta = ref.theta + noise * np.random.default_rng(seed).standard_normal(ref.theta.shape)
    enc = encode(batch, ref.V, ref.bos)
    ref_lp = sequence_logps(ref.theta, enc)
    out = []
    for obj, gated in VARIANTS:
        r = param_gradcheck(theta, enc, ref_lp, LossConfig(obj, gated), h=h)
        out.append(SuiteResult(r.objective, "parameter", r.n_cells, r.max_rel_err, -1, PARAM_THRESHOLD))
    return out


def single_pair_report(case: FuzzCase, objective, gated: bool, h: float = 1e-5) -> dict:
    """Intermediate values of one pair: z, g, coefficient, gradients, FD."""
    cfg = case.config(objective, gated)
    adv = PairAdvantages.from_deltas(case.delta_chosen, case.delta_rejected)
    res = evaluate_pair(adv, cfg, case.rejected_response())
    gc = analytic_vs_numeric_grads(adv, cfg, case.rejected_response(), h)
    return {
        "objective": cfg.name,
        "delta_chosen": case.delta_chosen,
        "delta_rejected": case.delta_rejected,
        "s": case.s,
        "tau": case.tau,
        "alpha": case.alpha,
        "beta": case.beta,
        "z": res.z,
        "g": res.gate.gate_value,
        "c": res.grad_coeff,
        "loss": res.loss,
        "grad_chosen": res.grad_chosen,
        "grad_rejected": res.grad_rejected,
        "fd_chosen": gc.numeric_chosen,
        "fd_rejected": gc.numeric_rejected,
        "max_rel_err": gc.max_rel_err,
    }
