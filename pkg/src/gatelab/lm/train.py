"""Preference training of the tabular LM, evaluation records and sweeps.

Per minibatch: score chosen and rejected responses under the policy, form
the advantages against the frozen reference, compute one detached gate per
pair, evaluate the objective, then distribute the sequence-level gradient
coefficients onto theta through the softmax Jacobian of every visited
(context, token) cell. The minibatch loss is the mean over its pairs.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import kernels
from ..errors import Divergence, InvalidConfig, InvalidInput
from ..gate import GateConfig, compute_gate
from ..objectives import BatchResult, LossConfig, Objective, PairAdvantages, evaluate_batch, loss_value
from ..probability import ScoredResponse, sequence_logprob
from .model import TabularLM, contexts


# Cal-DPO's calibration terms have gradients of order 1/beta, about 1000x the
# DPO coefficient at default betas, so its SGD step is scaled down to match.
DEFAULT_LR = {Objective.DPO: 5e-2, Objective.IPO: 5e-2, Objective.CALDPO: 5e-3}


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "sgd"
    lr: float | None = None  # None: per-objective default from DEFAULT_LR
    batch_size: int = 4
    epochs: int = 5
    decay: float = 0.99
    eps: float = 1e-8
    shuffle: bool = True

    def __post_init__(self):
        if self.name not in ("sgd", "rmsprop"):
            raise InvalidConfig(f"unknown optimizer {self.name!r}; expected 'sgd' or 'rmsprop'")
        if (self.lr is not None and not self.lr > 0) or self.batch_size < 1 or self.epochs < 0:
            raise InvalidConfig("need lr > 0, batch_size >= 1, epochs >= 0")
        if not 0.0 <= self.decay < 1.0 or not self.eps > 0:
            raise InvalidConfig("need 0 <= decay < 1 and eps > 0")

    def resolve(self, objective) -> "OptimizerConfig":
        if self.lr is not None:
            return self
        return replace(self, lr=DEFAULT_LR[Objective(objective)])


@dataclass(frozen=True)
class TrainRecord:
    epoch: int
    mean_loss: float
    mean_gate: float
    gated_fraction: float
    delta_logpi_chosen: float
    delta_logpi_rejected: float
    argmax_mass_delta: float
    others_mass_delta: float


RECORD_FIELDS = tuple(TrainRecord.__dataclass_fields__)


@dataclass(frozen=True)
class EncodedPair:
    pair_id: str
    c_ctx: np.ndarray
    c_tok: np.ndarray
    r_ctx: np.ndarray
    r_tok: np.ndarray


def encode(pairs, V: int, bos: int = 0) -> list[EncodedPair]:
    out = []
    for p in pairs:
        p.validate(V)
        out.append(
            EncodedPair(
                p.pair_id,
                contexts(p.prompt, p.chosen, bos),
                np.asarray(p.chosen, dtype=np.int64),
                contexts(p.prompt, p.rejected, bos),
                np.asarray(p.rejected, dtype=np.int64),
            )
        )
    return out


def sequence_logps(theta, enc: list[EncodedPair]) -> np.ndarray:
    """(n, 2) array of chosen / rejected sequence log-probabilities."""
    lse = kernels.logsumexp_rows(theta)
    out = np.empty((len(enc), 2))
    for i, e in enumerate(enc):
        out[i, 0] = math.fsum(kernels.gather_logprobs(theta, lse, e.c_ctx, e.c_tok))
        out[i, 1] = math.fsum(kernels.gather_logprobs(theta, lse, e.r_ctx, e.r_tok))
    return out


def batch_loss_and_grad(theta, enc, ref_lp, cfg: LossConfig, gates=None) -> tuple[BatchResult, np.ndarray]:
    """Mean minibatch loss and its gradient with respect to theta.

    ``gates`` overrides the per-pair gate (floats or GateResults); by default
    each gate is computed from the rejected response under ``theta`` and
    treated as a constant.
    """
    lse = kernels.logsumexp_rows(theta)
    advs, rejected = [], []
    for e, (ref_c, ref_r) in zip(enc, ref_lp):
        sc = ScoredResponse(kernels.gather_logprobs(theta, lse, e.c_ctx, e.c_tok))
        sr = ScoredResponse(kernels.gather_logprobs(theta, lse, e.r_ctx, e.r_tok))
        advs.append(PairAdvantages(sequence_logprob(sc), sequence_logprob(sr), float(ref_c), float(ref_r)))
        rejected.append(sr)
    res = evaluate_batch(advs, cfg, rejected if cfg.gated else None, gates)

    n = len(enc)
    ctx, tok, w = [], [], []
    for e, pr in zip(enc, res.pairs):
        ctx += [e.c_ctx, e.r_ctx]
        tok += [e.c_tok, e.r_tok]
        w += [np.full(e.c_tok.shape[0], pr.grad_chosen / n), np.full(e.r_tok.shape[0], pr.grad_rejected / n)]
    grad = np.zeros_like(theta)
    kernels.accumulate_grad(theta, lse, np.concatenate(ctx), np.concatenate(tok), np.concatenate(w), grad)
    return res, grad


def batch_loss_generic(theta, enc, ref_lp, cfg: LossConfig, gate_values):
    """Mean minibatch loss in the dtype of ``theta`` (e.g. np.longdouble).

    Independent of the kernels and of the analytic gradient formulas; used
    as the finite-difference oracle. Gates are fixed inputs.
    """
    m = theta.max(axis=1, keepdims=True)
    lsm = theta - (m + np.log(np.exp(theta - m).sum(axis=1, keepdims=True)))
    total = theta.dtype.type(0)
    for e, (ref_c, ref_r), g in zip(enc, ref_lp, gate_values):
        dp = lsm[e.c_ctx, e.c_tok].sum() - theta.dtype.type(ref_c)
        dm = lsm[e.r_ctx, e.r_tok].sum() - theta.dtype.type(ref_r)
        total = total + loss_value(
            cfg.objective, dp, dm, theta.dtype.type(g), theta.dtype.type(cfg.beta), cfg.beta_in_sigmoid, m=np
        )
    return total / len(enc)


@dataclass(frozen=True)
class ParamGradCheck:
    objective: str
    n_cells: int
    max_rel_err: float
    worst_cell: tuple


# Cells whose exact gradient cancels to zero would otherwise compare FD
# roundoff against 0; they are judged against this fraction of max|grad|.
ZERO_CELL_FLOOR = 1e-8


def _rel(a, n, floor=0.0):
    d = max(abs(a), abs(n), floor)
    return 0.0 if d == 0 else abs(a - n) / d


def param_gradcheck(theta, enc, ref_lp, cfg: LossConfig, h: float = 1e-4) -> ParamGradCheck:
    """Central differences in long double over every cell of every row visited
    by the batch, gates held at their values at ``theta``."""
    res, grad = batch_loss_and_grad(theta, enc, ref_lp, cfg)
    floor = ZERO_CELL_FLOOR * float(np.abs(grad).max())
    gvals = [p.gate.gate_value for p in res.pairs]
    rows = sorted({int(c) for e in enc for c in (*e.c_ctx, *e.r_ctx)})
    base = theta.astype(np.longdouble)
    hh = np.longdouble(h)
    worst, worst_cell = 0.0, None
    for r in rows:
        for c in range(theta.shape[1]):
            old = base[r, c]
            base[r, c] = old + hh
            up = batch_loss_generic(base, enc, ref_lp, cfg, gvals)
            base[r, c] = old - hh
            dn = batch_loss_generic(base, enc, ref_lp, cfg, gvals)
            base[r, c] = old
            err = _rel(float(grad[r, c]), float((up - dn) / (2 * hh)), floor)
            if worst_cell is None or err > worst:
                worst, worst_cell = err, (r, c)
    return ParamGradCheck(cfg.name, len(rows) * theta.shape[1], worst, worst_cell)


class Optimizer:
    def __init__(self, cfg: OptimizerConfig, shape):
        if cfg.lr is None:
            raise InvalidConfig("optimizer learning rate is unresolved")
        self.cfg = cfg
        self.v = np.zeros(shape) if cfg.name == "rmsprop" else None

    def step(self, theta, grad) -> None:
        c = self.cfg
        if c.name == "sgd":
            theta -= c.lr * grad
        else:
            self.v *= c.decay
            self.v += (1.0 - c.decay) * grad * grad
            theta -= c.lr * grad / (np.sqrt(self.v) + c.eps)


# --- evaluation -------------------------------------------------------------


def context_mass(model: TabularLM, pairs) -> dict:
    """Per-context mass breakdown over the chosen positions of ``pairs``.

    At chosen position t the context is the chosen prefix; the 'rejected
    token' is the rejected response's token at t (if the response is that
    long). 'others' sums every remaining token explicitly.
    """
    probs = model.probs()
    chosen, rejected, others, top = [], [], [], []
    for p in pairs:
        ctx = contexts(p.prompt, p.chosen, model.bos)
        for t, c in enumerate(ctx):
            row = probs[c]
            ct = p.chosen[t]
            rt = p.rejected[t] if t < len(p.rejected) else ct
            keep = np.ones(row.shape[0], dtype=bool)
            keep[ct] = False
            keep[rt] = False
            chosen.append(row[ct])
            rejected.append(row[rt] if rt != ct else 0.0)
            others.append(math.fsum(row[keep]))
            top.append(row.max())
    return {k: np.array(v) for k, v in (("chosen", chosen), ("rejected", rejected), ("others", others), ("argmax", top))}


def evaluate(model: TabularLM, reference: TabularLM, pairs, cfg: LossConfig, epoch: int, ref_mass=None) -> TrainRecord:
    enc = encode(pairs, model.V, model.bos)
    ref_lp = sequence_logps(reference.theta, enc)
    res, _ = batch_loss_and_grad(model.theta, enc, ref_lp, cfg)
    lp = sequence_logps(model.theta, enc)
    g = res.gate_values
    ref_mass = ref_mass or context_mass(reference, pairs)
    mass = context_mass(model, pairs)
    n = len(pairs)
    return TrainRecord(
        epoch=epoch,
        mean_loss=res.loss,
        mean_gate=math.fsum(g) / n,
        gated_fraction=float(np.count_nonzero(g < 0.5)) / n,
        delta_logpi_chosen=math.fsum(lp[:, 0] - ref_lp[:, 0]) / n,
        delta_logpi_rejected=math.fsum(lp[:, 1] - ref_lp[:, 1]) / n,
        argmax_mass_delta=float(mass["argmax"].mean() - ref_mass["argmax"].mean()),
        others_mass_delta=float(mass["others"].mean() - ref_mass["others"].mean()),
    )


# --- training ---------------------------------------------------------------


@dataclass
class TrainResult:
    model: TabularLM
    records: list = field(default_factory=list)


def train(
    reference: TabularLM,
    train_pairs,
    eval_pairs,
    cfg: LossConfig,
    opt: OptimizerConfig = OptimizerConfig(),
    seed: int = 0,
    epochs: int | None = None,
) -> TrainResult:
    """Train a copy of ``reference``; one TrainRecord per epoch on ``eval_pairs``."""
    if not train_pairs:
        raise InvalidInput("training set is empty")
    opt = opt.resolve(cfg.objective)
    epochs = opt.epochs if epochs is None else epochs
    ref_hash = reference.fingerprint()
    model = reference.copy()
    enc = encode(train_pairs, model.V, model.bos)
    ref_lp = sequence_logps(reference.theta, enc)
    ref_mass = context_mass(reference, eval_pairs) if eval_pairs else None
    optim = Optimizer(opt, model.theta.shape)
    rng = np.random.default_rng(seed)
    records = []
    for epoch in range(epochs):
        order = rng.permutation(len(enc)) if opt.shuffle else np.arange(len(enc))
        for b, start in enumerate(range(0, len(order), opt.batch_size)):
            idx = order[start : start + opt.batch_size]
            res, grad = batch_loss_and_grad(model.theta, [enc[i] for i in idx], ref_lp[idx], cfg)
            if not (math.isfinite(res.loss) and np.all(np.isfinite(grad))):
                raise Divergence(
                    f"non-finite loss at epoch {epoch}, batch {b}",
                    snapshot={
                        "epoch": epoch,
                        "batch": b,
                        "pair_ids": [enc[i].pair_id for i in idx],
                        "loss": repr(res.loss),
                        "gates": [p.gate.gate_value for p in res.pairs],
                        "theta_max_abs": float(np.nanmax(np.abs(model.theta))),
                    },
                )
            optim.step(model.theta, grad)
        if eval_pairs:
            records.append(evaluate(model, reference, eval_pairs, cfg, epoch, ref_mass))
    if reference.fingerprint() != ref_hash:
        raise RuntimeError("reference model changed during training")
    return TrainResult(model, records)


# --- sweeps -----------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    param: str
    value: float
    delta_chosen: float
    delta_rejected: float
    gated_fraction: float
    mean_gate: float
    final_gated_fraction: float
    final_mean_gate: float
    records: tuple = ()

    def row(self) -> dict:
        d = asdict(self)
        d.pop("records")
        return d


def initial_gate_profile(reference: TabularLM, pairs, gate: GateConfig) -> tuple[float, float]:
    """(gated_fraction, mean_gate) of ``pairs`` under the reference model."""
    enc = encode(pairs, reference.V, reference.bos)
    lse = kernels.logsumexp_rows(reference.theta)
    g = np.array(
        [
            compute_gate(ScoredResponse(kernels.gather_logprobs(reference.theta, lse, e.r_ctx, e.r_tok)), gate).gate_value
            for e in enc
        ]
    )
    return float(np.count_nonzero(g < 0.5)) / len(g), math.fsum(g) / len(g)


def sweep(
    param: str,
    grid,
    base: LossConfig,
    reference: TabularLM,
    train_pairs,
    eval_pairs,
    opt: OptimizerConfig = OptimizerConfig(),
    seed: int = 0,
    threads: int = 1,
) -> list[SweepRow]:
    """One gated training run per grid value from the same reference and seed.

    ``gated_fraction``/``mean_gate`` profile the training pairs under the
    shared starting model (what the threshold selects); the ``final_``
    columns come from the last epoch's evaluation record.
    """
    if param not in ("tau", "alpha"):
        raise InvalidInput(f"sweep parameter must be 'tau' or 'alpha', got {param!r}")
    grid = [float(v) for v in grid]
    if not grid:
        raise InvalidInput("sweep grid is empty")

    def point(v):
        cfg = replace(base, gated=True, gate=replace(base.gate, **{param: v}))
        frac, mg = initial_gate_profile(reference, train_pairs, cfg.gate)
        recs = train(reference, train_pairs, eval_pairs, cfg, opt, seed).records
        last = recs[-1] if recs else None
        return SweepRow(
            param,
            v,
            last.delta_logpi_chosen if last else 0.0,
            last.delta_logpi_rejected if last else 0.0,
            frac,
            mg,
            last.gated_fraction if last else frac,
            last.mean_gate if last else mg,
            tuple(recs),
        )

    if threads <= 1:
        return [point(v) for v in grid]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(point, grid))
