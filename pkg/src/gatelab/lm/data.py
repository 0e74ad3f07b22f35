"""Preference pairs: JSONL I/O and a seeded synthetic benchmark.

Synthetic vocabulary layout: token ``bos`` (0), then ``n_content`` content
tokens, then the remaining rare tokens. A random bigram teacher over content
tokens generates chosen responses. Normal rejected responses are a second
teacher sample; valley rejected responses put rare tokens on every even
position, so after SFT on chosen responses their probability starts far
below the gate threshold.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InvalidInput, InvalidSpec
from .. import kernels
from .model import TabularLM, check_tokens, contexts


@dataclass(frozen=True)
class PreferencePair:
    prompt: tuple
    chosen: tuple
    rejected: tuple
    pair_id: str = ""
    valley: bool = False

    def __post_init__(self):
        for name in ("prompt", "chosen", "rejected"):
            object.__setattr__(self, name, tuple(int(t) for t in getattr(self, name)))
        if not self.chosen or not self.rejected:
            raise InvalidInput(f"pair {self.pair_id!r}: responses must be non-empty")

    def validate(self, V: int) -> None:
        check_tokens(self.prompt, V, f"prompt of {self.pair_id!r}")
        check_tokens(self.chosen, V, f"chosen of {self.pair_id!r}")
        check_tokens(self.rejected, V, f"rejected of {self.pair_id!r}")


def load_pairs_jsonl(path) -> list[PreferencePair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                pairs.append(
                    PreferencePair(
                        rec["prompt"], rec["chosen"], rec["rejected"], str(rec.get("pair_id", f"line{lineno}"))
                    )
                )
            except (KeyError, TypeError, json.JSONDecodeError) as e:
                raise InvalidInput(f"{path}:{lineno}: malformed pair record ({e})") from e
    return pairs


def save_pairs_jsonl(path, pairs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in pairs:
            rec = {"pair_id": p.pair_id, "prompt": list(p.prompt), "chosen": list(p.chosen), "rejected": list(p.rejected)}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


@dataclass(frozen=True)
class SyntheticSpec:
    vocab_size: int = 24
    n_pairs: int = 200
    prompt_len: int = 3
    response_len: int = 6
    valley_fraction: float = 0.4
    n_content: int = 12
    branching: int = 4
    dominant_prob: float = 0.4
    eval_fraction: float = 0.2
    bos: int = 0

    @property
    def n_rare(self) -> int:
        return self.vocab_size - 1 - self.n_content

    def check(self) -> None:
        if self.bos != 0:
            raise InvalidSpec("synthetic layout reserves token 0 for bos")
        if self.n_content < 1 or self.n_rare < 0:
            raise InvalidSpec(f"need 1 <= n_content <= V-1, got n_content={self.n_content}, V={self.vocab_size}")
        if not 1 <= self.branching <= self.n_content:
            raise InvalidSpec("branching must lie in [1, n_content]")
        if not 0.0 < self.dominant_prob <= 1.0 or (self.branching == 1 and self.dominant_prob != 1.0):
            raise InvalidSpec("dominant_prob must lie in (0, 1] (exactly 1 when branching = 1)")
        if self.n_pairs < 2 or self.response_len < 1 or self.prompt_len < 1:
            raise InvalidSpec("need n_pairs >= 2, response_len >= 1, prompt_len >= 1")
        if not 0.0 <= self.valley_fraction <= 1.0:
            raise InvalidSpec("valley_fraction must lie in [0, 1]")
        if self.valley_fraction > 0 and self.n_rare < 1:
            raise InvalidSpec(
                f"valley_fraction={self.valley_fraction} needs rare tokens but V={self.vocab_size} "
                f"leaves none after bos and {self.n_content} content tokens"
            )
        if not 0.0 < self.eval_fraction < 1.0:
            raise InvalidSpec("eval_fraction must lie in (0, 1)")
        if self.n_content**self.prompt_len < self.n_pairs:
            raise InvalidSpec("too few distinct prompts for n_pairs; raise prompt_len or n_content")

    @property
    def n_eval(self) -> int:
        return min(max(int(round(self.eval_fraction * self.n_pairs)), 1), self.n_pairs - 1)


def teacher_table(spec: SyntheticSpec, rng) -> dict:
    """Context -> (next tokens, probabilities) for bos and every content token."""
    content = np.arange(1, spec.n_content + 1)
    probs = np.full(spec.branching, (1.0 - spec.dominant_prob) / max(spec.branching - 1, 1))
    probs[0] = spec.dominant_prob
    return {int(c): (rng.choice(content, spec.branching, replace=False), probs) for c in [spec.bos, *content]}


def _sample(teacher, ctx: int, n: int, rng) -> list[int]:
    out = []
    for _ in range(n):
        toks, pr = teacher[ctx]
        ctx = int(rng.choice(toks, p=pr))
        out.append(ctx)
    return out


def _distinct_prompts(spec: SyntheticSpec, rng) -> list[list[int]]:
    codes = rng.choice(spec.n_content**spec.prompt_len, spec.n_pairs, replace=False)
    prompts = []
    for code in codes:
        digits = []
        for _ in range(spec.prompt_len):
            code, d = divmod(int(code), spec.n_content)
            digits.append(d + 1)
        prompts.append(digits)
    return prompts


def make_synthetic_dataset(spec: SyntheticSpec, seed: int = 0) -> tuple[list[PreferencePair], list[PreferencePair]]:
    """Deterministic (train, eval) split; every prompt is used by one pair only,
    so the two splits never share a prompt."""
    spec.check()
    rng = np.random.default_rng(seed)
    teacher = teacher_table(spec, rng)
    rare = np.arange(spec.n_content + 1, spec.vocab_size)
    content = np.arange(1, spec.n_content + 1)
    prompts = _distinct_prompts(spec, rng)
    n_valley = int(round(spec.valley_fraction * spec.n_pairs))
    valley_ids = set(rng.permutation(spec.n_pairs)[:n_valley].tolist())

    pairs = []
    for i, prompt in enumerate(prompts):
        chosen = _sample(teacher, prompt[-1], spec.response_len, rng)
        if i in valley_ids:
            rejected = [
                int(rng.choice(rare)) if t % 2 == 0 else int(rng.choice(content)) for t in range(spec.response_len)
            ]
        else:
            rejected = _sample(teacher, prompt[-1], spec.response_len, rng)
        pairs.append(PreferencePair(prompt, chosen, rejected, f"p{i:05d}", valley=i in valley_ids))

    order = rng.permutation(spec.n_pairs)
    pairs = [pairs[i] for i in order]
    n_eval = spec.n_eval
    return pairs[n_eval:], pairs[:n_eval]


def sft_initialize(V: int, pairs, epochs: int = 3, lr: float = 0.5, bos: int = 0) -> TabularLM:
    """Per-sequence maximum-likelihood SGD on chosen responses from theta = 0."""
    model = TabularLM.uniform(V, bos)
    theta = model.theta
    for _ in range(epochs):
        for p in pairs:
            ctx = contexts(p.prompt, p.chosen, bos)
            tok = np.asarray(p.chosen, dtype=np.int64)
            grad = np.zeros_like(theta)
            lse = kernels.logsumexp_rows(theta)
            # accumulate_grad adds w * (e_tok - softmax): the log-likelihood ascent direction
            kernels.accumulate_grad(theta, lse, ctx, tok, np.ones(tok.shape[0]), grad)
            theta += lr * grad
    return model


def spec_dict(spec: SyntheticSpec) -> dict:
    return asdict(spec)


def eval_variants(eval_pairs, V: int, seed: int = 0) -> list[dict]:
    """Scoring variants for each evaluation pair.

    ``chosen``/``rejected`` are the pair's responses; ``random_permute`` is a
    seeded shuffle of the chosen tokens; ``random_nonhum`` draws uniform
    non-bos tokens of the chosen length. Records use the massdyn variant
    schema (prompt_id, variant, prompt, tokens).
    """
    rng = np.random.default_rng(seed)
    out = []
    for p in eval_pairs:
        L = len(p.chosen)
        base = {"prompt_id": p.pair_id, "prompt": list(p.prompt)}
        out.append({**base, "variant": "chosen", "tokens": list(p.chosen)})
        out.append({**base, "variant": "rejected", "tokens": list(p.rejected)})
        out.append({**base, "variant": "random_permute", "tokens": [int(t) for t in rng.permutation(p.chosen)]})
        out.append({**base, "variant": "random_nonhum", "tokens": [int(t) for t in rng.integers(1, V, L)]})
    return out
