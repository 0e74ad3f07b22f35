"""Mass-dynamics evaluation: score response variants under a reference and a
policy model and aggregate the log-probability shifts per variant group.

Groups: every ``chosen*`` label is a preferred variant, ``rejected`` and
``reject*`` are dispreferred, ``irr*`` and ``random*`` are unrelated text.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum

from .errors import InvalidInput, MissingVariant
from .lm.model import TabularLM, score_sequence
from .probability import sequence_logprob


class Category(str, Enum):
    CHOSEN = "ChosenSet"
    REJECTED = "RejectedSet"
    OTHER = "OtherSet"


VARIANT_CATEGORY = {
    "chosen": Category.CHOSEN,
    "chosen_initial": Category.CHOSEN,
    "chosen_selfr": Category.CHOSEN,
    "chosen_gptsemantic": Category.CHOSEN,
    "chosen_gptformat": Category.CHOSEN,
    "rejected": Category.REJECTED,
    "reject_gptsemantic": Category.REJECTED,
    "reject_gptformat": Category.REJECTED,
    "irr_train": Category.OTHER,
    "irr_test": Category.OTHER,
    "irr_hum": Category.OTHER,
    "random_permute": Category.OTHER,
    "random_nonhum": Category.OTHER,
}
VARIANT_LABELS = tuple(VARIANT_CATEGORY)


def category_of(label: str) -> Category:
    try:
        return VARIANT_CATEGORY[label]
    except KeyError:
        raise InvalidInput(f"unknown variant label {label!r}; expected one of {', '.join(VARIANT_LABELS)}") from None


@dataclass(frozen=True)
class Variant:
    prompt_id: str
    variant: str
    prompt: tuple
    tokens: tuple

    def __post_init__(self):
        category_of(self.variant)
        object.__setattr__(self, "prompt", tuple(int(t) for t in self.prompt))
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if not self.tokens:
            raise InvalidInput(f"variant {self.variant!r} of prompt {self.prompt_id!r} has no tokens")


@dataclass(frozen=True)
class MassDynRecord:
    prompt_id: str
    variant_label: str
    tokens: tuple
    logp_ref: float
    logp_policy: float

    def __post_init__(self):
        category_of(self.variant_label)
        if not (self.logp_ref <= 0.0 and self.logp_policy <= 0.0):
            raise InvalidInput("log-probabilities must be <= 0")

    @property
    def category(self) -> Category:
        return VARIANT_CATEGORY[self.variant_label]

    @property
    def delta(self) -> float:
        return self.logp_policy - self.logp_ref


@dataclass(frozen=True)
class MassDynReport:
    delta_chosen: float
    delta_others: float
    delta_margin: float
    per_variant: dict
    counts: dict
    n_prompts: int


def load_variants(path) -> list[Variant]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(Variant(str(rec["prompt_id"]), rec["variant"], rec["prompt"], rec["tokens"]))
            except (KeyError, TypeError, json.JSONDecodeError) as e:
                raise InvalidInput(f"{path}:{lineno}: malformed variant record ({e})") from e
            except InvalidInput as e:
                raise InvalidInput(f"{path}:{lineno}: {e}") from e
    return out


def save_variants(path, variants) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for v in variants:
            v = v if isinstance(v, dict) else v.__dict__
            rec = {k: (list(v[k]) if k in ("prompt", "tokens") else v[k]) for k in ("prompt_id", "variant", "prompt", "tokens")}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def score_variants(policy: TabularLM, reference: TabularLM, variants) -> list[MassDynRecord]:
    """Read-only: both models are only scored, never modified."""
    if policy.V != reference.V:
        raise InvalidInput(f"policy V={policy.V} and reference V={reference.V} differ")
    out = []
    for v in variants:
        if isinstance(v, dict):
            v = Variant(v["prompt_id"], v["variant"], v["prompt"], v["tokens"])
        out.append(
            MassDynRecord(
                v.prompt_id,
                v.variant,
                v.tokens,
                sequence_logprob(score_sequence(reference, v.prompt, v.tokens)),
                sequence_logprob(score_sequence(policy, v.prompt, v.tokens)),
            )
        )
    return out


def _mean(xs) -> float:
    return math.fsum(xs) / len(xs) if xs else math.nan


def aggregate(records, canonical_only: bool = False) -> MassDynReport:
    """Unweighted means of policy-minus-reference log-probabilities.

    ``canonical_only`` restricts the preferred group to the ``chosen`` label.
    The margin always uses the canonical chosen/rejected of each prompt.
    """
    records = sorted(records, key=lambda r: r.prompt_id)
    by_prompt = defaultdict(dict)
    per_variant = defaultdict(list)
    chosen, others = [], []
    for r in records:
        per_variant[r.variant_label].append(r.delta)
        if r.category is Category.CHOSEN and (not canonical_only or r.variant_label == "chosen"):
            chosen.append(r.delta)
        elif r.category is Category.OTHER:
            others.append(r.delta)
        if r.variant_label in ("chosen", "rejected"):
            if r.variant_label in by_prompt[r.prompt_id]:
                raise InvalidInput(f"prompt {r.prompt_id!r} has more than one {r.variant_label!r} record")
            by_prompt[r.prompt_id][r.variant_label] = r
        else:
            by_prompt[r.prompt_id]
    missing = [pid for pid, d in by_prompt.items() if not ("chosen" in d and "rejected" in d)]
    if missing:
        raise MissingVariant(missing)
    margins = [
        (d["chosen"].logp_policy - d["rejected"].logp_policy) - (d["chosen"].logp_ref - d["rejected"].logp_ref)
        for _, d in sorted(by_prompt.items())
    ]
    return MassDynReport(
        delta_chosen=_mean(chosen),
        delta_others=_mean(others),
        delta_margin=_mean(margins),
        per_variant={k: _mean(v) for k, v in sorted(per_variant.items())},
        counts={k: len(v) for k, v in sorted(per_variant.items())},
        n_prompts=len(by_prompt),
    )


DESTRUCTIVE_OTHERS = -5.0


def healthiness_summary(report: MassDynReport, destructive_others: float = DESTRUCTIVE_OTHERS) -> str:
    if report.delta_chosen > 0 and report.delta_margin > 0:
        return "Healthy"
    if report.delta_chosen < 0 and report.delta_others < destructive_others:
        return "Destructive"
    return "Neutral"


REPORT_COLUMNS = ("method", "margin_delta", "delta_chosen", "delta_others", "observation")


def report_row(method: str, report: MassDynReport, destructive_others: float = DESTRUCTIVE_OTHERS) -> dict:
    return {
        "method": method,
        "margin_delta": report.delta_margin,
        "delta_chosen": report.delta_chosen,
        "delta_others": report.delta_others,
        "observation": healthiness_summary(report, destructive_others),
    }


def format_table(rows) -> str:
    """Fixed-width text table over REPORT_COLUMNS."""
    cells = [list(REPORT_COLUMNS)]
    for r in rows:
        cells.append([r["method"], *(f"{r[k]:+.4f}" for k in REPORT_COLUMNS[1:4]), r["observation"]])
    widths = [max(len(row[i]) for row in cells) for i in range(len(REPORT_COLUMNS))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
