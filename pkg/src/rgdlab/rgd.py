"""Rationale-guidance difficulty: how poorly an instruction elicits its rationale.

The per-example score is the ratio of the conditional rationale perplexity
(given the instruction) to the unconditional one; above 1 means the
instruction makes the rationale harder to produce than no prompt at all.
Task-level scores are the mean (optionally mean minus std) over a held-out
evaluation slice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import tinylm
from .errors import InputError, InvalidPplError
from .taskgen import Example

SCALAR_FLOOR = 1e-6

AGGREGATORS = ("mean", "mean_minus_std")


@dataclass(frozen=True)
class PplRecord:
    task_id: str
    example_id: str
    nll_cond_sum: float
    nll_uncond_sum: float
    n_rationale_tokens: int

    def __post_init__(self):
        if self.n_rationale_tokens < 1:
            raise InputError("n_rationale_tokens must be >= 1")
        for value in (self.nll_cond_sum, self.nll_uncond_sum):
            if not math.isfinite(value) or value < 0:
                raise InputError("NLL sums must be finite and nonnegative")

    def rgd(self) -> float:
        mean_cond = self.nll_cond_sum / self.n_rationale_tokens
        mean_uncond = self.nll_uncond_sum / self.n_rationale_tokens
        return math.exp(mean_cond - mean_uncond)


@dataclass(frozen=True)
class RgdSummary:
    task_id: str
    mean: float
    std: float
    n: int


def rgd_score(ppl_cond: float, ppl_uncond: float) -> float:
    """Conditional over unconditional perplexity; 1.0 means no guidance."""
    if ppl_cond <= 0 or ppl_uncond <= 0:
        raise InvalidPplError("perplexities must be positive")
    return ppl_cond / ppl_uncond


def rgd_from_model(model: tinylm.ModelState, ex: Example) -> tuple[PplRecord, float]:
    """Score one example against a model snapshot."""
    if len(ex.rationale) == 0:
        raise InputError(f"example {ex.id} has an empty rationale")
    x_ids = model.vocab.encode(ex.instruction)
    r_ids = model.vocab.encode(ex.rationale)
    cond = tinylm.sequence_nll(model, x_ids, r_ids)
    uncond = tinylm.sequence_nll(model, [], r_ids)
    record = PplRecord(
        task_id=ex.task_id,
        example_id=ex.id,
        nll_cond_sum=cond.sum_nll,
        nll_uncond_sum=uncond.sum_nll,
        n_rationale_tokens=cond.n_tokens,
    )
    return record, rgd_score(tinylm.perplexity(cond), tinylm.perplexity(uncond))


def task_rgd(records, aggregator: str = "mean") -> tuple[RgdSummary, float]:
    """Mean and population std of per-record scores, plus the allocator scalar.

    The scalar is the mean (default) or mean minus std, floored at a small
    positive epsilon so downstream proportional allocation stays defined.
    """
    if aggregator not in AGGREGATORS:
        raise InputError(f"aggregator must be one of {AGGREGATORS}")
    records = list(records)
    if not records:
        raise InputError("records must be nonempty")
    task_ids = {r.task_id for r in records}
    if len(task_ids) != 1:
        raise InputError(f"records mix tasks: {sorted(task_ids)}")
    scores = [r.rgd() for r in records]
    n = len(scores)
    mean = sum(scores) / n
    var = sum((s - mean) ** 2 for s in scores) / n
    std = math.sqrt(var)
    summary = RgdSummary(task_id=records[0].task_id, mean=mean, std=std, n=n)
    return summary, summary_scalar(summary, aggregator)


def summary_scalar(summary: RgdSummary, aggregator: str = "mean") -> float:
    if aggregator not in AGGREGATORS:
        raise InputError(f"aggregator must be one of {AGGREGATORS}")
    value = summary.mean if aggregator == "mean" else summary.mean - summary.std
    return max(value, SCALAR_FLOOR)
