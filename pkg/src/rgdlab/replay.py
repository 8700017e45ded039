"""Replay budget allocation across previous tasks, plus replay sampling.

Three allocators share largest-remainder rounding (floor the real shares,
hand the leftover units to the largest fractional parts, earlier task wins
ties), so every plan hits its budget exactly.  `fit_to_pools` caps counts at
what each task's pool can actually supply, redistributing the surplus over
the remaining tasks and recording any clamping as shortfalls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError


@dataclass(frozen=True)
class AllocationPlan:
    budget: int
    strategy: str
    counts: dict[str, int]
    shortfalls: dict[str, int] = field(default_factory=dict)
    weights: dict[str, float] | None = None    # allocator inputs; not serialized


def largest_remainder(weights, total: int) -> list[int]:
    """Integer apportionment of ``total`` proportional to ``weights``."""
    if total < 0:
        raise ConfigError("total must be nonnegative")
    weights = [float(w) for w in weights]
    if any(w < 0 for w in weights):
        raise InputError("weights must be nonnegative")
    s = sum(weights)
    if s <= 0:
        raise InputError("at least one weight must be positive")
    shares = [total * w / s for w in weights]
    base = [math.floor(x) for x in shares]
    leftover = total - sum(base)
    by_fraction = sorted(range(len(weights)), key=lambda i: (base[i] - shares[i], i))
    for i in by_fraction[:leftover]:
        base[i] += 1
    return base


def allocate_equal(prev_tasks, alpha: int) -> AllocationPlan:
    """Floor split of the budget; the remainder goes to the earliest tasks."""
    tasks = list(prev_tasks)
    if not tasks:
        raise InputError("prev_tasks must be nonempty")
    if alpha < 0:
        raise ConfigError("budget must be nonnegative")
    n = len(tasks)
    counts = {t: alpha // n + (1 if i < alpha % n else 0) for i, t in enumerate(tasks)}
    return AllocationPlan(budget=alpha, strategy="equal", counts=counts,
                          weights={t: 1.0 for t in tasks})


def allocate_rgd(scores, alpha: int) -> AllocationPlan:
    """Counts proportional to each previous task's difficulty scalar."""
    scores = dict(scores)
    if not scores:
        raise InputError("scores must be nonempty")
    if alpha < 0:
        raise ConfigError("budget must be nonnegative")
    for task, score in scores.items():
        if score is None:
            raise InputError(f"missing score for task {task!r}")
        if score <= 0:
            raise InputError(f"score for task {task!r} must be positive")
    tasks = list(scores)
    alloc = largest_remainder([scores[t] for t in tasks], alpha)
    return AllocationPlan(budget=alpha, strategy="rgd",
                          counts=dict(zip(tasks, alloc)),
                          weights={t: float(scores[t]) for t in tasks})


def allocate_inscl(distances, alpha: int) -> AllocationPlan:
    """Counts proportional to instruction-distribution distance.

    More different tasks replay more; if every distance is zero the plan
    falls back to an equal split.
    """
    distances = dict(distances)
    if not distances:
        raise InputError("distances must be nonempty")
    if alpha < 0:
        raise ConfigError("budget must be nonnegative")
    for task, d in distances.items():
        if d is None:
            raise InputError(f"missing distance for task {task!r}")
        if d < 0:
            raise InputError(f"distance for task {task!r} must be nonnegative")
    tasks = list(distances)
    if all(distances[t] == 0 for t in tasks):
        plan = allocate_equal(tasks, alpha)
        return AllocationPlan(budget=alpha, strategy="inscl", counts=plan.counts,
                              weights={t: 1.0 for t in tasks})
    alloc = largest_remainder([distances[t] for t in tasks], alpha)
    return AllocationPlan(budget=alpha, strategy="inscl",
                          counts=dict(zip(tasks, alloc)),
                          weights={t: float(distances[t]) for t in tasks})


def fit_to_pools(plan: AllocationPlan, pool_sizes) -> AllocationPlan:
    """Cap counts at pool sizes; redistribute the excess, record shortfalls.

    The returned counts sum to min(budget, total pool).  A task appears in
    ``shortfalls`` with the number of samples its raw allocation wanted but
    its pool could not supply, even when other pools absorbed the surplus.
    """
    pools = dict(pool_sizes)
    for task in plan.counts:
        if task not in pools:
            raise InputError(f"no pool size for task {task!r}")
        if pools[task] < 0:
            raise InputError(f"pool size for task {task!r} must be nonnegative")
    weights = plan.weights or {t: float(c) for t, c in plan.counts.items()}

    target = min(plan.budget, sum(pools[t] for t in plan.counts))
    capped: dict[str, int] = {}
    active = [t for t in plan.counts]
    remaining = target
    while active and remaining > 0:
        positive = [t for t in active if weights[t] > 0]
        share_tasks = positive if positive else active
        alloc = largest_remainder(
            [weights[t] if positive else 1.0 for t in share_tasks], remaining)
        assignment = dict(zip(share_tasks, alloc))
        for t in active:
            assignment.setdefault(t, 0)
        over = [t for t in active if assignment[t] > pools[t] - capped.get(t, 0)]
        if not over:
            for t in active:
                capped[t] = capped.get(t, 0) + assignment[t]
            break
        for t in over:
            room = pools[t] - capped.get(t, 0)
            capped[t] = pools[t]
            remaining -= room
        active = [t for t in active if t not in over]
    for t in plan.counts:
        capped.setdefault(t, 0)

    shortfalls = {t: plan.counts[t] - pools[t]
                  for t in plan.counts if plan.counts[t] > pools[t]}
    return AllocationPlan(budget=plan.budget, strategy=plan.strategy,
                          counts=capped, shortfalls=shortfalls, weights=plan.weights)


def instruction_distance(task_a_instructions, task_b_instructions) -> float:
    """Transport distance between unigram token distributions.

    Under the 0/1 ground metric the optimal transport cost between two
    discrete distributions equals their total variation distance.
    """
    a = list(task_a_instructions)
    b = list(task_b_instructions)
    if not a or not b:
        raise InputError("both instruction lists must be nonempty")

    def dist(instrs):
        counts: dict[str, int] = {}
        total = 0
        for tokens in instrs:
            for tok in tokens:
                counts[tok] = counts.get(tok, 0) + 1
                total += 1
        if total == 0:
            raise InputError("instructions contain no tokens")
        return {t: c / total for t, c in counts.items()}

    p, q = dist(a), dist(b)
    support = set(p) | set(q)
    return 0.5 * sum(abs(p.get(t, 0.0) - q.get(t, 0.0)) for t in support)


def sample_replay(pool, count: int, seed: int) -> list:
    """Seeded uniform sample without replacement; counts clamp to the pool."""
    pool = list(pool)
    if count < 0:
        raise ConfigError("count must be nonnegative")
    count = min(count, len(pool))
    if count == 0:
        return []
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=count, replace=False)
    return [pool[int(i)] for i in picks]
