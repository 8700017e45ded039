"""Sequential continual-learning runs, baselines and the two probing loops.

A run walks one task order: each stage trains the previous checkpoint on the
new task's data plus replay samples drawn according to the configured
strategy, then evaluates every task seen so far on its held-out set.
Difficulty summaries are recorded after every stage with that stage's
checkpoint, so the allocation at stage i only ever sees statistics computed
with the stage i-1 model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import clmetrics, rgd, replay, taskgen, tinylm
from .errors import ConfigError, InputError

STRATEGIES = ("none", "equal", "inscl", "rgd-mean", "rgd-mean-minus-std")

DEFAULT_K_GRID = (0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0)
DEFAULT_DEMO_COUNTS = (1, 2, 4, 8)
DEFAULT_DEMO_DRAWS = 3
DEFAULT_TOP_FORGOTTEN = 3

# Salts for deriving per-purpose seeds from the run seed.
_SALT_INIT = 101
_SALT_STAGE = 211
_SALT_REPLAY = 307
_SALT_SINGLE = 401
_SALT_MULTI = 503
_SALT_DEMOS = 607
_SALT_WARMUP = 701


def derive_seed(*parts: int) -> int:
    """Stable child seed from integer parts via numpy's SeedSequence."""
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(1, np.uint32)[0])


@dataclass(frozen=True)
class ModelDims:
    context_len: int = 28
    embed_dim: int = 12
    hidden_dim: int = 128


@dataclass(frozen=True)
class TrainSettings:
    learning_rate: float = 0.15
    epochs: int = 10
    batch_size: int = 16
    momentum: float = 0.9
    shuffle: bool = True

    def to_config(self, seed: int) -> tinylm.TrainConfig:
        return tinylm.TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            momentum=self.momentum,
            seed=seed,
            shuffle=self.shuffle,
        )


@dataclass(frozen=True)
class RunConfig:
    strategy: str
    run_seed: int
    order_index: int = 0
    dims: ModelDims = field(default_factory=ModelDims)
    train: TrainSettings = field(default_factory=TrainSettings)
    warmup: TrainSettings = field(default_factory=lambda: TrainSettings(
        learning_rate=0.25, epochs=25, batch_size=32))
    warmup_examples: int = 2000               # 0 disables the base-skills phase
    replay_budget: int | None = None          # absolute per-stage budget
    replay_fraction: float = 0.05             # of cumulative previous train data
    rgd_eval_size: int = 32                   # examples scored per task and stage
    max_gen_len: int = 18

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        if self.strategy.startswith("rgd") and self.rgd_eval_size < 1:
            raise ConfigError("rgd strategies need an evaluation subset of >= 1 examples")
        if self.replay_budget is not None and self.replay_budget < 0:
            raise ConfigError("replay_budget must be nonnegative")
        if not 0 <= self.replay_fraction <= 1:
            raise ConfigError("replay_fraction must be in [0, 1]")

    @property
    def aggregator(self) -> str:
        return "mean_minus_std" if self.strategy == "rgd-mean-minus-std" else "mean"


@dataclass
class RunResult:
    order: tuple[str, ...]
    matrix: clmetrics.PerfMatrix
    summaries: list[dict[str, rgd.RgdSummary]]     # per stage, tasks seen so far
    plans: list[replay.AllocationPlan | None]      # per stage; None for stage 1
    checkpoints: list[tinylm.ModelState]
    loss_traces: list[list[float]]


def build_model_vocab(suite: taskgen.Suite) -> tinylm.Vocab:
    return tinylm.Vocab.build(taskgen.suite_tokens(suite))


def build_base_model(suite: taskgen.Suite, cfg: RunConfig) -> tinylm.ModelState:
    """Fresh init plus the base-skills warmup phase.

    Both the warmup corpus and its training seeds derive from the suite
    seed, so every run over a suite starts from one shared checkpoint — the
    analogue of fine-tuning runs all starting from the same pretrained
    model.  With warmup_examples=0 this is just a seeded init.
    """
    vocab = build_model_vocab(suite)
    model = tinylm.init_model(vocab, cfg.dims.context_len, cfg.dims.embed_dim,
                              cfg.dims.hidden_dim, seed=derive_seed(suite.seed, _SALT_INIT))
    if cfg.warmup_examples == 0:
        return model
    warmup = taskgen.make_warmup_corpus(
        cfg.warmup_examples, seed=derive_seed(suite.seed, _SALT_WARMUP))
    corpus = [training_pair(vocab, ex) for ex in warmup]
    train_cfg = cfg.warmup.to_config(seed=derive_seed(suite.seed, _SALT_WARMUP, 1))
    model, _ = tinylm.train(model, corpus, train_cfg)
    return model


def training_pair(vocab: tinylm.Vocab, ex: taskgen.Example) -> tuple[list[int], list[int]]:
    """Teacher-forcing pair; prompts carry the document prefix.

    Examples with an empty instruction (standalone reasoning text from the
    warmup corpus) keep an empty context so they train the start-of-text
    windows.
    """
    context = vocab.encode(prompt_tokens(ex.instruction))
    target = vocab.encode(taskgen.training_target_tokens(ex)) + [tinylm.EOS]
    return context, target


def prompt_tokens(instruction) -> tuple[str, ...]:
    """Document prefix plus the instruction; empty instructions stay empty."""
    instruction = tuple(instruction)
    if not instruction:
        return ()
    return taskgen.PROMPT_PREFIX + instruction


def evaluate_accuracy(model: tinylm.ModelState, examples, max_gen_len: int = 18) -> float:
    """Greedy-decode each instruction and score the parsed answers."""
    examples = list(examples)
    if not examples:
        raise InputError("no examples to evaluate")
    vocab = model.vocab
    prompts = [vocab.encode(prompt_tokens(ex.instruction)) for ex in examples]
    outputs = tinylm.generate_batch(model, prompts, max_gen_len)
    decoded = [vocab.decode(ids) for ids in outputs]
    return clmetrics.answer_accuracy(decoded, [ex.answer for ex in examples])


def score_task_rgd(model: tinylm.ModelState, examples, limit: int | None = None) -> rgd.RgdSummary:
    """Difficulty summary of a task's probe slice under one checkpoint."""
    chosen = list(examples)[:limit] if limit else list(examples)
    records = [rgd.rgd_from_model(model, ex)[0] for ex in chosen]
    summary, _ = rgd.task_rgd(records)
    return summary


def _stage_plan(cfg: RunConfig, suite: taskgen.Suite, order, stage: int,
                prev_summaries: dict[str, rgd.RgdSummary]) -> replay.AllocationPlan:
    prev = list(order[:stage])
    if cfg.replay_budget is not None:
        alpha = cfg.replay_budget
    else:
        alpha = round(cfg.replay_fraction * sum(len(suite.train[t]) for t in prev))
    if cfg.strategy == "equal":
        plan = replay.allocate_equal(prev, alpha)
    elif cfg.strategy == "inscl":
        current = [list(ex.instruction) for ex in suite.train[order[stage]]]
        distances = {
            t: replay.instruction_distance([list(ex.instruction) for ex in suite.train[t]], current)
            for t in prev
        }
        plan = replay.allocate_inscl(distances, alpha)
    else:
        scores = {t: rgd.summary_scalar(prev_summaries[t], cfg.aggregator) for t in prev}
        plan = replay.allocate_rgd(scores, alpha)
    return replay.fit_to_pools(plan, {t: len(suite.train[t]) for t in prev})


def run_sequence(suite: taskgen.Suite, cfg: RunConfig,
                 a0: dict[str, float] | None = None,
                 base_model: tinylm.ModelState | None = None,
                 keep_checkpoints: bool = True,
                 order: tuple[str, ...] | None = None) -> RunResult:
    """One full sequential run; ``order`` overrides the suite's canonical one."""
    if order is None:
        order = suite.orders[cfg.order_index]
    else:
        order = tuple(order)
        for task in order:
            suite.spec(task)
    model = base_model.copy() if base_model is not None else build_base_model(suite, cfg)
    vocab = model.vocab
    if a0 is None:
        a0 = run_single_baselines(suite, cfg, base_model=model)

    rows: list[tuple[float, ...]] = []
    summaries: list[dict[str, rgd.RgdSummary]] = []
    plans: list[replay.AllocationPlan | None] = []
    checkpoints: list[tinylm.ModelState] = []
    traces: list[list[float]] = []
    prev_summaries: dict[str, rgd.RgdSummary] = {}

    for stage, task in enumerate(order):
        corpus = [training_pair(vocab, ex) for ex in suite.train[task]]
        plan = None
        if stage > 0 and cfg.strategy != "none":
            plan = _stage_plan(cfg, suite, order, stage, prev_summaries)
            for j, prev_task in enumerate(order[:stage]):
                picks = replay.sample_replay(
                    suite.train[prev_task], plan.counts[prev_task],
                    seed=derive_seed(cfg.run_seed, _SALT_REPLAY, stage, j))
                corpus.extend(training_pair(vocab, ex) for ex in picks)
        plans.append(plan)

        train_cfg = cfg.train.to_config(seed=derive_seed(cfg.run_seed, _SALT_STAGE, stage))
        model, trace = tinylm.train(model, corpus, train_cfg)
        traces.append(trace)
        if keep_checkpoints:
            checkpoints.append(model)

        rows.append(tuple(
            evaluate_accuracy(model, suite.eval[order[j]], cfg.max_gen_len)
            for j in range(stage + 1)
        ))
        stage_summary = {
            order[j]: score_task_rgd(model, suite.probe[order[j]], cfg.rgd_eval_size)
            for j in range(stage + 1)
        }
        summaries.append(stage_summary)
        prev_summaries = stage_summary

    matrix = clmetrics.PerfMatrix(
        order=order, rows=tuple(rows), a0=tuple(a0[t] for t in order))
    return RunResult(order=order, matrix=matrix, summaries=summaries,
                     plans=plans, checkpoints=checkpoints, loss_traces=traces)


def run_single_baselines(suite: taskgen.Suite, cfg: RunConfig,
                         base_model: tinylm.ModelState | None = None) -> dict[str, float]:
    """Per-task score of a base model trained on that task alone."""
    if base_model is None:
        base_model = build_base_model(suite, cfg)
    vocab = base_model.vocab
    out = {}
    for i, spec in enumerate(suite.specs):
        corpus = [training_pair(vocab, ex) for ex in suite.train[spec.task_id]]
        train_cfg = cfg.train.to_config(seed=derive_seed(cfg.run_seed, _SALT_SINGLE, i))
        model, _ = tinylm.train(base_model, corpus, train_cfg)
        out[spec.task_id] = evaluate_accuracy(model, suite.eval[spec.task_id], cfg.max_gen_len)
    return out


def run_multitask(suite: taskgen.Suite, cfg: RunConfig,
                  base_model: tinylm.ModelState | None = None) -> dict[str, float]:
    """Per-task score of one model trained on the union of all train sets."""
    if base_model is None:
        base_model = build_base_model(suite, cfg)
    vocab = base_model.vocab
    corpus = []
    for spec in suite.specs:
        corpus.extend(training_pair(vocab, ex) for ex in suite.train[spec.task_id])
    train_cfg = cfg.train.to_config(seed=derive_seed(cfg.run_seed, _SALT_MULTI))
    model, _ = tinylm.train(base_model, corpus, train_cfg)
    return {spec.task_id: evaluate_accuracy(model, suite.eval[spec.task_id], cfg.max_gen_len)
            for spec in suite.specs}


def probe_partial_rationale(model: tinylm.ModelState, examples, k_grid=DEFAULT_K_GRID,
                            max_gen_len: int = 18) -> list[tuple[float, float]]:
    """Accuracy with the first k fraction of the gold rationale appended."""
    examples = list(examples)
    if not examples:
        raise InputError("no examples to probe")
    vocab = model.vocab
    results = []
    for k in k_grid:
        prompts = [vocab.encode(taskgen.PROMPT_PREFIX + taskgen.partial_rationale_prompt(ex, k))
                   for ex in examples]
        outputs = tinylm.generate_batch(model, prompts, max_gen_len)
        decoded = [vocab.decode(ids) for ids in outputs]
        acc = clmetrics.answer_accuracy(decoded, [ex.answer for ex in examples])
        results.append((float(k), acc))
    return results


@dataclass(frozen=True)
class TapResult:
    best_count: int
    best_draw: int
    best_accuracy: float
    instruction_only: float
    grid: tuple[tuple[int, int, float], ...]   # (demo_count, draw, accuracy)
    best_demo_ids: tuple[str, ...]


def probe_tap(model: tinylm.ModelState, examples, demo_pool,
              demo_counts=DEFAULT_DEMO_COUNTS, draws: int = DEFAULT_DEMO_DRAWS,
              seed: int = 0, context_template: str = taskgen.DEFAULT_TAP_TEMPLATE,
              max_gen_len: int = 18) -> TapResult:
    """Grid search over demo counts and seeded demo draws.

    The zero-demo arm is always evaluated and uses the bare instruction (no
    context template), so the search can never fall below instruction-only
    accuracy; ties prefer fewer demos, then the earlier draw.
    """
    examples = list(examples)
    if not examples:
        raise InputError("no examples to probe")
    demo_pool = [d for d in demo_pool if d.task_id != examples[0].task_id]
    if not demo_pool:
        raise ConfigError("demo pool is empty after removing same-task examples")
    vocab = model.vocab
    golds = [ex.answer for ex in examples]

    def accuracy_for(prompts):
        outputs = tinylm.generate_batch(model, prompts, max_gen_len)
        return clmetrics.answer_accuracy([vocab.decode(ids) for ids in outputs], golds)

    instruction_only = accuracy_for(
        [vocab.encode(prompt_tokens(ex.instruction)) for ex in examples])
    grid: list[tuple[int, int, float]] = [(0, 0, instruction_only)]
    best = (0, 0, instruction_only, ())
    for count in demo_counts:
        if count <= 0:
            continue
        for draw in range(draws):
            demos = replay.sample_replay(
                demo_pool, count, seed=derive_seed(seed, _SALT_DEMOS, count, draw))
            prompts = [vocab.encode(taskgen.tap_prompt(ex, demos, context_template))
                       for ex in examples]
            acc = accuracy_for(prompts)
            grid.append((count, draw, acc))
            if acc > best[2]:
                best = (count, draw, acc, tuple(d.id for d in demos))
    return TapResult(
        best_count=best[0], best_draw=best[1], best_accuracy=best[2],
        instruction_only=instruction_only, grid=tuple(grid), best_demo_ids=best[3])


def most_forgotten_tasks(report: clmetrics.MetricsReport, top: int = DEFAULT_TOP_FORGOTTEN) -> list[str]:
    ranked = sorted(report.per_task_forgetting.items(), key=lambda kv: (-kv[1], kv[0]))
    return [task for task, _ in ranked[:top]]


@dataclass(frozen=True)
class ExperimentPlan:
    """Grid of sequential runs plus baselines and optional probes."""

    strategies: tuple[str, ...]
    run_seeds: tuple[int, ...]
    order_indices: tuple[int, ...] = (0, 1)
    dims: ModelDims = field(default_factory=ModelDims)
    train: TrainSettings = field(default_factory=TrainSettings)
    warmup: TrainSettings = field(default_factory=lambda: TrainSettings(
        learning_rate=0.25, epochs=25, batch_size=32))
    warmup_examples: int = 2000
    replay_budget: int | None = None
    replay_fraction: float = 0.05
    rgd_eval_size: int = 32
    max_gen_len: int = 18
    run_probes: bool = False
    k_grid: tuple[float, ...] = DEFAULT_K_GRID
    demo_counts: tuple[int, ...] = DEFAULT_DEMO_COUNTS
    demo_draws: int = DEFAULT_DEMO_DRAWS
    top_forgotten: int = DEFAULT_TOP_FORGOTTEN
    threads: int = 1
    keep_checkpoints: bool = False

    def __post_init__(self):
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}")
        if not self.run_seeds:
            raise ConfigError("at least one run seed is required")
        for o in self.order_indices:
            if o not in (0, 1):
                raise ConfigError("order indices must be 0 or 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def run_config(self, strategy: str, seed: int, order_index: int) -> RunConfig:
        return RunConfig(
            strategy=strategy, run_seed=seed, order_index=order_index,
            dims=self.dims, train=self.train, warmup=self.warmup,
            warmup_examples=self.warmup_examples, replay_budget=self.replay_budget,
            replay_fraction=self.replay_fraction, rgd_eval_size=self.rgd_eval_size,
            max_gen_len=self.max_gen_len)


@dataclass
class RunRecord:
    strategy: str
    run_seed: int
    order_index: int
    result: RunResult
    report: clmetrics.MetricsReport


@dataclass
class ProbeRecord:
    run_seed: int
    order_index: int
    task_id: str
    partial: list[tuple[float, float]]
    tap: TapResult


@dataclass
class ExperimentResult:
    suite: taskgen.Suite
    plan: ExperimentPlan
    singles: dict[int, dict[str, float]]      # run seed -> task -> a0
    multis: dict[int, dict[str, float]]       # run seed -> task -> score
    runs: list[RunRecord]
    probes: list[ProbeRecord]


def run_experiment(suite: taskgen.Suite, plan: ExperimentPlan) -> ExperimentResult:
    """Baselines plus every (strategy, seed, order) run, optionally probed.

    All runs share one base checkpoint; single-task baselines are computed
    once per run seed and reused across strategies and orders.  Results are
    assembled in grid order so output artifacts do not depend on the number
    of worker threads.
    """
    from concurrent.futures import ThreadPoolExecutor

    base = build_base_model(suite, plan.run_config(plan.strategies[0], plan.run_seeds[0], 0))
    singles = {seed: run_single_baselines(suite, plan.run_config(plan.strategies[0], seed, 0),
                                          base_model=base)
               for seed in plan.run_seeds}
    multis = {seed: run_multitask(suite, plan.run_config(plan.strategies[0], seed, 0),
                                  base_model=base)
              for seed in plan.run_seeds}

    grid = [(strategy, seed, order)
            for strategy in plan.strategies
            for seed in plan.run_seeds
            for order in plan.order_indices]

    def one(args):
        strategy, seed, order = args
        cfg = plan.run_config(strategy, seed, order)
        keep = plan.keep_checkpoints or (plan.run_probes and strategy == "none")
        result = run_sequence(suite, cfg, a0=singles[seed], base_model=base,
                              keep_checkpoints=keep)
        return RunRecord(strategy=strategy, run_seed=seed, order_index=order,
                         result=result, report=clmetrics.compute_report(result.matrix))

    if plan.threads > 1:
        with ThreadPoolExecutor(max_workers=plan.threads) as pool:
            runs = list(pool.map(one, grid))
    else:
        runs = [one(g) for g in grid]

    probes: list[ProbeRecord] = []
    if plan.run_probes:
        for record in runs:
            if record.strategy != "none":
                continue
            model = record.result.checkpoints[-1]
            for task in most_forgotten_tasks(record.report, plan.top_forgotten):
                partial = probe_partial_rationale(model, suite.eval[task], plan.k_grid,
                                                  plan.max_gen_len)
                pool_examples = [ex for other in record.result.order if other != task
                                 for ex in suite.train[other]]
                tap = probe_tap(model, suite.eval[task], pool_examples,
                                plan.demo_counts, plan.demo_draws,
                                seed=derive_seed(record.run_seed, record.order_index),
                                max_gen_len=plan.max_gen_len)
                probes.append(ProbeRecord(run_seed=record.run_seed,
                                          order_index=record.order_index,
                                          task_id=task, partial=partial, tap=tap))
    return ExperimentResult(suite=suite, plan=plan, singles=singles, multis=multis,
                            runs=runs, probes=probes)
