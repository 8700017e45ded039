"""Synthetic instruction/rationale/answer tasks plus the two probing prompts.

Five task families — keyword presence, keyword half-position, marker-count
parity, end-word relation and dominant-topic classification — are stamped out
over one shared content vocabulary so that sequential training interferes.
Every instance of a family has fresh phrasing and a fresh label pair, so any
two tasks in a suite differ in both wording and labels; a repeated family
keeps its marker words and is thus a near-duplicate task, the way benchmark
collections re-template the same underlying dataset.

Every instruction follows the same shape: a family phrasing, the two answer
options, then the input words.  Rationales share one five-token scaffold that
varies only at the feature word carrying the inference.  Label strings never
appear in the rationale; the answer is appended after the "[RESULT]" marker
when an example is rendered as a training target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError

RESULT_MARKER = "[RESULT]"
INPUT_LEN = 6
MAX_TASKS = 15

# Constant document prefix prepended to every rendered prompt.  It keeps every
# training window free of BOS padding (instructions alone are shorter than the
# model's context window), so the start-of-text region is shaped only by the
# base-skills corpus and unconditional rationale perplexity stays anchored.
PROMPT_PREFIX = ("a", "new", "row", "of", "words", "arrives", ",", "work", "it", "out", ":")

DEFAULT_TAP_TEMPLATE = "here are some solved rows , use the same pattern for the last one ."

CONTENT_GROUPS = {
    "animals": ("cat", "dog", "fox", "owl", "bee", "elk"),
    "tools": ("hammer", "saw", "drill", "wrench", "chisel", "pliers"),
    "colors": ("red", "blue", "green", "gold", "pink", "teal"),
    "foods": ("bread", "corn", "rice", "plum", "kale", "oat"),
}
CONTENT_POOL = tuple(w for group in CONTENT_GROUPS.values() for w in group)
GROUP_NAMES = tuple(CONTENT_GROUPS)

_FAMILIES = ("presence", "position", "parity", "relation", "topic")

# Every rationale uses one scaffold so tasks differ only at the feature word.
# The unconditional rationale distribution then stays anchored across stages
# (every stage retrains the same scaffold) and the conditional/unconditional
# gap concentrates on the guided inference token.
SCAFFOLD_BODY = "the word {feature} here"

# One feature pair shared by every task: the first feature always points at
# the first listed option, the second at the other.  Each stage then trains
# the same half/half feature distribution (the unconditional prior over the
# inference token cannot drift toward any one task) and the feature-to-option
# rule is task-agnostic, so what a task owns is exactly the mapping from its
# instructions onto the right feature.
GLOBAL_FEATURES = ("fits", "breaks")

# One entry per variant; variants cycle when the suite has more than five
# tasks.  labels[i] pairs with GLOBAL_FEATURES[i].  Marker-family phrasings
# end with the marker so its distance from the input is the same everywhere.
_VARIANTS = {
    "presence": {
        "phrasings": (
            "say if the list holds the word {marker}",
            "tell whether these words include {marker}",
            "check the row below for the word {marker}",
        ),
        "labels": (("yes", "no"), ("present", "absent"), ("found", "missing")),
    },
    "position": {
        "phrasings": (
            "state the half that holds the word {marker}",
            "report the half that contains the word {marker}",
            "locate the half that carries the word {marker}",
        ),
        "labels": (("front", "back"), ("early", "late"), ("first", "second")),
    },
    "parity": {
        "phrasings": (
            "give the parity for the count of {marker}",
            "work out the parity for appearances of {marker}",
            "judge the parity for repeats of {marker}",
        ),
        "labels": (("even", "odd"), ("balanced", "skewed"), ("level", "uneven")),
    },
    "relation": {
        "phrasings": (
            "decide if the two ends of the row match",
            "compare the first word against the last",
            "say if the outer words line up together",
        ),
        "labels": (("same", "different"), ("alike", "unlike"), ("equal", "unequal")),
    },
    "topic": {
        "phrasings": (
            "name the topic of this word group",
            "classify the theme of these words",
            "label the subject of the row",
        ),
        "labels": (("animals", "tools"), ("beasts", "gadgets"), ("fauna", "hardware")),
        "groups": (("animals", "tools"), ("animals", "tools"), ("animals", "tools")),
    },
}


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    instruction_template: str          # "{input}" slot; marker and options baked in
    label_set: tuple[str, ...]
    input_grammar: dict                # family name plus its parameters
    rationale_template: str            # "{feature}" slot and a trailing answer slot

    def feature_for(self, answer: str) -> str:
        return GLOBAL_FEATURES[self.label_set.index(answer)]


@dataclass(frozen=True)
class Example:
    task_id: str
    id: str
    instruction: tuple[str, ...]
    rationale: tuple[str, ...]
    answer: str


@dataclass(frozen=True)
class ProbeConfig:
    k: float
    demo_count: int
    demo_source_task: str

    def __post_init__(self):
        if not 0.0 <= self.k <= 1.0:
            raise ConfigError("k must be in [0, 1]")
        if self.demo_count < 0:
            raise ConfigError("demo_count must be nonnegative")


@dataclass(frozen=True)
class Suite:
    specs: tuple[TaskSpec, ...]
    train: dict[str, tuple[Example, ...]]
    eval: dict[str, tuple[Example, ...]]
    probe: dict[str, tuple[Example, ...]]       # held-out difficulty-scoring slice
    orders: tuple[tuple[str, ...], tuple[str, ...]]
    seed: int

    def spec(self, task_id: str) -> TaskSpec:
        for s in self.specs:
            if s.task_id == task_id:
                return s
        raise InputError(f"unknown task {task_id!r}")


def _label_of(grammar: dict, words) -> str:
    family = grammar["family"]
    labels = grammar["labels"]
    if family == "presence":
        return labels[0] if grammar["marker"] in words else labels[1]
    if family == "position":
        return labels[0] if words.index(grammar["marker"]) < INPUT_LEN // 2 else labels[1]
    if family == "parity":
        return labels[0] if words.count(grammar["marker"]) % 2 == 0 else labels[1]
    if family == "relation":
        return labels[0] if words[0] == words[-1] else labels[1]
    if family == "topic":
        a, b = grammar["groups"]
        count_a = sum(w in CONTENT_GROUPS[a] for w in words)
        count_b = sum(w in CONTENT_GROUPS[b] for w in words)
        return labels[0] if count_a > count_b else labels[1]
    raise ConfigError(f"unknown family {family!r}")


def _validate_input(grammar: dict, words) -> None:
    family = grammar["family"]
    if len(words) != INPUT_LEN:
        raise InputError(f"input must have exactly {INPUT_LEN} words")
    for w in words:
        if w not in CONTENT_POOL:
            raise InputError(f"word {w!r} is not in the content vocabulary")
    if family == "position" and words.count(grammar["marker"]) != 1:
        raise InputError("position inputs must contain the marker exactly once")
    if family == "parity" and not 1 <= words.count(grammar["marker"]) <= 2:
        raise InputError("parity inputs must contain the marker once or twice")
    if family == "relation":
        ends = {grammar["marker"], grammar["marker_b"]}
        if words[0] not in ends or words[-1] not in ends:
            raise InputError("relation inputs must start and end with a marker word")
    if family == "topic":
        a, b = grammar["groups"]
        count_a = sum(w in CONTENT_GROUPS[a] for w in words)
        count_b = sum(w in CONTENT_GROUPS[b] for w in words)
        if count_a == count_b:
            raise InputError("topic inputs need a dominant group between the pair")


def _sample_input(grammar: dict, rng: np.random.Generator) -> tuple[str, ...]:
    family = grammar["family"]
    pool = list(CONTENT_POOL)

    def draw(n, exclude=()):
        candidates = [w for w in pool if w not in exclude]
        return [candidates[i] for i in rng.integers(0, len(candidates), size=n)]

    if family == "presence":
        marker = grammar["marker"]
        words = draw(INPUT_LEN, exclude=(marker,))
        if rng.random() < 0.5:
            words[int(rng.integers(0, INPUT_LEN))] = marker
        return tuple(words)
    if family == "position":
        marker = grammar["marker"]
        words = draw(INPUT_LEN, exclude=(marker,))
        words[int(rng.integers(0, INPUT_LEN))] = marker
        return tuple(words)
    if family == "parity":
        marker = grammar["marker"]
        words = draw(INPUT_LEN, exclude=(marker,))
        count = int(rng.integers(1, 3))
        for slot in rng.choice(INPUT_LEN, size=count, replace=False):
            words[int(slot)] = marker
        return tuple(words)
    if family == "relation":
        a, b = grammar["marker"], grammar["marker_b"]
        words = draw(INPUT_LEN, exclude=(a, b))
        first = a if rng.random() < 0.5 else b
        last = first if rng.random() < 0.5 else (b if first == a else a)
        words[0], words[-1] = first, last
        return tuple(words)
    if family == "topic":
        dominant = grammar["groups"][int(rng.integers(0, 2))]
        inside = list(CONTENT_GROUPS[dominant])
        outside = [w for w in pool if w not in CONTENT_GROUPS[dominant]]
        words = [inside[i] for i in rng.integers(0, len(inside), size=4)]
        words += [outside[i] for i in rng.integers(0, len(outside), size=2)]
        return tuple(words[i] for i in rng.permutation(INPUT_LEN))
    raise ConfigError(f"unknown family {family!r}")


def _build_specs(num_tasks: int, rng: np.random.Generator) -> tuple[TaskSpec, ...]:
    marker_order = [CONTENT_POOL[i] for i in rng.permutation(len(CONTENT_POOL))]
    markers = iter(marker_order)
    family_markers: dict[str, tuple] = {}
    specs = []
    for i in range(num_tasks):
        family = _FAMILIES[i % len(_FAMILIES)]
        variant = i // len(_FAMILIES)
        spec_def = _VARIANTS[family]
        labels = spec_def["labels"][variant]
        phrasing = spec_def["phrasings"][variant]
        grammar = {"family": family, "labels": labels}
        # a repeated family is a near-duplicate task: same markers and rule,
        # fresh phrasing and label words
        if family in ("presence", "position", "parity"):
            if family not in family_markers:
                family_markers[family] = (next(markers),)
            grammar["marker"] = family_markers[family][0]
            task_id = f"t{i + 1:02d}-{family}-{grammar['marker']}"
        elif family == "relation":
            if family not in family_markers:
                family_markers[family] = (next(markers), next(markers))
            grammar["marker"], grammar["marker_b"] = family_markers[family]
            task_id = f"t{i + 1:02d}-{family}-{grammar['marker']}-{grammar['marker_b']}"
        else:
            grammar["groups"] = spec_def["groups"][variant]
            task_id = f"t{i + 1:02d}-{family}-{labels[0]}"
        phrase = phrasing.format(marker=grammar.get("marker", ""))
        instruction = (f"{phrase} , options {labels[0]} or {labels[1]} : {{input}}")
        rationale = f"{SCAFFOLD_BODY} . {RESULT_MARKER} {{answer}}"
        specs.append(TaskSpec(
            task_id=task_id,
            instruction_template=" ".join(instruction.split()),
            label_set=labels,
            input_grammar=grammar,
            rationale_template=" ".join(rationale.split()),
        ))
    return tuple(specs)


def render_example(spec: TaskSpec, raw_input, seed: int, ex_id: str | None = None) -> Example:
    """Fill the instruction and rationale templates for one raw input."""
    words = tuple(raw_input)
    _validate_input(spec.input_grammar, words)
    answer = _label_of(spec.input_grammar, words)
    instruction = spec.instruction_template.format(input=" ".join(words))
    rationale_full = spec.rationale_template.format(
        feature=spec.feature_for(answer), answer=answer)
    rationale = rationale_full.split(f" {RESULT_MARKER} ")[0]
    return Example(
        task_id=spec.task_id,
        id=ex_id if ex_id is not None else f"{spec.task_id}-adhoc-{seed}",
        instruction=tuple(instruction.split()),
        rationale=tuple(rationale.split()),
        answer=answer,
    )


def make_suite(num_tasks: int, train_per_task: int, eval_per_task: int, seed: int,
               probe_per_task: int = 32) -> Suite:
    """Generate specs plus disjoint train/eval/probe sets and two task orders."""
    if num_tasks < 2:
        raise ConfigError("a suite needs at least 2 tasks")
    if num_tasks > MAX_TASKS:
        raise ConfigError(f"at most {MAX_TASKS} tasks are supported")
    if train_per_task <= 0 or eval_per_task <= 0 or probe_per_task <= 0:
        raise ConfigError("per-task sizes must be positive")

    rng = np.random.default_rng(seed)
    specs = _build_specs(num_tasks, rng)

    splits = {"train": train_per_task, "eval": eval_per_task, "probe": probe_per_task}
    sets: dict[str, dict[str, tuple[Example, ...]]] = {name: {} for name in splits}
    for spec in specs:
        seen: set[tuple[str, ...]] = set()
        for split, size in splits.items():
            examples = []
            attempts = 0
            while len(examples) < size:
                attempts += 1
                if attempts > 1000 * size:
                    raise ConfigError(
                        f"could not draw {size} distinct inputs for {spec.task_id}")
                words = _sample_input(spec.input_grammar, rng)
                if words in seen:
                    continue
                seen.add(words)
                ex_id = f"{spec.task_id}-{split}-{len(examples):04d}"
                examples.append(render_example(
                    spec, words, seed=int(rng.integers(0, 2**31)), ex_id=ex_id))
            sets[split][spec.task_id] = tuple(examples)

    first = tuple(s.task_id for s in specs)
    second = first
    while second == first:
        second = tuple(first[i] for i in rng.permutation(num_tasks))
    return Suite(
        specs=specs,
        train=sets["train"],
        eval=sets["eval"],
        probe=sets["probe"],
        orders=(first, second),
        seed=seed,
    )


WARMUP_TASK_ID = "warmup-hint"
_WARMUP_PHRASE = "follow the cue for this row"


def label_lexicon() -> tuple[str, ...]:
    """Every answer word across all families and variants, in a fixed order."""
    words = []
    for spec_def in _VARIANTS.values():
        for labels in spec_def["labels"]:
            words.extend(labels)
    return tuple(words)


def make_warmup_corpus(n_examples: int, seed: int,
                       uncond_fraction: float = 0.5) -> tuple[Example, ...]:
    """Base-skills corpus: hint-guided rationale completion.

    Each example names one of the two global feature words as a hint, lists
    two answer options in a seeded order, and completes the shared rationale
    scaffold with that feature; the answer is the option the feature points
    at (first feature, first listed option).  Training on this corpus teaches
    the output convention and the task-agnostic feature-to-option rule before
    any task is seen; task instructions never carry hints, so the per-task
    triggers stay unlearned.  The option slots sit at the same distance from
    the input as in task instructions.

    A seeded fraction of the corpus consists of the same chains with an
    empty instruction: standalone reasoning text that puts the start-of-text
    windows in distribution, anchoring unconditional rationale perplexity.
    """
    if n_examples <= 0:
        raise ConfigError("n_examples must be positive")
    if not 0.0 <= uncond_fraction <= 1.0:
        raise ConfigError("uncond_fraction must be in [0, 1]")
    lexicon = label_lexicon()
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n_examples):
        pick = int(rng.integers(0, 2))
        feature = GLOBAL_FEATURES[pick]
        first = lexicon[int(rng.integers(0, len(lexicon)))]
        second = first
        while second == first:
            second = lexicon[int(rng.integers(0, len(lexicon)))]
        answer = (first, second)[pick]
        words = [CONTENT_POOL[j] for j in rng.integers(0, len(CONTENT_POOL), size=INPUT_LEN)]
        if rng.random() < uncond_fraction:
            instruction: tuple[str, ...] = ()
        else:
            instruction = tuple(
                (f"{_WARMUP_PHRASE} , hint {feature} , options {first} or {second} "
                 f": {' '.join(words)}").split())
        rationale = f"{SCAFFOLD_BODY.format(feature=feature)} ."
        examples.append(Example(
            task_id=WARMUP_TASK_ID,
            id=f"{WARMUP_TASK_ID}-{i:04d}",
            instruction=instruction,
            rationale=tuple(rationale.split()),
            answer=answer,
        ))
    return tuple(examples)


def training_target_tokens(ex: Example) -> tuple[str, ...]:
    """Target tokens for teacher forcing; the trainer appends EOS after these."""
    return ex.rationale + (RESULT_MARKER, ex.answer)


def partial_rationale_prompt(ex: Example, k: float) -> tuple[str, ...]:
    """Instruction plus the first ceil(k * |r|) rationale tokens."""
    if not 0.0 <= k <= 1.0:
        raise ConfigError("k must be in [0, 1]")
    n = math.ceil(k * len(ex.rationale))
    return ex.instruction + ex.rationale[:n]


def tap_prompt(ex: Example, demos, context_template: str = DEFAULT_TAP_TEMPLATE) -> tuple[str, ...]:
    """Context template, fully rendered unrelated demos, then the instruction."""
    tokens = tuple(context_template.split())
    for demo in demos:
        if demo.task_id == ex.task_id:
            raise ConfigError(
                f"demo {demo.id} comes from the evaluated task {ex.task_id}")
        tokens += demo.instruction + demo.rationale + (RESULT_MARKER, demo.answer)
    return tokens + ex.instruction


def suite_tokens(suite: Suite) -> set[str]:
    """Every surface token a model over this suite can encounter.

    Includes the base-skills lexicon (all feature/label pairs plus the hint
    phrasing), so checkpoints work with any warmup corpus over the suite.
    """
    tokens = {RESULT_MARKER}
    tokens.update(DEFAULT_TAP_TEMPLATE.split())
    tokens.update(_WARMUP_PHRASE.split())
    tokens.update(PROMPT_PREFIX)
    tokens.update(("hint", "options", "or", ",", ":", "."))
    tokens.update(CONTENT_POOL)
    tokens.update(GLOBAL_FEATURES)
    tokens.update(label_lexicon())
    for split in (suite.train, suite.eval, suite.probe):
        for examples in split.values():
            for ex in examples:
                tokens.update(ex.instruction)
                tokens.update(ex.rationale)
                tokens.add(ex.answer)
    for spec in suite.specs:
        tokens.update(spec.label_set)
    return tokens


def scan_answer_leak(examples, spec: TaskSpec) -> list[str]:
    """Ids of examples whose rationale leaks a label before the final clause.

    Checked against the task's whole label set, both in the first 30% of the
    rationale and anywhere before the last clause separator.
    """
    leaking = []
    labels = set(spec.label_set)
    for ex in examples:
        r = ex.rationale
        prefix = r[:math.ceil(0.3 * len(r))]
        last_sep = max((i for i, t in enumerate(r) if t == "."), default=len(r))
        before_final = r[:last_sep]
        if labels & set(prefix) or labels & set(before_final):
            leaking.append(ex.id)
    return leaking
