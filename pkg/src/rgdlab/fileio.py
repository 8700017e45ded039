"""File formats, configuration loading and the external-record adapter.

Corpora and record streams are JSON-lines with fixed field names; matrices
and report tables are CSV.  Everything written here is a pure function of
its inputs, so rerunning a configuration reproduces files byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field

from . import clmetrics, driver, replay, rgd, taskgen
from .errors import ConfigError, InputError, ParseError

METRIC_COLUMNS = ("FAP", "F.Ra", "BWT", "FWT", "CAP")
REPORT_STRATEGY_LABELS = {
    "single": "Single",
    "multi": "Multi",
    "none": "CL",
    "equal": "EA",
    "inscl": "InsCL",
    "rgd-mean": "RGD",
    "rgd-mean-minus-std": "RGD-ms",
}
REPORT_ROW_ORDER = ("Single", "Multi", "CL", "EA", "InsCL", "RGD", "RGD-ms")


def _fmt(value) -> str:
    """CSV cell for a metric value: three decimals, no trailing zeros."""
    if value is None:
        return ""
    return repr(round(float(value), 3))


# ---------------------------------------------------------------- examples

def write_examples(examples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({
                "task": ex.task_id,
                "id": ex.id,
                "instruction": " ".join(ex.instruction),
                "rationale": " ".join(ex.rationale),
                "answer": ex.answer,
            }) + "\n")


def read_examples(path) -> list[taskgen.Example]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                ex = taskgen.Example(
                    task_id=doc["task"],
                    id=doc["id"],
                    instruction=tuple(doc["instruction"].split()),
                    rationale=tuple(doc["rationale"].split()),
                    answer=doc["answer"],
                )
            except (json.JSONDecodeError, KeyError, TypeError) as err:
                raise ParseError(f"{path}:{lineno}: bad example record: {err}") from None
            if not ex.rationale:
                raise ParseError(f"{path}:{lineno}: empty rationale")
            out.append(ex)
    return out


# ------------------------------------------------------------- PPL records

def export_ppl_records(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "task": r.task_id,
                "id": r.example_id,
                "nll_cond_sum": r.nll_cond_sum,
                "nll_uncond_sum": r.nll_uncond_sum,
                "n_rationale_tokens": r.n_rationale_tokens,
            }) + "\n")


def import_ppl_records(path) -> list[rgd.PplRecord]:
    """All-or-nothing load; malformed lines are reported with their number."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                record = rgd.PplRecord(
                    task_id=doc["task"],
                    example_id=doc["id"],
                    nll_cond_sum=float(doc["nll_cond_sum"]),
                    nll_uncond_sum=float(doc["nll_uncond_sum"]),
                    n_rationale_tokens=int(doc["n_rationale_tokens"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError, InputError) as err:
                raise ParseError(f"{path}:{lineno}: bad record: {err}") from None
            out.append(record)
    return out


# ------------------------------------------------------ plans and summaries

def write_plan(plan: replay.AllocationPlan, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(plan_doc(plan), fh, indent=1)
        fh.write("\n")


def plan_doc(plan: replay.AllocationPlan) -> dict:
    return {
        "budget": plan.budget,
        "strategy": plan.strategy,
        "counts": dict(plan.counts),
        "shortfalls": dict(plan.shortfalls),
    }


def read_plan(path) -> replay.AllocationPlan:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        return replay.AllocationPlan(
            budget=doc["budget"], strategy=doc["strategy"],
            counts={k: int(v) for k, v in doc["counts"].items()},
            shortfalls={k: int(v) for k, v in doc.get("shortfalls", {}).items()},
        )
    except (KeyError, TypeError, ValueError) as err:
        raise ParseError(f"{path}: bad plan: {err}") from None


def summary_doc(summary: rgd.RgdSummary, stage: int | None = None) -> dict:
    doc = {"task": summary.task_id, "mean": summary.mean,
           "std": summary.std, "n": summary.n}
    if stage is not None:
        doc = {"stage": stage, **doc}
    return doc


def write_summaries(docs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc) + "\n")


def read_summaries(path) -> list[rgd.RgdSummary]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                out.append(rgd.RgdSummary(task_id=doc["task"], mean=float(doc["mean"]),
                                          std=float(doc["std"]), n=int(doc["n"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as err:
                raise ParseError(f"{path}:{lineno}: bad summary: {err}") from None
    return out


# --------------------------------------------------------- matrices, reports

def matrix_csv_text(m: clmetrics.PerfMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["stage"] + list(m.order))
    for i, row in enumerate(m.rows):
        writer.writerow([str(i + 1)] + [repr(float(v)) for v in row]
                        + [""] * (m.num_tasks - len(row)))
    writer.writerow(["a0"] + [repr(float(v)) for v in m.a0])
    return buf.getvalue()


def write_matrix(m: clmetrics.PerfMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(matrix_csv_text(m))


def read_matrix(path) -> clmetrics.PerfMatrix:
    with open(path, encoding="utf-8") as fh:
        reader = list(csv.reader(fh))
    if not reader or reader[0][:1] != ["stage"]:
        raise ParseError(f"{path}: missing matrix header")
    order = tuple(reader[0][1:])
    rows = []
    a0 = None
    try:
        for row in reader[1:]:
            if not row:
                continue
            if row[0] == "a0":
                a0 = tuple(float(v) for v in row[1:1 + len(order)])
                continue
            stage = int(row[0])
            rows.append((stage, tuple(float(v) for v in row[1:1 + stage])))
    except ValueError as err:
        raise ParseError(f"{path}: bad matrix cell: {err}") from None
    if a0 is None:
        raise ParseError(f"{path}: missing a0 row")
    rows.sort(key=lambda sr: sr[0])
    if [s for s, _ in rows] != list(range(1, len(order) + 1)):
        raise ParseError(f"{path}: stages must be 1..{len(order)}")
    return clmetrics.PerfMatrix(order=order, rows=tuple(r for _, r in rows), a0=a0)


def report_json_doc(report: clmetrics.MetricsReport) -> dict:
    return {
        "fap": report.fap, "f_ra": report.f_ra, "bwt": report.bwt,
        "fwt": report.fwt, "cap": report.cap,
        "per_task_forgetting": dict(report.per_task_forgetting),
    }


def report_csv_text(report: clmetrics.MetricsReport) -> str:
    values = (report.fap, report.f_ra, report.bwt, report.fwt, report.cap)
    return ",".join(METRIC_COLUMNS) + "\n" + ",".join(_fmt(v) for v in values) + "\n"


# --------------------------------------------------------- comparison table

@dataclass(frozen=True)
class TableRecord:
    """One run's metric set plus the grouping metadata used for averaging."""

    strategy: str                       # key of REPORT_STRATEGY_LABELS
    run_seed: int
    order_index: int
    suite_fingerprint: str
    fap: float
    cap: float
    f_ra: float | None = None
    bwt: float | None = None
    fwt: float | None = None


def suite_fingerprint(suite: taskgen.Suite) -> str:
    sizes = (len(next(iter(suite.train.values()))), len(next(iter(suite.eval.values()))),
             len(next(iter(suite.probe.values()))))
    return f"tasks={len(suite.specs)};sizes={sizes};seed={suite.seed}"


def emit_report(records, path_csv, path_raw=None) -> str:
    """Averaged comparison table; raw per-run values retained alongside.

    Rows follow the fixed strategy order; every record must come from the
    same suite.
    """
    records = list(records)
    if not records:
        raise InputError("no records to report")
    prints = {r.suite_fingerprint for r in records}
    if len(prints) != 1:
        raise InputError(f"records mix different suites: {sorted(prints)}")

    by_label: dict[str, list[TableRecord]] = {}
    for r in records:
        label = REPORT_STRATEGY_LABELS.get(r.strategy)
        if label is None:
            raise InputError(f"unknown strategy {r.strategy!r}")
        by_label.setdefault(label, []).append(r)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["strategy"] + list(METRIC_COLUMNS))
    for label in REPORT_ROW_ORDER:
        if label not in by_label:
            continue
        group = by_label[label]

        def mean_of(attr):
            values = [getattr(g, attr) for g in group]
            if any(v is None for v in values):
                return None
            return sum(values) / len(values)

        writer.writerow([label, _fmt(mean_of("fap")), _fmt(mean_of("f_ra")),
                         _fmt(mean_of("bwt")), _fmt(mean_of("fwt")), _fmt(mean_of("cap"))])
    text = buf.getvalue()
    if path_csv is not None:
        with open(path_csv, "w", encoding="utf-8") as fh:
            fh.write(text)
    if path_raw is not None:
        raw = [{
            "strategy": r.strategy, "run_seed": r.run_seed, "order_index": r.order_index,
            "suite": r.suite_fingerprint, "fap": r.fap, "f_ra": r.f_ra,
            "bwt": r.bwt, "fwt": r.fwt, "cap": r.cap,
        } for r in records]
        with open(path_raw, "w", encoding="utf-8") as fh:
            json.dump(raw, fh, indent=1)
            fh.write("\n")
    return text


def experiment_table_records(result: driver.ExperimentResult) -> list[TableRecord]:
    """Rows for every run plus Single/Multi baseline pseudo-rows."""
    fingerprint = suite_fingerprint(result.suite)
    records = []
    for seed, scores in result.singles.items():
        mean = sum(scores.values()) / len(scores)
        records.append(TableRecord(strategy="single", run_seed=seed, order_index=0,
                                   suite_fingerprint=fingerprint, fap=mean, cap=mean))
    for seed, scores in result.multis.items():
        mean = sum(scores.values()) / len(scores)
        records.append(TableRecord(strategy="multi", run_seed=seed, order_index=0,
                                   suite_fingerprint=fingerprint, fap=mean, cap=mean))
    for run in result.runs:
        records.append(TableRecord(
            strategy=run.strategy, run_seed=run.run_seed, order_index=run.order_index,
            suite_fingerprint=fingerprint, fap=run.report.fap, cap=run.report.cap,
            f_ra=run.report.f_ra, bwt=run.report.bwt, fwt=run.report.fwt))
    return records


# --------------------------------------------------------------- probe CSVs

def partial_probe_csv_text(rows) -> str:
    """rows: iterable of (task, k, accuracy)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["task", "k", "accuracy"])
    for task, k, acc in rows:
        writer.writerow([task, repr(float(k)), repr(float(acc))])
    return buf.getvalue()


def tap_probe_csv_text(rows) -> str:
    """rows: iterable of (task, demo_count, draw, accuracy)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["task", "demo_count", "draw", "accuracy"])
    for task, count, draw, acc in rows:
        writer.writerow([task, count, draw, repr(float(acc))])
    return buf.getvalue()


# ------------------------------------------------------ experiment config

_SUITE_KEYS = {"num_tasks", "train_per_task", "eval_per_task", "probe_per_task", "seed"}
_MODEL_KEYS = {"context_len", "embed_dim", "hidden_dim"}
_TRAIN_KEYS = {"learning_rate", "epochs", "batch_size", "momentum", "shuffle"}
_REPLAY_KEYS = {"budget", "budget_fraction"}
_PROBE_KEYS = {"k_grid", "demo_counts", "demo_draws", "top_forgotten"}
_TOP_KEYS = {"suite", "model", "train", "warmup", "warmup_examples", "replay",
             "strategies", "run_seeds", "orders", "probes", "run_probes",
             "output_dir", "threads", "save_checkpoints", "rgd_eval_size",
             "max_gen_len"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, fully-resolved description of a run-seq experiment."""

    suite_num_tasks: int
    suite_train: int
    suite_eval: int
    suite_probe: int
    suite_seed: int
    plan: driver.ExperimentPlan
    output_dir: str
    save_checkpoints: bool = True
    raw: dict = field(default_factory=dict, compare=False)

    def make_suite(self) -> taskgen.Suite:
        return taskgen.make_suite(self.suite_num_tasks, self.suite_train,
                                  self.suite_eval, seed=self.suite_seed,
                                  probe_per_task=self.suite_probe)


def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in {where}")


def load_experiment_config(path, output_dir=None) -> ExperimentConfig:
    """Parse and validate a config file; every seed must be explicit."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise ParseError(f"{path}: not valid JSON: {err}") from None
    return experiment_config_from_dict(doc, output_dir=output_dir, where=str(path))


def experiment_config_from_dict(doc: dict, output_dir=None, where="config") -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: config must be a JSON object")
    _check_keys(doc, _TOP_KEYS, where)

    suite = doc.get("suite")
    if not isinstance(suite, dict):
        raise ConfigError(f"{where}: missing 'suite' section")
    _check_keys(suite, _SUITE_KEYS, "suite")
    if "seed" not in suite:
        raise ConfigError("suite.seed is required; seeds are never implicit")

    model = dict(doc.get("model", {}))
    _check_keys(model, _MODEL_KEYS, "model")
    train = dict(doc.get("train", {}))
    _check_keys(train, _TRAIN_KEYS, "train")
    warmup = dict(doc.get("warmup", {}))
    _check_keys(warmup, _TRAIN_KEYS, "warmup")
    replay_cfg = dict(doc.get("replay", {}))
    _check_keys(replay_cfg, _REPLAY_KEYS, "replay")
    probes = dict(doc.get("probes", {}))
    _check_keys(probes, _PROBE_KEYS, "probes")

    run_seeds = doc.get("run_seeds")
    if not run_seeds or not isinstance(run_seeds, list):
        raise ConfigError("run_seeds is required and must be a nonempty list")

    orders = doc.get("orders", "both")
    if orders == "both":
        order_indices = (0, 1)
    elif isinstance(orders, list) and orders and all(o in (0, 1) for o in orders):
        order_indices = tuple(orders)
    else:
        raise ConfigError("orders must be \"both\" or a list of 0/1 indices")

    strategies = doc.get("strategies", ["none", "equal", "inscl", "rgd-mean"])

    defaults = driver.ExperimentPlan(strategies=("none",), run_seeds=(0,))
    plan = driver.ExperimentPlan(
        strategies=tuple(strategies),
        run_seeds=tuple(int(s) for s in run_seeds),
        order_indices=order_indices,
        dims=driver.ModelDims(**model),
        train=driver.TrainSettings(**train) if train else defaults.train,
        warmup=driver.TrainSettings(**warmup) if warmup else defaults.warmup,
        warmup_examples=int(doc.get("warmup_examples", defaults.warmup_examples)),
        replay_budget=replay_cfg.get("budget"),
        replay_fraction=float(replay_cfg.get("budget_fraction", defaults.replay_fraction)),
        rgd_eval_size=int(doc.get("rgd_eval_size", defaults.rgd_eval_size)),
        max_gen_len=int(doc.get("max_gen_len", defaults.max_gen_len)),
        run_probes=bool(doc.get("run_probes", False)),
        k_grid=tuple(float(k) for k in probes.get("k_grid", defaults.k_grid)),
        demo_counts=tuple(int(c) for c in probes.get("demo_counts", defaults.demo_counts)),
        demo_draws=int(probes.get("demo_draws", defaults.demo_draws)),
        top_forgotten=int(probes.get("top_forgotten", defaults.top_forgotten)),
        threads=int(doc.get("threads", 1)),
        keep_checkpoints=bool(doc.get("save_checkpoints", True)),
    )

    out = output_dir or doc.get("output_dir") or os.environ.get("RGDLAB_OUT")
    if not out:
        raise ConfigError("output_dir is required (flag, config key, or RGDLAB_OUT)")

    return ExperimentConfig(
        suite_num_tasks=int(suite["num_tasks"]),
        suite_train=int(suite["train_per_task"]),
        suite_eval=int(suite["eval_per_task"]),
        suite_probe=int(suite.get("probe_per_task", 32)),
        suite_seed=int(suite["seed"]),
        plan=plan,
        output_dir=str(out),
        save_checkpoints=bool(doc.get("save_checkpoints", True)),
        raw=doc,
    )


def resolved_config_doc(cfg: ExperimentConfig) -> dict:
    """Every effective setting, defaults included, for the run-dir snapshot."""
    plan = cfg.plan
    return {
        "suite": {"num_tasks": cfg.suite_num_tasks, "train_per_task": cfg.suite_train,
                  "eval_per_task": cfg.suite_eval, "probe_per_task": cfg.suite_probe,
                  "seed": cfg.suite_seed},
        "model": {"context_len": plan.dims.context_len, "embed_dim": plan.dims.embed_dim,
                  "hidden_dim": plan.dims.hidden_dim},
        "train": {"learning_rate": plan.train.learning_rate, "epochs": plan.train.epochs,
                  "batch_size": plan.train.batch_size, "momentum": plan.train.momentum,
                  "shuffle": plan.train.shuffle},
        "warmup": {"learning_rate": plan.warmup.learning_rate, "epochs": plan.warmup.epochs,
                   "batch_size": plan.warmup.batch_size, "momentum": plan.warmup.momentum,
                   "shuffle": plan.warmup.shuffle},
        "warmup_examples": plan.warmup_examples,
        "strategies": list(plan.strategies),
        "run_seeds": list(plan.run_seeds),
        "orders": list(plan.order_indices),
        "replay": {"budget": plan.replay_budget, "budget_fraction": plan.replay_fraction},
        "rgd_eval_size": plan.rgd_eval_size,
        "max_gen_len": plan.max_gen_len,
        "run_probes": plan.run_probes,
        "probes": {"k_grid": list(plan.k_grid), "demo_counts": list(plan.demo_counts),
                   "demo_draws": plan.demo_draws, "top_forgotten": plan.top_forgotten},
        "threads": plan.threads,
        "save_checkpoints": cfg.save_checkpoints,
    }
