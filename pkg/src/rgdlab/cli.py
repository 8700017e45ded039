"""Command-line entry point.

Subcommands: gen-suite, run-seq, probe, score-rgd, allocate, metrics, report.
Every command exits 0 only if all requested artifacts were written; argument
or validation problems print a message and exit nonzero.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import clmetrics, driver, fileio, replay, rgd, taskgen, tinylm
from .errors import RgdLabError


def _write_suite(suite: taskgen.Suite, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for split, table in (("train", suite.train), ("eval", suite.eval),
                         ("probe", suite.probe)):
        examples = [ex for spec in suite.specs for ex in table[spec.task_id]]
        fileio.write_examples(examples, os.path.join(out_dir, f"{split}.jsonl"))
    manifest = {
        "seed": suite.seed,
        "num_tasks": len(suite.specs),
        "orders": [list(o) for o in suite.orders],
        "tasks": [{
            "task_id": s.task_id,
            "instruction_template": s.instruction_template,
            "label_set": list(s.label_set),
            "input_grammar": {k: list(v) if isinstance(v, tuple) else v
                              for k, v in s.input_grammar.items()},
            "rationale_template": s.rationale_template,
        } for s in suite.specs],
    }
    with open(os.path.join(out_dir, "suite.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")


def _cmd_gen_suite(args) -> int:
    suite = taskgen.make_suite(args.tasks, args.train, args.eval_, seed=args.seed,
                               probe_per_task=args.probe)
    _write_suite(suite, args.out)
    leaks = [leak for spec in suite.specs
             for leak in taskgen.scan_answer_leak(
                 suite.train[spec.task_id] + suite.eval[spec.task_id]
                 + suite.probe[spec.task_id], spec)]
    if leaks:
        print(f"answer-leak scan failed for: {leaks[:5]}", file=sys.stderr)
        return 1
    print(f"suite written to {args.out}")
    return 0


def _run_dir_name(record: driver.RunRecord) -> str:
    return f"{record.strategy}-o{record.order_index}-s{record.run_seed}"


def _write_run_artifacts(result: driver.ExperimentResult, cfg: fileio.ExperimentConfig) -> None:
    root = cfg.output_dir
    os.makedirs(root, exist_ok=True)
    given = {k: v for k, v in cfg.raw.items() if k != "output_dir"}
    with open(os.path.join(root, "config.json"), "w", encoding="utf-8") as fh:
        json.dump({"given": given, "resolved": fileio.resolved_config_doc(cfg)},
                  fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(root, "singles.json"), "w", encoding="utf-8") as fh:
        json.dump({str(k): v for k, v in result.singles.items()}, fh, indent=1)
        fh.write("\n")
    with open(os.path.join(root, "multis.json"), "w", encoding="utf-8") as fh:
        json.dump({str(k): v for k, v in result.multis.items()}, fh, indent=1)
        fh.write("\n")

    for record in result.runs:
        run_dir = os.path.join(root, "runs", _run_dir_name(record))
        os.makedirs(run_dir, exist_ok=True)
        fileio.write_matrix(record.result.matrix, os.path.join(run_dir, "matrix.csv"))
        plan_docs = [fileio.plan_doc(p) for p in record.result.plans if p is not None]
        with open(os.path.join(run_dir, "plans.jsonl"), "w", encoding="utf-8") as fh:
            for doc in plan_docs:
                fh.write(json.dumps(doc) + "\n")
        summary_docs = [fileio.summary_doc(s, stage=i + 1)
                        for i, stage in enumerate(record.result.summaries)
                        for s in stage.values()]
        fileio.write_summaries(summary_docs, os.path.join(run_dir, "summaries.jsonl"))
        if cfg.save_checkpoints and record.result.checkpoints:
            ckpt_dir = os.path.join(run_dir, "checkpoints")
            os.makedirs(ckpt_dir, exist_ok=True)
            for i, model in enumerate(record.result.checkpoints):
                tinylm.save_model(model, os.path.join(ckpt_dir, f"stage-{i + 1:02d}.json"))

    if result.probes:
        partial_rows = [(p.task_id, k, acc) for p in result.probes for k, acc in p.partial]
        tap_rows = [(p.task_id, count, draw, acc)
                    for p in result.probes for count, draw, acc in p.tap.grid]
        with open(os.path.join(root, "probe_partial.csv"), "w", encoding="utf-8") as fh:
            fh.write(fileio.partial_probe_csv_text(partial_rows))
        with open(os.path.join(root, "probe_tap.csv"), "w", encoding="utf-8") as fh:
            fh.write(fileio.tap_probe_csv_text(tap_rows))

    fileio.emit_report(fileio.experiment_table_records(result),
                       os.path.join(root, "report.csv"),
                       os.path.join(root, "report_raw.json"))


def _cmd_run_seq(args) -> int:
    cfg = fileio.load_experiment_config(args.config, output_dir=args.out)
    plan = cfg.plan
    if args.threads is not None:
        plan = dataclasses.replace(plan, threads=args.threads)
    suite = cfg.make_suite()
    result = driver.run_experiment(suite, plan)
    _write_run_artifacts(result, cfg)
    print(f"experiment artifacts written to {cfg.output_dir}")
    return 0


def _cmd_probe(args) -> int:
    cfg = fileio.load_experiment_config(args.config, output_dir=args.out or ".")
    suite = cfg.make_suite()
    model = tinylm.load_model(args.checkpoint)
    examples = suite.eval.get(args.task)
    if examples is None:
        print(f"unknown task {args.task!r}", file=sys.stderr)
        return 1
    wrote = []
    if args.kind in ("partial", "both"):
        grid = driver.probe_partial_rationale(model, examples, cfg.plan.k_grid,
                                              cfg.plan.max_gen_len)
        path = os.path.join(cfg.output_dir, f"probe_partial_{args.task}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(fileio.partial_probe_csv_text([(args.task, k, a) for k, a in grid]))
        wrote.append(path)
    if args.kind in ("tap", "both"):
        pool = [ex for spec in suite.specs if spec.task_id != args.task
                for ex in suite.train[spec.task_id]]
        tap = driver.probe_tap(model, examples, pool, cfg.plan.demo_counts,
                               cfg.plan.demo_draws, seed=args.seed,
                               max_gen_len=cfg.plan.max_gen_len)
        path = os.path.join(cfg.output_dir, f"probe_tap_{args.task}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(fileio.tap_probe_csv_text(
                [(args.task, c, d, a) for c, d, a in tap.grid]))
        wrote.append(path)
    print("wrote " + ", ".join(wrote))
    return 0


def _cmd_score_rgd(args) -> int:
    if args.from_records:
        records = fileio.import_ppl_records(args.from_records)
        by_task: dict[str, list] = {}
        for r in records:
            by_task.setdefault(r.task_id, []).append(r)
        docs = []
        for task in sorted(by_task):
            summary, scalar = rgd.task_rgd(by_task[task], aggregator=args.aggregator)
            docs.append({**fileio.summary_doc(summary), "scalar": scalar})
    else:
        if not (args.checkpoint and args.config):
            print("need --from-records, or --checkpoint with --config", file=sys.stderr)
            return 1
        cfg = fileio.load_experiment_config(args.config, output_dir=args.out or ".")
        suite = cfg.make_suite()
        model = tinylm.load_model(args.checkpoint)
        docs = []
        for spec in suite.specs:
            if args.task and spec.task_id != args.task:
                continue
            summary = driver.score_task_rgd(model, suite.probe[spec.task_id],
                                            cfg.plan.rgd_eval_size)
            docs.append({**fileio.summary_doc(summary),
                         "scalar": rgd.summary_scalar(summary, args.aggregator)})
    if args.out_file:
        fileio.write_summaries(docs, args.out_file)
    for doc in docs:
        print(json.dumps(doc))
    return 0


def _parse_kv(text: str) -> dict[str, float]:
    out = {}
    for part in text.split(","):
        if not part:
            continue
        key, _, value = part.partition("=")
        if not _:
            raise RgdLabError(f"expected task=value, got {part!r}")
        out[key] = float(value)
    if not out:
        raise RgdLabError("no task=value pairs given")
    return out


def _cmd_allocate(args) -> int:
    if args.strategy == "equal":
        if not args.tasks:
            print("equal allocation needs --tasks", file=sys.stderr)
            return 1
        plan = replay.allocate_equal(args.tasks.split(","), args.alpha)
    elif args.strategy == "rgd":
        plan = replay.allocate_rgd(_parse_kv(args.scores), args.alpha)
    elif args.strategy == "inscl":
        plan = replay.allocate_inscl(_parse_kv(args.distances), args.alpha)
    else:
        print(f"unknown strategy {args.strategy!r}", file=sys.stderr)
        return 1
    if args.pools:
        plan = replay.fit_to_pools(plan, {k: int(v) for k, v in _parse_kv(args.pools).items()})
    doc = fileio.plan_doc(plan)
    if args.out_file:
        fileio.write_plan(plan, args.out_file)
    print(json.dumps(doc))
    return 0


def _cmd_metrics(args) -> int:
    matrix = fileio.read_matrix(args.matrix)
    report = clmetrics.compute_report(matrix)
    if args.out_json:
        with open(args.out_json, "w", encoding="utf-8") as fh:
            json.dump(fileio.report_json_doc(report), fh, indent=1)
            fh.write("\n")
    if args.out_csv:
        with open(args.out_csv, "w", encoding="utf-8") as fh:
            fh.write(fileio.report_csv_text(report))
    print(fileio.report_csv_text(report), end="")
    return 0


def _cmd_report(args) -> int:
    records = []
    for root in args.runs:
        raw_path = os.path.join(root, "report_raw.json")
        with open(raw_path, encoding="utf-8") as fh:
            for doc in json.load(fh):
                records.append(fileio.TableRecord(
                    strategy=doc["strategy"], run_seed=doc["run_seed"],
                    order_index=doc["order_index"], suite_fingerprint=doc["suite"],
                    fap=doc["fap"], cap=doc["cap"], f_ra=doc["f_ra"],
                    bwt=doc["bwt"], fwt=doc["fwt"]))
    text = fileio.emit_report(records, args.out_file, None)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rgdlab",
        description="Desk-scale continual-learning lab with difficulty-guided replay.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-suite", help="generate synthetic task corpora")
    p.add_argument("--tasks", type=int, required=True)
    p.add_argument("--train", type=int, required=True)
    p.add_argument("--eval", dest="eval_", type=int, required=True)
    p.add_argument("--probe", type=int, default=32)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_suite)

    p = sub.add_parser("run-seq", help="run the full sequential experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="overrides config output_dir")
    p.add_argument("--threads", type=int, default=None,
                   help="bounds worker parallelism across independent runs")
    p.set_defaults(func=_cmd_run_seq)

    p = sub.add_parser("probe", help="probe a checkpoint on one task")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--kind", choices=("partial", "tap", "both"), default="both")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("score-rgd", help="difficulty summaries from records or a checkpoint")
    p.add_argument("--from-records", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--task", default=None)
    p.add_argument("--aggregator", choices=rgd.AGGREGATORS, default="mean")
    p.add_argument("--out", default=None)
    p.add_argument("--out-file", default=None)
    p.set_defaults(func=_cmd_score_rgd)

    p = sub.add_parser("allocate", help="compute a replay allocation plan")
    p.add_argument("--strategy", choices=("equal", "rgd", "inscl"), required=True)
    p.add_argument("--alpha", type=int, required=True)
    p.add_argument("--tasks", default=None, help="comma-separated ids (equal)")
    p.add_argument("--scores", default=None, help="task=score,... (rgd)")
    p.add_argument("--distances", default=None, help="task=distance,... (inscl)")
    p.add_argument("--pools", default=None, help="task=pool_size,... caps the counts")
    p.add_argument("--out-file", default=None)
    p.set_defaults(func=_cmd_allocate)

    p = sub.add_parser("metrics", help="metric report from a performance matrix CSV")
    p.add_argument("--matrix", required=True)
    p.add_argument("--out-json", default=None)
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("report", help="aggregate run directories into one table")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out-file", default=None)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RgdLabError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
