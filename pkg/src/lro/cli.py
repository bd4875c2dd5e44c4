"""Command-line entry point: run a single operator, execute a plan, run a
benchmark suite, or run a scalability sweep.

Exit codes: 0 ok, 1 domain error (bad data, parse/operator failures),
2 usage error (invalid flags or config), 3 backend failure or timeout.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import List, Optional

from . import bench as bench_mod
from . import scale as scale_mod
from .config import EngineConfig, load_config
from .errors import (
    BackendError,
    GatewayTimeout,
    GranularityError,
    LroError,
    UsageError,
    VariantError,
)
from .gateway import Gateway, HttpBackend, MockBackend, UsageLedger, cost, mock_script_from_json
from .operators import (
    LroEngine,
    LroKind,
    Requirement,
    Variant,
    check_pairing,
    check_variant,
    lro_cluster,
    lro_impute,
    lro_match,
    lro_order,
    lro_select,
)
from .plan import execute, parse_plan
from .prompts import PromptBuilder, PromptOptions, RenderStyle, TemplateSet, render_element
from .relation import (
    Database,
    Granularity,
    Relation,
    load_database,
    load_relation,
    save_relation,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lro",
        description="LLM-enhanced relational operators: engine and evaluation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--mock-script", help="JSON mock script (deterministic backend)")
        p.add_argument("--cot", action=argparse.BooleanOptionalAction, default=None,
                       help="chain-of-thought prompting")
        p.add_argument("--examples", action=argparse.BooleanOptionalAction, default=None,
                       help="include sample data values in prompts")

    op = sub.add_parser("run-op", help="run a single operator")
    common(op)
    op.add_argument("--op", required=True, help="select|match|impute|cluster|order")
    op.add_argument("--granularity", required=True, help="cell|row|column|table")
    op.add_argument("--variant", help="all|one|semi|pair|sort|score|batch:<b> (default: best practice)")
    op.add_argument("--requirement", required=True)
    op.add_argument("--input", help="input relation (csv/json)")
    op.add_argument("--input2", help="right relation for match")
    op.add_argument("--db", help="database directory (table granularity)")
    op.add_argument("--keys", help="left,right key columns for cell match")
    op.add_argument("--new-column", help="new column name for column impute")
    op.add_argument("--row-count", type=int, help="rows to generate for row impute")
    op.add_argument("--out", help="write the result relation here (csv/json)")
    op.set_defaults(func=cmd_run_op)

    pl = sub.add_parser("run-plan", help="execute a plan file against a database directory")
    common(pl)
    pl.add_argument("--plan", help="plan file (UTF-8 dialect text)")
    pl.add_argument("--plan-text", help="plan text given inline")
    pl.add_argument("--db", required=True, help="database directory of csv/json relations")
    pl.add_argument("--out", help="write the result relation here (csv/json)")
    pl.add_argument("--trace", help="write the execution trace here (json)")
    pl.set_defaults(func=cmd_run_plan)

    be = sub.add_parser("run-bench", help="run a query-spec suite and emit reports")
    common(be)
    be.add_argument("--suite", required=True, help="query-spec JSON file")
    be.add_argument("--db", required=True, help="database directory")
    be.add_argument("--out-dir", required=True, help="directory for report.json / queries.csv")
    be.add_argument("--easy-max", type=int, help="bucket threshold (default 5)")
    be.add_argument("--medium-max", type=int, help="bucket threshold (default 8)")
    be.add_argument("--concurrent", action="store_true",
                    help="run specs concurrently (isolated ledgers; not byte-reproducible)")
    be.set_defaults(func=cmd_run_bench)

    sw = sub.add_parser("run-sweep", help="scale/batch sweep with rule-checkable truth")
    common(sw)
    sw.add_argument("--data", required=True, help="input relation (csv/json)")
    sw.add_argument("--task", help="select_row|impute_column")
    sw.add_argument("--date-column", help="birthdate column name")
    sw.add_argument("--scales", help="comma-separated row counts")
    sw.add_argument("--batches", help="comma-separated batch sizes; 'all' for one prompt")
    sw.add_argument("--repeats", type=int)
    sw.add_argument("--mock", help="'oracle', 'oracle-fault:<tokens>', or a mock-script path")
    sw.add_argument("--out-dir", required=True, help="directory for sweep.csv / curve.csv")
    sw.set_defaults(func=cmd_run_sweep)

    return parser


# --- shared plumbing ---------------------------------------------------------

def _load_mock(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return mock_script_from_json(json.load(fh))


def _make_backend(cfg: EngineConfig, args):
    if getattr(args, "mock_script", None):
        return MockBackend(_load_mock(args.mock_script), model=cfg.backend.model)
    if cfg.backend.endpoint:
        return HttpBackend(cfg.backend)
    raise UsageError(
        "no backend configured: set [backend].endpoint in the config "
        "or pass --mock-script"
    )


def _prompt_options(cfg: EngineConfig, args) -> PromptOptions:
    opts = cfg.prompt_options
    cot = opts.cot if args.cot is None else args.cot
    examples = opts.examples if args.examples is None else args.examples
    return PromptOptions(cot=cot, examples=examples, example_count=opts.example_count)


def _make_engine(cfg: EngineConfig, backend, opts: PromptOptions) -> LroEngine:
    gateway = Gateway(cfg.backend, backend, UsageLedger(cfg.prices))
    builder = PromptBuilder(TemplateSet(cfg.template_dir))
    return LroEngine(gateway, builder, opts)


def _emit_relation(rel: Relation, out: Optional[str]) -> None:
    if out:
        save_relation(rel, out)
    else:
        sys.stdout.write(rel.to_csv())


def _summary(engine: LroEngine) -> None:
    ledger = engine.gateway.ledger
    line = (
        f"calls={ledger.call_count()} input_tokens={ledger.total_input_tokens()} "
        f"output_tokens={ledger.total_output_tokens()} "
        f"wall={engine.gateway.query_elapsed():.6f}s"
    )
    if ledger.prices:
        try:
            line += f" cost=${cost(ledger)['total']:.6f}"
        except LroError:
            pass
    print(line, file=sys.stderr)
    for warning in engine.warnings:
        print(f"warning: {warning}", file=sys.stderr)


# --- subcommands ----------------------------------------------------------------

def cmd_run_op(args) -> int:
    cfg = load_config(args.config)
    try:
        kind = LroKind.parse(args.op)
        g = Granularity.parse(args.granularity)
        check_pairing(kind, g)
        variant = Variant.parse(args.variant) if args.variant else None
        if variant is not None:
            check_variant(kind, variant)
    except (LroError, GranularityError, VariantError) as exc:
        raise UsageError(str(exc)) from exc

    backend = _make_backend(cfg, args)
    opts = _prompt_options(cfg, args)
    engine = _make_engine(cfg, backend, opts)
    engine.gateway.start_query()
    requirement = Requirement(args.requirement)

    if kind in (LroKind.SELECT, LroKind.CLUSTER) and g is Granularity.TABLE:
        if not args.db:
            raise UsageError("table granularity needs --db")
        source = load_database(args.db)
    else:
        if not args.input:
            raise UsageError(f"{kind.value} needs --input")
        source = load_relation(args.input)

    if kind is LroKind.SELECT:
        result = lro_select(engine, source, g, requirement, variant, opts)
        if isinstance(result, Database):
            result = Relation("tables", ["table"], [(n,) for n in result.names()])
    elif kind is LroKind.MATCH:
        if not args.input2:
            raise UsageError("match needs --input2")
        right = load_relation(args.input2)
        keys = None
        if g is Granularity.CELL:
            if not args.keys or "," not in args.keys:
                raise UsageError("cell match needs --keys left_col,right_col")
            left_key, right_key = (k.strip() for k in args.keys.split(",", 1))
            keys = (left_key, right_key)
        match = lro_match(engine, source, right, g, requirement, variant, opts, keys=keys)
        left_style = RenderStyle(columns=source.columns)
        right_style = RenderStyle(columns=right.columns)
        rows = [
            (render_element(match.left_elements[li], left_style),
             render_element(match.right_elements[ri], right_style))
            for li, ri in match.pairs
        ]
        result = Relation("matches", ["left", "right"], rows)
    elif kind is LroKind.IMPUTE:
        result = lro_impute(
            engine, source, g, requirement, variant, opts,
            new_column=args.new_column, row_count=args.row_count,
        )
    elif kind is LroKind.CLUSTER:
        clusters = lro_cluster(engine, source, g, requirement, variant, opts)
        labels = clusters.label_per_element()
        if g is Granularity.ROW:
            result = Relation(
                source.name, list(source.columns) + ["cluster"],
                [row + (label,) for row, label in zip(source.rows, labels)],
            )
        else:
            names = [e.name for e in clusters.elements]
            result = Relation("clusters", ["element", "cluster"], list(zip(names, labels)))
    else:  # order
        result = lro_order(engine, source, requirement, variant, opts)

    _emit_relation(result, args.out)
    _summary(engine)
    return 0


def cmd_run_plan(args) -> int:
    cfg = load_config(args.config)
    if bool(args.plan) == bool(args.plan_text):
        raise UsageError("pass exactly one of --plan / --plan-text")
    if args.plan:
        with open(args.plan, "r", encoding="utf-8") as fh:
            plan_text = fh.read()
    else:
        plan_text = args.plan_text

    db = load_database(args.db)
    plan = parse_plan(plan_text, db)
    backend = _make_backend(cfg, args)
    engine = _make_engine(cfg, backend, _prompt_options(cfg, args))
    result, _ledger, trace = execute(plan, db, engine)
    _emit_relation(result, args.out)
    if args.trace:
        payload = [
            {"node": t.node, "input_rows": t.input_rows,
             "output_rows": t.output_rows, "llm_calls": t.llm_calls}
            for t in trace
        ]
        with open(args.trace, "w", encoding="utf-8", newline="") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    _summary(engine)
    return 0


def cmd_run_bench(args) -> int:
    cfg = load_config(args.config)
    specs = bench_mod.load_suite(args.suite)
    db = load_database(args.db)
    backend = _make_backend(cfg, args)
    opts = _prompt_options(cfg, args)

    judge = None
    if cfg.judge is not None and cfg.judge.endpoint:
        if cfg.judge.model == cfg.backend.model:
            raise UsageError(
                f"judge model {cfg.judge.model!r} must differ from the task model"
            )
        judge = LroEngine(
            Gateway(cfg.judge, HttpBackend(cfg.judge), UsageLedger(cfg.prices)),
            PromptBuilder(TemplateSet(cfg.template_dir)),
        )

    easy_max = args.easy_max if args.easy_max is not None else cfg.bench.easy_max
    medium_max = args.medium_max if args.medium_max is not None else cfg.bench.medium_max
    report = bench_mod.run_suite(
        specs, db, lambda: _make_engine(cfg, backend, opts),
        judge=judge, easy_max=easy_max, medium_max=medium_max,
        prices=cfg.prices or None, concurrent=args.concurrent,
    )
    files = bench_mod.emit_report(report, args.out_dir)

    print(f"queries={len(report.outcomes)} passes={report.passes} "
          f"accuracy={report.accuracy * 100:.2f}%")
    for bucket in ("easy", "medium", "hard", "single"):
        if bucket in report.bucket_accuracy:
            print(f"  {bucket}: {report.bucket_accuracy[bucket] * 100:.2f}%")
    if cfg.prices:
        for model, dollars in sorted(report.total_cost.items()):
            print(f"  cost[{model}]: ${dollars:.6f}")
    for path in files:
        print(f"wrote {path}", file=sys.stderr)
    return 0


def cmd_run_sweep(args) -> int:
    cfg = load_config(args.config)
    rel = load_relation(args.data)

    settings = cfg.sweep
    task = args.task or settings.task
    date_column = args.date_column or settings.date_column
    scales = (
        tuple(int(s) for s in args.scales.split(",")) if args.scales else settings.scales
    )
    if args.batches:
        batch_sizes = tuple(
            None if b.strip() == "all" else int(b) for b in args.batches.split(",")
        )
    else:
        batch_sizes = settings.batch_sizes
    repeats = args.repeats if args.repeats is not None else settings.repeats

    sweep_cfg = scale_mod.SweepConfig(
        task=task, scales=scales, batch_sizes=batch_sizes, repeats=repeats,
        timeout_seconds=settings.timeout_seconds,
        date_column=date_column, new_column=settings.new_column,
    )

    if args.mock:
        if args.mock == "oracle":
            script = scale_mod.oracle_script(date_column)
        elif args.mock.startswith("oracle-fault:"):
            threshold = int(args.mock.split(":", 1)[1])
            script = scale_mod.oracle_script(date_column, fault_threshold=threshold)
        else:
            script = _load_mock(args.mock)
        backend = MockBackend(script, model=cfg.backend.model)
    else:
        backend = _make_backend(cfg, args)

    opts = _prompt_options(cfg, args)
    records = scale_mod.sweep(
        sweep_cfg, rel, lambda: _make_engine(cfg, backend, opts)
    )
    files = scale_mod.emit_sweep(records, args.out_dir)
    ok = sum(1 for r in records if r.outcome == "ok")
    print(f"records={len(records)} ok={ok} "
          f"mean_quality={sum(r.quality for r in records) / len(records):.4f}")
    for path in files:
        print(f"wrote {path}", file=sys.stderr)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (GatewayTimeout, BackendError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3
    except LroError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
