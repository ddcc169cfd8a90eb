"""Command-line entry points.

    mwpdistill preprocess DATA [--format F] [-o masked.jsonl]
    mwpdistill distill DATA --checkpoint run.json [--mock-transcripts DIR]
    mwpdistill refine --checkpoint run.json [--no-conciseness]
    mwpdistill export --checkpoint run.json -o train.jsonl [--style bracket]
    mwpdistill report --checkpoint run.json [-o report.json]
    mwpdistill validate train.jsonl
    mwpdistill synth OUTDIR [--n 200]

Exit codes: 0 success, 1 validation failures, 2 configuration or input errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .clients import ClientError, HTTPChatClient, ScriptedClient
from .config import ConfigError, load_config
from .distiller import PROVENANCE, Distiller
from .equation import STYLES
from .masking import mask_problem
from .pipeline import (
    FORMATS, FULL, WEAK, CheckpointError, DatasetError, RunCheckpoint, atomic_write_text,
    export_training_set, final_pairs, load_dataset, outcome_summary, recall_report, record_to_dict,
    validate_export,
)
from .refine import EmptySeedData, conciseness_pass, run_refine
from .searcher import CombinatorialSearcher

logger = logging.getLogger("mwpdistill")

EXIT_OK, EXIT_INVALID, EXIT_CONFIG = 0, 1, 2


class UsageError(Exception):
    pass


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML/JSON config file")
    p.add_argument("--checkpoint", help="run checkpoint (JSON)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--concurrency", type=int, default=1)
    p.add_argument("--mock-transcripts", metavar="DIR", help="replay scripted transcripts instead of calling the API")
    p.add_argument("--no-conciseness", action="store_true", help="skip the final conciseness re-search")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="mwpdistill", description=__doc__.split("\n")[0], parents=[common])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def dataset_args(p):
        p.add_argument("dataset")
        p.add_argument("--format", choices=FORMATS, default="math23k_json")
        p.add_argument("--supervision", choices=(WEAK, FULL), default=WEAK)

    p = sub.add_parser("preprocess", parents=[common], help="mask a dataset")
    dataset_args(p)
    p.add_argument("-o", "--output", help="masked JSONL output (default: stdout)")

    p = sub.add_parser("distill", parents=[common], help="knowledge distilling with the chat model")
    dataset_args(p)
    p.add_argument("--transcript-dir", help="write one transcript file per problem here")
    p.add_argument("--max-batches", type=int, help="stop after this many batches (resume later)")

    p = sub.add_parser("refine", parents=[common], help="iterative refine over unsolved problems")
    p.add_argument("--max-sweeps", type=int, help="stop after this many sweeps (resume later)")

    p = sub.add_parser("export", parents=[common], help="write the distilled training set")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--style", choices=STYLES, default="bracket")

    p = sub.add_parser("report", parents=[common], help="recall report")
    p.add_argument("-o", "--output", help="machine-readable report (JSON)")

    p = sub.add_parser("validate", parents=[common], help="re-check an exported training set")
    p.add_argument("export_file")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset with scripted transcripts")
    p.add_argument("outdir")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--max-ops", type=int, default=3)
    return parser


def _need_checkpoint(args):
    if not args.checkpoint:
        raise UsageError(f"{args.command} needs --checkpoint")
    return Path(args.checkpoint)


def _load_checkpoint(args, cfg):
    path = _need_checkpoint(args)
    if not path.exists():
        raise UsageError(f"checkpoint {path} does not exist")
    ckpt = RunCheckpoint.load(path)
    if ckpt.config_hash != cfg.hash():
        raise UsageError(f"checkpoint was written under config {ckpt.config_hash}, "
                         f"current config is {cfg.hash()}; refusing to mix configurations")
    return ckpt


def _client(args, cfg):
    if args.mock_transcripts:
        d = Path(args.mock_transcripts)
        if not d.is_dir():
            raise UsageError(f"transcript directory {d} does not exist")
        return ScriptedClient.from_dir(d)
    try:
        return HTTPChatClient(cfg.endpoint, cfg.model, cfg.api_key_env, cfg.requests_per_minute,
                              cfg.request_timeout)
    except ClientError as exc:
        raise UsageError(str(exc)) from exc


def cmd_preprocess(args, cfg):
    data = load_dataset(args.dataset, args.format, args.supervision, cfg.field_aliases, cfg.malformed_threshold)
    lines = []
    for record in data.records:
        m = mask_problem(record)
        row = record_to_dict(record)
        row["masked_text"] = m.masked_text
        row["numbers"] = [str(s.value) for s in m.slots]
        lines.append(json.dumps(row, ensure_ascii=False))
    text = "".join(line + "\n" for line in lines)
    if args.output:
        atomic_write_text(args.output, text)
        print(f"masked {len(lines)} problems -> {args.output}", file=sys.stderr)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_distill(args, cfg):
    path = _need_checkpoint(args)
    data = load_dataset(args.dataset, args.format, args.supervision, cfg.field_aliases, cfg.malformed_threshold)
    if path.exists():
        ckpt = _load_checkpoint(args, cfg)
        if [r.id for r in ckpt.records] != [r.id for r in data.records]:
            raise UsageError("checkpoint belongs to a different dataset")
        if ckpt.seed != args.seed:
            raise UsageError(f"checkpoint seed {ckpt.seed} differs from --seed {args.seed}")
    else:
        ckpt = RunCheckpoint(cfg.hash(), args.seed, data.records)
    client = _client(args, cfg)
    distiller = Distiller(client, cfg.prompts, cfg.distill_settings())
    todo = [r for r in data.records if r.id not in ckpt.outcomes]
    batches = [todo[i:i + cfg.batch_size] for i in range(0, len(todo), cfg.batch_size)]
    for n, batch in enumerate(batches):
        if args.max_batches is not None and n >= args.max_batches:
            break
        result = distiller.distill_dataset(batch, args.concurrency)
        for record, outcome in zip(batch, result.outcomes):
            prov = PROVENANCE.get(outcome.stage) if outcome.success else None
            ckpt.outcomes[outcome.problem_id] = outcome_summary(outcome, prov, mask_problem(record))
            if args.transcript_dir:
                atomic_write_text(Path(args.transcript_dir) / f"{outcome.problem_id}.json",
                                  json.dumps(outcome.transcript, ensure_ascii=False, indent=1) + "\n")
        ckpt.state = ckpt.build_state()
        ckpt.save(path)
        logger.info("distilled %d/%d", len(ckpt.outcomes), len(ckpt.records))
    if ckpt.state is None:
        ckpt.state = ckpt.build_state()
        ckpt.save(path)
    s, u = len(ckpt.state.S), len(ckpt.state.U)
    status = "complete" if ckpt.distill_complete else "partial"
    print(f"distill {status}: {s} successful, {u} unsuccessful, "
          f"{len(ckpt.records) - len(ckpt.outcomes)} pending", file=sys.stderr)
    return EXIT_OK


def cmd_refine(args, cfg):
    path = _need_checkpoint(args)
    ckpt = _load_checkpoint(args, cfg)
    if not ckpt.distill_complete:
        raise UsageError("distillation is not complete; run distill first")
    state = ckpt.state or ckpt.build_state()
    rcfg = cfg.refine_config(ckpt.seed, not args.no_conciseness, args.concurrency)
    searcher = CombinatorialSearcher(cfg.max_ops, cfg.pi, tolerance=float(cfg.tolerance_value))

    def save(st, theta):
        ckpt.state, ckpt.searcher_state = st, theta
        ckpt.save(path)

    resume = ckpt.searcher_state if state.iteration > 0 or state.refine_done else None
    try:
        state, theta = run_refine(state, searcher, rcfg, resume, on_iteration=save, stop_after=args.max_sweeps)
    except EmptySeedData as exc:
        raise UsageError(str(exc)) from exc
    ckpt.state, ckpt.searcher_state = state, theta
    ckpt.conciseness = None
    if state.refine_done and rcfg.conciseness_pass:
        ckpt.conciseness = conciseness_pass(state, searcher, theta, rcfg)
    ckpt.save(path)
    msg = f"refine {'complete' if state.refine_done else 'partial'} after {state.iteration} iterations: " \
          f"|S|={len(state.S)} |Phi|={len(state.Phi)} |U|={len(state.U)}"
    if ckpt.conciseness is not None:
        msg += f", shortened {float(ckpt.conciseness.fraction_shortened):.1%} of S"
    print(msg, file=sys.stderr)
    return EXIT_OK


def cmd_export(args, cfg):
    ckpt = _load_checkpoint(args, cfg)
    state = ckpt.state or ckpt.build_state()
    pairs = final_pairs(state, None if args.no_conciseness else ckpt.conciseness)
    export_training_set(pairs, args.output, args.style)
    print(f"exported {len(pairs)} pairs -> {args.output}", file=sys.stderr)
    return EXIT_OK


def cmd_report(args, cfg):
    ckpt = _load_checkpoint(args, cfg)
    state = ckpt.state or ckpt.build_state()
    report = recall_report(state, ckpt.outcomes, ckpt.conciseness)
    print(report.table())
    if args.output:
        atomic_write_text(args.output, json.dumps(report.as_dict(), indent=1) + "\n")
    return EXIT_OK


def cmd_validate(args, cfg):
    path = Path(args.export_file)
    if not path.exists():
        raise UsageError(f"{path} does not exist")
    failures = validate_export(path, cfg.pi, cfg.tolerance_value)
    for rid, reason in failures:
        print(f"INVALID {rid}: {reason}")
    if failures:
        print(f"{len(failures)} invalid pairs", file=sys.stderr)
        return EXIT_INVALID
    print("all pairs valid", file=sys.stderr)
    return EXIT_OK


def cmd_synth(args, cfg):
    from .synthetic import PLANS, generate, write_fixture

    items = generate(args.n, args.seed, args.max_ops)
    plans = {r.id: PLANS[i % len(PLANS)] for i, (r, _) in enumerate(items)}
    dataset, tdir = write_fixture(args.outdir, items, plans, cfg.max_attempts)
    print(f"wrote {dataset} and {tdir}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "preprocess": cmd_preprocess, "distill": cmd_distill, "refine": cmd_refine, "export": cmd_export,
    "report": cmd_report, "validate": cmd_validate, "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.concurrency < 1:
        print("error: --concurrency must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError, DatasetError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
