"""Command-line front end.

Seven subcommands cover the whole pipeline: synthesize a log, inspect how
well its session lengths pack, train any variant, evaluate a checkpoint,
sweep the objective-mixing weight, run the four-variant ladder, and replay
a checkpoint through the incremental-serving path with an offline audit.

Every run is driven by one key-value config file (see :mod:`.config`);
``--seed`` overrides both the generator and trainer seeds so a single flag
re-rolls an entire experiment.  Results land in ``--out`` as aligned
key-value text plus TSV tables, and the experiment subcommands also render
a PNG next to each table.  Exit codes: 0 success, 1 usage error, 2 runtime
failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import report
from .config import ExperimentConfig, load_experiment_config
from .datamodel import generate_log, log_stats, read_tsv, write_tsv
from .metrics import evaluate_protocol
from .models import VARIANTS, load_checkpoint, save_checkpoint
from .packing import packing_stats
from .serving import load_serving_state, save_serving_state, serve_replay
from .training import ladder, split_train_val, sweep_mu, train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems instead of exiting with 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="seqrank", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, help_text, *, config=True, variant=False, checkpoint=False):
        p = sub.add_parser(name, help=help_text)
        if config:
            p.add_argument("--config", required=True,
                           help="key-value experiment config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override both data and training seeds")
        p.add_argument("--out", default=".", help="output directory")
        if variant:
            p.add_argument("--variant", choices=VARIANTS, default="rnn")
        if checkpoint:
            p.add_argument("--checkpoint", required=True,
                           help="model checkpoint file")
        return p

    add("gen-data", "synthesize a session log and write it as TSV")
    add("pack-stats", "report knapsack packing efficiency for a config's log")
    add("train", "fit one variant and save the best checkpoint", variant=True)
    p = add("eval", "evaluate a checkpoint on a config's validation split",
            checkpoint=True)
    p.add_argument("--data", default=None,
                   help="score this TSV log instead of the config's val split")
    p = add("sweep-mu", "train the actor-critic at several mixing weights")
    p.add_argument("--values", required=True,
                   help="comma-separated mu values, e.g. 0.2,0.5,0.8")
    add("ladder", "train and compare all four variants")
    p = add("serve-replay", "replay sessions through incremental serving",
            checkpoint=True)
    p.add_argument("--data", default=None,
                   help="replay this TSV log instead of the config's val split")
    p.add_argument("--state", default=None,
                   help="resume from a saved serving-state file")
    p.add_argument("--no-audit", action="store_true",
                   help="skip the offline-equality audit")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_experiment_config(args.config)
    if args.seed is not None:
        cfg = ExperimentConfig(
            data=dataclasses.replace(cfg.data, seed=args.seed),
            train=dataclasses.replace(cfg.train, seed=args.seed))
    return cfg


def _splits(cfg: ExperimentConfig):
    histories = generate_log(cfg.data)
    return split_train_val(histories, cfg.train.val_fraction)


def _epoch_rows(history):
    return [(log.epoch,
             log.mean_loss if log.mean_loss is not None else float("nan"),
             log.pairs, log.report.session_auc, log.report.session_roc,
             log.report.ndcg) for log in history]


_EPOCH_HEADER = ["epoch", "mean_loss", "pairs", "session_auc", "session_roc",
                 "ndcg"]


def _cmd_gen_data(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    histories = generate_log(cfg.data)
    rows = write_tsv(histories, out / "log.tsv")
    stats = log_stats(histories)
    report.write_kv(out / "log_stats.txt",
                    [(f.name, getattr(stats, f.name))
                     for f in dataclasses.fields(stats)])
    print(f"wrote {rows} rows for {stats.users} users to {out / 'log.tsv'}")
    return 0


def _cmd_pack_stats(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    histories = generate_log(cfg.data)
    stats = packing_stats([len(h.sessions) for h in histories])
    pairs = [(f.name, getattr(stats, f.name))
             for f in dataclasses.fields(stats)]
    report.write_kv(out / "pack_stats.txt", pairs)
    sys.stdout.write(report.format_kv(pairs))
    return 0


def _cmd_train(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    train_h, val_h = _splits(cfg)
    result = train(args.variant, train_h, val_h, cfg.train)
    ckpt = out / f"{args.variant}.ckpt"
    save_checkpoint(result.params, ckpt)
    pairs = [("variant", args.variant), ("epochs_run", result.epochs_run),
             ("best_epoch", result.best_epoch), ("best_auc", result.best_auc)]
    pairs += report.metrics_pairs(result.best_report, prefix="val.")
    report.write_kv(out / "train_report.txt", pairs)
    report.write_table(out / "epochs.tsv", _EPOCH_HEADER,
                       _epoch_rows(result.history))
    report.render_epoch_curves(result.history, out / "epochs.png")
    print(f"best epoch {result.best_epoch} "
          f"(session AUC {result.best_auc:.4f}); checkpoint at {ckpt}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    params = load_checkpoint(args.checkpoint)
    if args.data is not None:
        histories = read_tsv(args.data)
    else:
        histories = _splits(cfg)[1]
    rep = evaluate_protocol(params, histories, cfg.train.warmup_days)
    pairs = [("checkpoint", str(args.checkpoint)), ("variant", params.variant)]
    pairs += report.metrics_pairs(rep)
    report.write_kv(out / "eval_report.txt", pairs)
    sys.stdout.write(report.format_kv(pairs))
    return 0


def _parse_values(raw: str) -> list[float]:
    try:
        values = [float(x) for x in raw.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"--values: cannot parse {raw!r}") from exc
    if not values:
        raise UsageError("--values: no mu values given")
    return values


def _cmd_sweep_mu(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    train_h, val_h = _splits(cfg)
    rows = sweep_mu(_parse_values(args.values), train_h, val_h, cfg.train)
    table = [(r.mu, r.session_auc, r.session_roc, r.ndcg, r.best_epoch)
             for r in rows]
    header = ["mu", "session_auc", "session_roc", "ndcg", "best_epoch"]
    report.write_table(out / "sweep_mu.tsv", header, table)
    report.render_sweep_curve(rows, out / "sweep_mu.png")
    for row in table:
        print("\t".join(str(c) for c in row))
    return 0


def _cmd_ladder(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    train_h, val_h = _splits(cfg)
    rows, results = ladder(train_h, val_h, cfg.train)
    header = ["variant", "session_auc", "session_roc", "ndcg", "init_auc",
              "best_epoch", "warm_started"]
    table = [(r.variant, r.session_auc, r.session_roc, r.ndcg, r.init_auc,
              r.best_epoch, r.warm_started) for r in rows]
    report.write_table(out / "ladder.tsv", header, table)
    report.render_ladder_bars(rows, out / "ladder.png")
    for variant, result in results.items():
        save_checkpoint(result.params, out / f"ladder_{variant}.ckpt")
    for row in table:
        print("\t".join(str(c) for c in row))
    return 0


def _cmd_serve_replay(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    params = load_checkpoint(args.checkpoint)
    if args.data is not None:
        histories = read_tsv(args.data)
    else:
        histories = _splits(cfg)[1]
    state = load_serving_state(args.state) if args.state else None
    predictions, final = serve_replay(params, histories,
                                      audit=not args.no_audit, state=state)
    with open(out / "predictions.tsv", "w", encoding="utf-8") as fh:
        fh.write("user_id\tsession_id\tscores\n")
        for p in predictions:
            cells = " ".join(repr(float(s)) for s in p.scores)
            fh.write(f"{p.user_id}\t{p.session_id}\t{cells}\n")
    report.write_table(out / "update_log.tsv",
                       ["user_id", "session_id", "state_delta_norm"],
                       [(e.user_id, e.session_id, e.delta_norm)
                        for e in final.log])
    save_serving_state(final, out / "serving_state.tsv")
    audited = "audited, " if not args.no_audit else ""
    print(f"replayed {len(predictions)} sessions for "
          f"{len({p.user_id for p in predictions})} users ({audited}"
          f"state at {out / 'serving_state.tsv'})")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "pack-stats": _cmd_pack_stats,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep-mu": _cmd_sweep_mu,
    "ladder": _cmd_ladder,
    "serve-replay": _cmd_serve_replay,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        Path(args.out).mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
