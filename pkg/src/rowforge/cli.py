"""Command-line entry points: synth, evaluate, fuzz, report.

Exit statuses are a stable scripting contract: 0 success, 1 runtime
failure, 2 usage or configuration error. Messages go to stderr; data
(fuzzed rows, report summaries) goes to stdout.
"""

from __future__ import annotations

import argparse
import os
import re
import sys

import numpy as np

from rowforge import evaluation
from rowforge import grammar as G
from rowforge import pipeline
from rowforge import tabular
from rowforge.constraints import eval_static

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

FUZZ_RETRY_CAP = 1000

_LOCK_NAME = ".rowforge.lock"


def _err(message):
    print(f"rowforge: {message}", file=sys.stderr)


class _Lock:
    """Guards an output directory against concurrent runs."""

    def __init__(self, out_dir):
        self.path = os.path.join(out_dir, _LOCK_NAME)
        self.fd = None

    def __enter__(self):
        os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"output directory is locked by another run ({self.path}); "
                f"remove the lock file if that run is dead") from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            os.unlink(self.path)
        return False


def cmd_synth(args):
    try:
        config = pipeline.load_config(args.config, args.set or ())
    except (pipeline.ConfigError, FileNotFoundError) as e:
        _err(str(e))
        return EXIT_USAGE
    try:
        with _Lock(config.out_dir):
            result = pipeline.run(config)
    except pipeline.ConfigError as e:
        _err(str(e))
        return EXIT_USAGE
    except Exception as e:
        _err(f"run failed: {e}")
        return EXIT_RUNTIME
    for message in result.state.messages:
        print(message, file=sys.stderr)
    if args.verbose:
        for line in result.state.run_lines():
            print(line)
    print(f"synthetic rows: {len(result.synthetic)}")
    for key in ("synthetic", "run_log", "report_txt"):
        print(f"wrote {result.paths[key]}")
    return EXIT_OK


def cmd_evaluate(args):
    try:
        config = pipeline.load_config(args.config, args.set or (),
                                      require=("spec", "out"))
        if config.task_column is None:
            raise pipeline.ConfigError(
                "evaluate needs task_column and task_kind in the config")
        with open(config.spec_path, "r", encoding="utf-8") as fh:
            grammar = G.parse_spec(fh.read())
        schema = tabular.derive_schema(grammar, config.task_column)
        original = tabular.preprocess(tabular.load_csv(
            args.original, schema, provenance=tabular.PROV_ORIGINAL))
        synthetic = tabular.preprocess(tabular.load_csv(
            args.synthetic, schema, provenance=tabular.PROV_SYNTHETIC))
    except (pipeline.ConfigError, tabular.TabularError, G.GrammarError,
            FileNotFoundError) as e:
        _err(str(e))
        return EXIT_USAGE
    try:
        res = evaluation.resemblance(original, synthetic)
        util = evaluation.utility_matrix(
            original, synthetic, config.task_column, config.task_kind,
            seed=config.seed, forest_trees=config.forest_trees)
        audit = evaluation.privacy_audit(original, synthetic)
        os.makedirs(config.out_dir, exist_ok=True)
        path_txt = os.path.join(config.out_dir, "report.txt")
        path_csv = os.path.join(config.out_dir, "report.csv")
        evaluation.write_report(path_txt, path_csv, res, util, audit)
    except Exception as e:
        _err(f"evaluation failed: {e}")
        return EXIT_RUNTIME
    print(evaluation.render_report(res, util, audit), end="")
    print(f"wrote {path_txt}")
    return EXIT_OK


def cmd_fuzz(args):
    try:
        with open(args.spec, "r", encoding="utf-8") as fh:
            grammar = G.parse_spec(fh.read())
        names, _, _ = G.row_layout(grammar)
    except (G.GrammarError, FileNotFoundError) as e:
        _err(str(e))
        return EXIT_USAGE
    rng = np.random.default_rng(args.seed)
    print(", ".join(names))
    failures = {str(c): 0 for c in grammar.constraints}
    for _ in range(args.count):
        emitted = False
        for _attempt in range(FUZZ_RETRY_CAP):
            tree = G.generate_random(grammar, G.ROW_NT, rng)
            row = G.tree_to_row(tree, grammar)
            bad = [c for c in grammar.constraints if not eval_static(c, row)]
            if not bad:
                print(tree.text())
                emitted = True
                break
            for c in bad:
                failures[str(c)] += 1
        if not emitted:
            worst = max(failures, key=failures.get)
            _err(f"gave up after {FUZZ_RETRY_CAP} attempts per row; "
                 f"most-violated constraint: {worst}")
            return EXIT_RUNTIME
    return EXIT_OK


_ACCURACY_RE = re.compile(r"round (\d+): holdout accuracy ([0-9.]+)")


def cmd_report(args):
    log_path = os.path.join(args.run, "run_log.csv")
    try:
        with open(log_path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except FileNotFoundError:
        _err(f"no run_log.csv in {args.run}")
        return EXIT_RUNTIME
    if not lines or lines[0] != "round,iteration,new_good,cumulative_good,fool_rate":
        _err(f"{log_path}: unrecognized header")
        return EXIT_RUNTIME
    records = []
    try:
        for ln in lines[1:]:
            rnd, it, new, cum, fool = ln.split(",")
            records.append((int(rnd), int(it), int(new), int(cum), float(fool)))
    except ValueError:
        _err(f"{log_path}: corrupt record {ln!r}")
        return EXIT_RUNTIME
    cums = [r[3] for r in records]
    if any(b < a for a, b in zip(cums, cums[1:])):
        _err(f"{log_path}: cumulative_good decreases; log is corrupt")
        return EXIT_RUNTIME

    curve_path = os.path.join(args.run, "collection_curve.csv")
    out = ["global_iteration,round,iteration,cumulative_good,round_start"]
    boundaries = 0
    prev_round = None
    for gi, (rnd, it, _new, cum, _fool) in enumerate(records, start=1):
        start = 1 if (prev_round is not None and rnd != prev_round) else 0
        boundaries += start
        out.append(f"{gi},{rnd},{it},{cum},{start}")
        prev_round = rnd
    with open(curve_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")

    rounds = sorted({r[0] for r in records})
    print(f"rounds: {len(rounds)}; iterations: {len(records)}; "
          f"good samples: {cums[-1] if cums else 0}; "
          f"round boundaries marked: {boundaries}")
    accuracies = _round_accuracies(os.path.join(args.run, "report.txt"))
    for rnd in rounds:
        recs = [r for r in records if r[0] == rnd]
        acc = accuracies.get(rnd)
        acc_part = f", discriminator holdout accuracy {acc}" if acc else ""
        print(f"round {rnd}: {len(recs)} iterations, "
              f"{sum(r[2] for r in recs)} new good samples{acc_part}")
    print(f"wrote {curve_path}")
    return EXIT_OK


def _round_accuracies(report_path):
    try:
        with open(report_path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except FileNotFoundError:
        return {}
    return {int(m.group(1)): m.group(2)
            for m in _ACCURACY_RE.finditer(text)}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rowforge",
        description="Synthesize and evaluate privacy-preserving tabular data "
                    "from a grammar spec and a discriminator-guided search.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="run the full synthesis pipeline")
    p.add_argument("--config", required=True, help="run config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--verbose", "-v", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evaluate",
                       help="score an original/synthetic pair without generating")
    p.add_argument("--original", required=True, help="original CSV")
    p.add_argument("--synthetic", required=True, help="synthetic CSV")
    p.add_argument("--config", required=True, help="config with spec + task")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fuzz",
                       help="emit grammar-random rows satisfying the statics")
    p.add_argument("--spec", required=True, help="grammar spec file")
    p.add_argument("--count", required=True, type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("report", help="summarize a finished run directory")
    p.add_argument("--run", required=True, help="run output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
