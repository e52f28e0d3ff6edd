"""``attrcons`` command line.

Exit status: 0 on success, 1 on a usage error, 2 on a data or validation
error.  Report files are written to a temporary file and renamed into place,
and an existing output is only replaced with ``--force``.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as _dt
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .consolidate import (
    STRATEGIES, ConsolidationConfig, consolidate_dataset, correct_labels,
    read_consolidation_csv, write_changelog_csv,
    write_consolidation_csv, write_provenance_json,
)
from .errors import AttrConsError
from .inconsistency import audit_labels, dataset_im, format_im_table, write_im_csv, write_im_json
from .model import AttributeSchema, load_annotations, load_predictions, load_schema, write_annotations
from .quality import QualityWeights, load_weights, score_group, write_quality_csv
from .synth import ExperimentConfig, run_experiment, write_report_csv

log = logging.getLogger("attrcons")

SUBCOMMANDS = ("im", "quality", "consolidate", "audit", "correct", "synth")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--schema", type=Path, help="attribute schema JSON (default: 40 CelebA attributes)")
    common.add_argument("--out", type=Path, help="output file (default: standard output)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--force", action="store_true", help="replace an existing output file")
    common.add_argument("--seed", type=_seed, help="fix every random draw and the report metadata")
    common.add_argument("--jobs", type=_positive, default=os.cpu_count() or 1,
                        help="worker threads (output does not depend on it)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="attrcons", description=(
        "Subject-level facial attributes: inconsistency reports, image quality, "
        "consolidation and label correction."))
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("im", parents=[common], help="inconsistency report of predictions")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--min-group-size", type=_positive, default=1)

    p = sub.add_parser("audit", parents=[common], help="inconsistency report of annotated labels")
    p.add_argument("--annotations", type=Path, required=True)
    p.add_argument("--min-group-size", type=_positive, default=1)

    p = sub.add_parser("quality", parents=[common], help="score and rank images per subject")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--images", type=Path, help="directory that image sources are relative to")
    p.add_argument("--weights", type=Path)

    p = sub.add_parser("consolidate", parents=[common], help="one attribute vector per subject")
    _consolidation_args(p)

    p = sub.add_parser("correct", parents=[common], help="rewrite inconsistent annotations")
    p.add_argument("--annotations", type=Path, required=True)
    p.add_argument("--consolidated", type=Path,
                   help="consolidation CSV; otherwise consolidate --predictions on the fly")
    _consolidation_args(p, required=False)
    p.add_argument("--dry-run", action="store_true", help="write only the change-log")

    p = sub.add_parser("synth", parents=[common], help="synthetic strategy comparison")
    p.add_argument("--config", type=Path, help="experiment config JSON")
    return parser


def _consolidation_args(p, required=True):
    p.add_argument("--predictions", type=Path, required=required)
    p.add_argument("--strategy", choices=STRATEGIES, default="confidence")
    p.add_argument("--top-k", type=_positive, default=1)
    p.add_argument("--weights", type=Path)
    p.add_argument("--images", type=Path, help="image directory, needed for --strategy quality")


# --- helpers ----------------------------------------------------------------

def _setup_logging(verbose: int):
    env = os.environ.get("ATTRCONS_LOG", "").strip().lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    level = levels.get(env, logging.WARNING)
    if verbose:
        level = min(level, logging.INFO if verbose == 1 else logging.DEBUG)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


@contextlib.contextmanager
def _output(path: Path | None, force: bool):
    """Text stream for the report: stdout, or a temp file renamed over ``path``."""
    if path is None:
        yield sys.stdout
        return
    if path.exists() and not force:
        raise UsageError(f"{path} exists; pass --force to replace it")
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def _sidecar(path: Path | None, suffix: str) -> Path | None:
    return None if path is None else path.with_name(path.stem + suffix)


def _schema(args) -> AttributeSchema:
    return load_schema(args.schema) if args.schema else AttributeSchema.celeba()


def _predictions(path: Path, schema):
    fmt = "jsonl" if path.suffix.lower() in (".jsonl", ".ndjson") else "csv"
    return load_predictions(path, schema, fmt)


def _timestamp(args) -> str | None:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        moment = _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc)
    elif args.seed is not None:
        return None
    else:
        moment = _dt.datetime.now(_dt.timezone.utc)
    return moment.replace(microsecond=0).isoformat()


def _weights(args) -> QualityWeights:
    return load_weights(args.weights) if args.weights else QualityWeights()


def _quality_scores(args, dataset) -> dict[str, float]:
    weights = _weights(args)
    scores = {}
    for g in dataset.groups:
        for s in score_group(g, weights, image_root=args.images, jobs=args.jobs):
            if s.ok:
                scores[s.image_id] = s.score
    return scores


def _consolidate(args, schema):
    dataset = _predictions(args.predictions, schema)
    config = ConsolidationConfig(args.strategy, args.top_k, _weights(args))
    scores = _quality_scores(args, dataset) if args.strategy == "quality" else None
    return config, consolidate_dataset(dataset, config, scores, jobs=args.jobs)


# --- subcommands ------------------------------------------------------------

def _write_im(args, report):
    if args.out is None and args.format == "csv" and sys.stdout.isatty():
        print(format_im_table(report))
        return
    with _output(args.out, args.force) as fh:
        if args.format == "json":
            write_im_json(report, fh, _timestamp(args))
        else:
            write_im_csv(report, fh)
    if args.out is not None:
        log.info("summary:\n%s", format_im_table(report))


def cmd_im(args):
    dataset = _predictions(args.predictions, _schema(args))
    report = dataset_im(dataset, args.min_group_size, args.jobs,
                        dataset_id=args.predictions.name)
    _write_im(args, report)


def cmd_audit(args):
    dataset = load_annotations(args.annotations, _schema(args))
    report = audit_labels(dataset, min_group_size=args.min_group_size, jobs=args.jobs,
                          dataset_id=args.annotations.name)
    _write_im(args, report)


def cmd_quality(args):
    dataset = _predictions(args.predictions, _schema(args))
    weights = _weights(args)
    ranked = [score_group(g, weights, image_root=args.images, jobs=args.jobs)
              for g in dataset.groups]
    with _output(args.out, args.force) as fh:
        if args.format == "json":
            doc = [
                {"image_id": s.image_id, "subject_id": s.subject_id,
                 "features": s.features.as_dict() if s.features else None,
                 "score": s.score if s.ok else None, "rank": rank if s.ok else None,
                 "error": s.error}
                for group in ranked for rank, s in enumerate(group, start=1)
            ]
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        else:
            write_quality_csv(ranked, fh)
    log.info("scored %d images", sum(len(g) for g in ranked))


def cmd_consolidate(args):
    schema = _schema(args)
    config, results = _consolidate(args, schema)
    if args.format == "json":
        with _output(args.out, args.force) as fh:
            write_provenance_json(results, schema, config, fh)
        return
    sidecar = _sidecar(args.out, ".provenance.json")
    if sidecar is not None and sidecar.exists() and not args.force:
        raise UsageError(f"{sidecar} exists; pass --force to replace it")
    with _output(args.out, args.force) as fh:
        write_consolidation_csv(results, schema, fh)
    if sidecar is not None:
        with _output(sidecar, True) as fh:
            write_provenance_json(results, schema, config, fh)


def cmd_correct(args):
    schema = _schema(args)
    annotations = load_annotations(args.annotations, schema)
    if args.consolidated is not None:
        consolidated = read_consolidation_csv(args.consolidated, schema)
    elif args.predictions is not None:
        _, consolidated = _consolidate(args, schema)
    else:
        raise UsageError("correct needs --consolidated or --predictions")
    result = correct_labels(annotations, consolidated, schema)
    log.info("%d label(s) changed", len(result.changes))
    if args.dry_run:
        with _output(args.out, args.force) as fh:
            write_changelog_csv(result.changes, fh)
        return
    changelog = _sidecar(args.out, ".changes.csv")
    if changelog is not None and changelog.exists() and not args.force:
        raise UsageError(f"{changelog} exists; pass --force to replace it")
    with _output(args.out, args.force) as fh:
        write_annotations(result.dataset, fh)
    if changelog is not None:
        with _output(changelog, True) as fh:
            write_changelog_csv(result.changes, fh)


def cmd_synth(args):
    config = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config = ExperimentConfig(config.n_subjects, config.images_per_subject, config.noise,
                                  config.strategies, config.ks, (args.seed,))
    report = run_experiment(config, jobs=args.jobs)
    with _output(args.out, args.force) as fh:
        if args.format == "json":
            doc = {"rng": report.rng,
                   "rows": [r.__dict__ for r in report.rows],
                   "summary": [{"strategy": s, "k": k, "mean_accuracy": a}
                               for s, k, a in report.summary()]}
            json.dump(doc, fh, indent=1)
            fh.write("\n")
        else:
            write_report_csv(report, fh)


COMMANDS = {
    "im": cmd_im, "audit": cmd_audit, "quality": cmd_quality,
    "consolidate": cmd_consolidate, "correct": cmd_correct, "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(args.verbose)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"attrcons: error: {exc}", file=sys.stderr)
        return 1
    except (AttrConsError, ValueError, OSError) as exc:
        print(f"attrcons: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
