"""Command-line entry point.

Subcommands: ``run`` executes the whole pipeline; ``ingest``, ``lda``,
``series``, ``fit``, ``analyze``, and ``report`` run one stage against
persisted artifacts; ``fixture`` writes a small synthetic corpus plus a
ready-to-run config.
"""

from __future__ import annotations

import argparse
import sys

from .pipeline import STAGES, Pipeline, PipelineConfig, PipelineError


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="pipeline config (JSON)")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--output-dir", help="override the output directory")
    parser.add_argument(
        "--force",
        action="store_true",
        help="run even if upstream artifact hashes mismatch the manifest",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forumdyn",
        description=(
            "Forum topic-dynamics pipeline: topics, weekly series, joint "
            "segmentation, and analytics"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full pipeline")
    _add_common(run)
    run.add_argument(
        "--from",
        dest="from_stage",
        choices=STAGES,
        help="resume from this stage, reusing persisted upstream artifacts",
    )
    run.add_argument(
        "--lambda",
        dest="smoothing",
        type=float,
        help="override analysis.similarity_smoothing",
    )

    for stage in STAGES:
        sp = sub.add_parser(stage, help=f"run only the {stage} stage")
        _add_common(sp)
        if stage == "analyze":
            sp.add_argument(
                "--lambda",
                dest="smoothing",
                type=float,
                help="override analysis.similarity_smoothing",
            )

    fx = sub.add_parser("fixture", help="write the bundled synthetic corpus")
    fx.add_argument("--output", required=True, help="directory for fixture files")
    fx.add_argument("--seed", type=int, default=0)
    fx.add_argument(
        "--anomalies",
        action="store_true",
        help="plant a rare state and an activity spike",
    )
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    ov: dict = {}
    if getattr(args, "seed", None) is not None:
        ov["seed"] = args.seed
    if getattr(args, "output_dir", None):
        ov["output_dir"] = args.output_dir
    if getattr(args, "smoothing", None) is not None:
        ov["analysis.similarity_smoothing"] = args.smoothing
    return ov


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "fixture":
        from .fixture import write_fixture

        paths = write_fixture(args.output, seed=args.seed, anomalies=args.anomalies)
        print(f"wrote {paths['posts']} ({paths['truth']['n_posts']} posts)")
        print(f"wrote {paths['stopwords']}")
        print(f"wrote {paths['config']}")
        return 0

    try:
        config = PipelineConfig.load(args.config, overrides=_overrides(args))
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    pipeline = Pipeline(config, force=args.force)
    try:
        if args.command == "run":
            pipeline.run(from_stage=args.from_stage)
        else:
            getattr(pipeline, f"stage_{args.command}")()
    except PipelineError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    for stage, info in pipeline.manifest["stages"].items():
        counts = ", ".join(f"{k}={v}" for k, v in info["counts"].items())
        print(f"{stage}: {info['wall_time_s']}s ({counts})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
