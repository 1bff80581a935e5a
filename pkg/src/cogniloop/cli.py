"""Command-line entry point: ``cogniloop index|ask|bench|inspect|report``.

Exit codes: 0 success, 1 usage error, 2 benchmark finished with failed
samples, 3 fatal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from cogniloop.config import BackendSettings, SessionConfig, build_suite, load_config
from cogniloop.errors import CogniloopError
from cogniloop.media import FrameIndexTable, TABLE_NAME, index_video

EXIT_OK, EXIT_USAGE, EXIT_FAILURES, EXIT_FATAL = 0, 1, 2, 3
DEFAULT_WORKDIR = ".cogniloop/frames"

log = logging.getLogger("cogniloop")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(path: str | None) -> tuple[SessionConfig, BackendSettings]:
    if path is not None and not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        return load_config(path)
    except ValueError as exc:
        raise UsageError(f"bad config: {exc}") from exc


def _table(video: str, fps: float, workdir: str) -> FrameIndexTable:
    if video.endswith(".json"):
        return FrameIndexTable.load(video)
    return index_video(video, fps, workdir)


def cmd_index(args) -> int:
    table = index_video(args.video, args.fps, args.workdir, args.ffmpeg)
    where = Path(args.workdir) / table.video_id / TABLE_NAME
    print(f"{table.video_id}: {len(table)} frames at {table.fps:g} fps, {table.duration_s:.2f} s -> {where}")
    return EXIT_OK


def cmd_ask(args) -> int:
    from cogniloop.agents import run_session

    options = [o.strip() for o in args.options.split(",") if o.strip()]
    if len(options) < 2:
        raise UsageError("--options needs at least two comma-separated choices")
    config, settings = _config(args.config)
    suite = build_suite(settings)
    table = _table(args.video, config.fps, args.workdir)
    result = run_session(table, args.question, options, config, suite)
    if args.trace:
        result.trace.write(args.trace)
        log.info("trace written to %s", args.trace)
    if result.failed:
        print(f"session failed: {result.trace.error}", file=sys.stderr)
        return EXIT_FATAL
    print(f"Answer: {result.answer_index} ({options[result.answer_index]})")
    return EXIT_OK


def cmd_bench(args) -> int:
    from cogniloop.harness import load_dataset, run_benchmark

    if args.parallel < 1:
        raise UsageError("--parallel must be >= 1")
    config, settings = _config(args.config)
    samples = load_dataset(args.dataset)
    suite = build_suite(settings)
    report = run_benchmark(samples, config, suite, args.out, args.parallel, workdir=args.workdir)
    sys.stdout.write(report.render_table())
    return EXIT_FAILURES if report.n_failed else EXIT_OK


def cmd_inspect(args) -> int:
    from cogniloop.harness import inspect_trace

    sys.stdout.write(inspect_trace(args.trace))
    return EXIT_OK


def cmd_report(args) -> int:
    from cogniloop.harness import build_report

    report = build_report(args.dir)
    report.write(args.dir)
    sys.stdout.write(report.render_table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cogniloop", description="Agentic question answering over long videos.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("index", help="extract and index frames of a video")
    p.add_argument("video")
    p.add_argument("--fps", type=float, default=1.0)
    p.add_argument("--workdir", default=DEFAULT_WORKDIR)
    p.add_argument("--ffmpeg", default=None, help="path to an ffmpeg binary")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("ask", help="answer one multiple-choice question about a video")
    p.add_argument("video", help="video file, or a frame table .json")
    p.add_argument("question")
    p.add_argument("--options", required=True, help="comma-separated answer choices")
    p.add_argument("--config", default=None)
    p.add_argument("--trace", default=None, help="write the session trace here")
    p.add_argument("--workdir", default=DEFAULT_WORKDIR)
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("bench", help="run a JSONL dataset and write traces plus a report")
    p.add_argument("dataset")
    p.add_argument("--config", default=None)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--workdir", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", help="render a session trace")
    p.add_argument("trace")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("report", help="rebuild the report of a benchmark directory")
    p.add_argument("dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cogniloop: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CogniloopError, OSError, ValueError) as exc:
        print(f"cogniloop: fatal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
