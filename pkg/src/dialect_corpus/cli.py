"""Command-line entry point: one subcommand per stage, plus run-all.

Every stage reads a manifest (a raw audio directory for ``segment``) and
writes a manifest together with ``<out-stem>.stats.json``. Sidecars sit
next to the output when they have content:

    <stem>.discarded.jsonl  records removed by a gate, each with a reason
    <stem>.failed.jsonl     utterances whose backend calls failed
    <stem>.retry.jsonl      records to re-score (quality stage)
    <stem>.histogram.json   quality-score histogram (quality stage)

Exit codes: 0 success, 1 a stage or write failed, 2 usage error or
missing input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shutil
import sys
from pathlib import Path
from typing import Any, Sequence

from .backends import BackendRegistry, MockBackend, load_registry, make_http_server, serve_stdio
from .config import ConfigError, PipelineConfig, load_config
from .evaluation import evaluate_manifests
from .quality import histogram_json, histogram_table
from .records import ManifestError, dumps_record, read_manifest, write_manifest
from .stages import STAGE_ORDER, STAGES, StageContext, StageError, StageReport, segment_stage

log = logging.getLogger("dialect_corpus")


class UsageError(Exception):
    """Bad invocation or missing input (exit 2)."""


# ---------------------------------------------------------------------------
# output helpers


def sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_lines(path: Path, lines: Sequence[str]) -> None:
    if lines:
        _write_text(path, "".join(line + "\n" for line in lines))
    elif path.exists():
        path.unlink()


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_digest(path: Path) -> str:
    if path.is_file():
        return file_digest(path)
    h = hashlib.sha256()
    for item in sorted(path.iterdir()):
        if item.is_file() and (item.suffix == ".wav" or item.name == "domains.json"):
            h.update(f"{item.name}\0{file_digest(item)}\n".encode())
    return h.hexdigest()


def write_outputs(report: StageReport, out: Path, config: PipelineConfig, in_path: Path) -> dict[str, Any]:
    write_manifest(report.records, out, strong_lo=config.strong_lo, weak_lo=config.weak_lo)
    discards = sorted(report.discarded, key=lambda d: (d[0].source_id, d[0].start_s, d[0].utterance_id))
    _write_lines(sidecar(out, ".discarded.jsonl"),
                 [json.dumps({"reason": reason, "record": r.to_json()}, ensure_ascii=False) for r, reason in discards])
    _write_lines(sidecar(out, ".failed.jsonl"),
                 [json.dumps({"utterance_id": uid, "error": err}, ensure_ascii=False)
                  for uid, err in sorted(report.failed)])
    _write_lines(sidecar(out, ".retry.jsonl"), [dumps_record(r) for r in report.retry])
    if "histogram" in report.extra:
        _write_text(sidecar(out, ".histogram.json"), histogram_json(report.extra["histogram"]) + "\n")
    stats = report.stats()
    stats["config_digest"] = config.digest()
    stats["input_digest"] = input_digest(in_path)
    stats["output_digest"] = file_digest(out)
    _write_text(sidecar(out, ".stats.json"), json.dumps(stats, indent=2, sort_keys=True) + "\n")
    return stats


def summarize(stats: dict[str, Any]) -> str:
    line = (f"[{stats['stage']}] processed={stats['processed']} kept={stats['kept']} "
            f"discarded={stats['discarded']} failed={stats['failed']}")
    skip = {"stage", "processed", "kept", "discarded", "failed", "histogram", "hours",
            "config_digest", "input_digest", "output_digest"}
    extras = " ".join(f"{k}={v}" for k, v in stats.items() if k not in skip)
    return f"{line} {extras}".rstrip()


# ---------------------------------------------------------------------------
# running stages


def build_context(args: argparse.Namespace) -> StageContext:
    overrides = {"seed": args.seed, "jobs": args.jobs}
    try:
        config = load_config(args.config, overrides=overrides)
    except (ConfigError, OSError) as exc:
        raise UsageError(str(exc)) from None
    try:
        registry = load_registry(args.backend_registry, seed=config.seed)
    except (ValueError, OSError) as exc:
        raise UsageError(f"backend registry: {exc}") from None
    return StageContext(config, registry)


def run_stage(name: str, in_path: Path, out: Path, ctx: StageContext) -> dict[str, Any]:
    if not in_path.exists():
        raise UsageError(f"input not found: {in_path}")
    if name == "segment":
        if not in_path.is_dir():
            raise UsageError(f"segment expects a directory of WAV files: {in_path}")
        report = segment_stage(in_path, ctx)
    else:
        if not in_path.is_file():
            raise UsageError(f"input manifest not found: {in_path}")
        records = read_manifest(in_path, strong_lo=ctx.config.strong_lo, weak_lo=ctx.config.weak_lo)
        report = STAGES[name](records, ctx)
    out.parent.mkdir(parents=True, exist_ok=True)
    stats = write_outputs(report, out, ctx.config, in_path)
    print(summarize(stats), file=sys.stderr)
    if "histogram" in report.extra:
        print(histogram_table(report.extra["histogram"]), file=sys.stderr)
    return stats


def _stage_is_current(in_path: Path, out: Path, config: PipelineConfig) -> bool:
    stats_path = sidecar(out, ".stats.json")
    if not (out.exists() and stats_path.exists()):
        return False
    try:
        stats = json.loads(stats_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return False
    return (stats.get("config_digest") == config.digest()
            and stats.get("input_digest") == input_digest(in_path)
            and stats.get("output_digest") == file_digest(out))


def run_all(in_dir: Path, out: Path, workdir: Path, ctx: StageContext, resume: bool) -> list[dict[str, Any]]:
    if not in_dir.is_dir():
        raise UsageError(f"run-all expects a directory of WAV files: {in_dir}")
    workdir.mkdir(parents=True, exist_ok=True)
    current = in_dir
    all_stats = []
    for i, name in enumerate(STAGE_ORDER, start=1):
        stage_out = workdir / f"{i:02d}_{name}.jsonl"
        if resume and _stage_is_current(current, stage_out, ctx.config):
            print(f"[{name}] up to date, skipped", file=sys.stderr)
            stats = json.loads(sidecar(stage_out, ".stats.json").read_text(encoding="utf-8"))
        else:
            stats = run_stage(name, current, stage_out, ctx)
        all_stats.append(stats)
        current = stage_out
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + ".tmp")
    shutil.copyfile(current, tmp)
    os.replace(tmp, out)
    summary = {"stages": all_stats, "config_digest": ctx.config.digest()}
    _write_text(sidecar(out, ".stats.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return all_stats


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--jobs", type=_positive_int, help="concurrent backend requests (default: CPU count)")
    common.add_argument("--seed", type=int, help="seed for mock backends")
    common.add_argument("--backend-registry", type=Path, help="JSON file mapping backend kinds to endpoints")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="dialect-corpus", description="Build a dialect speech corpus in stages.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    helps = {
        "segment": "cut raw recordings into 5-25 s clips",
        "speakers": "drop multi-speaker clips and cluster speakers",
        "labels": "attach gender, age stage and emotion",
        "quality": "score audio quality and gate on duration, SNR and score",
        "fuse": "fuse recogniser hypotheses into a transcription with confidence",
        "punctuate": "insert punctuation from pauses and text cues",
        "partition": "assign strong/weak/discarded label tiers",
    }
    for name in STAGE_ORDER:
        p = sub.add_parser(name, parents=[common], help=helps[name])
        p.add_argument("--in", dest="in_path", type=Path, required=True,
                       help="raw audio directory" if name == "segment" else "input manifest")
        p.add_argument("--out", type=Path, required=True, help="output manifest")

    p = sub.add_parser("run-all", parents=[common], help="run every stage in order")
    p.add_argument("--in", dest="in_path", type=Path, required=True, help="raw audio directory")
    p.add_argument("--out", type=Path, required=True, help="final manifest")
    p.add_argument("--workdir", type=Path, help="intermediate manifests (default: <out-stem>.stages/)")
    p.add_argument("--resume", action="store_true", help="skip stages whose outputs are current")

    p = sub.add_parser("evaluate", help="character error rate report per split")
    p.add_argument("--ref", type=Path, required=True, help="reference manifest")
    p.add_argument("--hyp", type=Path, required=True, help="hypothesis manifest")
    p.add_argument("--splits", type=Path, required=True, help="JSON split map")
    p.add_argument("--out", type=Path, help="write the report as JSON")
    p.add_argument("--config", type=Path, help="TOML configuration file (tier boundaries)")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    p = sub.add_parser("mock-backend", help="serve the deterministic mock backend")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--port", type=int, help="serve HTTP on this port instead of stdio")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def cmd_evaluate(args: argparse.Namespace) -> int:
    for path in (args.ref, args.hyp, args.splits):
        if not path.is_file():
            raise UsageError(f"input not found: {path}")
    try:
        config = load_config(args.config)
    except (ConfigError, OSError) as exc:
        raise UsageError(str(exc)) from None
    report, missing = evaluate_manifests(args.ref, args.hyp, args.splits,
                                         strong_lo=config.strong_lo, weak_lo=config.weak_lo)
    if missing:
        print(f"{len(missing)} reference utterances have no hypothesis; scored as empty", file=sys.stderr)
    print(report.table())
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        _write_text(args.out, json.dumps(report.to_json(), indent=2, ensure_ascii=False) + "\n")
    return 0


def cmd_mock_backend(args: argparse.Namespace) -> int:
    backend = MockBackend(args.seed)
    if args.port is None:
        serve_stdio(backend, sys.stdin, sys.stdout)
        return 0
    server = make_http_server(backend, args.host, args.port)
    host, port = server.server_address[:2]
    print(f"mock backend listening on http://{host}:{port}/", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    registry: BackendRegistry | None = None
    try:
        if args.command == "evaluate":
            return cmd_evaluate(args)
        if args.command == "mock-backend":
            return cmd_mock_backend(args)
        ctx = build_context(args)
        registry = ctx.registry
        if args.command == "run-all":
            workdir = args.workdir or args.out.with_name(args.out.stem + ".stages")
            run_all(args.in_path, args.out, workdir, ctx, args.resume)
        else:
            run_stage(args.command, args.in_path, args.out, ctx)
        return 0
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (StageError, ManifestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return 1
    finally:
        if registry is not None:
            registry.close()


if __name__ == "__main__":
    sys.exit(main())
