"""``egolead`` command line.

Exit status: 0 on success, 1 when inputs fail validation, 2 when analysis
fails on valid inputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

from . import __version__
from .errors import EgoleadError, IngestError
from .ingest import parse_manifest
from .pipeline import (
    analyze_session,
    export_overlay,
    load_analysis,
    load_config,
    validate_session,
    write_outputs,
)
from .synth import SynthSpec, generate_session, random_session_spec, score_against_truth

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2

log = logging.getLogger("egolead")


def _override(text: str) -> tuple[str, object]:
    key, sep, raw = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected section.key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _config(args):
    overrides = dict(getattr(args, "set", None) or [])
    if getattr(args, "no_eye_contact", False):
        overrides["toggles.eye_contact"] = False
    if getattr(args, "no_conversation", False):
        overrides["toggles.conversation"] = False
    return load_config(args.config, overrides)


def cmd_validate(args) -> int:
    rep = validate_session(args.manifest, _config(args))
    for line in rep.lines():
        print(line)
    if rep.ok:
        print("ok")
        return EXIT_OK
    return EXIT_INVALID


def cmd_analyze(args) -> int:
    cfg = _config(args)
    manifest = parse_manifest(args.manifest)
    t0 = time.perf_counter()
    analysis = analyze_session(manifest, cfg)
    meta = None
    if args.emit_run_metadata:
        meta = {
            "egolead_version": __version__,
            "python": platform.python_version(),
            "platform": platform.platform(),
            "started_unix_s": time.time(),
            "elapsed_s": time.perf_counter() - t0,
            "manifest": str(Path(args.manifest).resolve()),
        }
    for p in write_outputs(analysis, args.out, meta):
        log.info("wrote %s", p)
    print(f"report written to {Path(args.out) / 'report.json'}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.spec:
        spec = SynthSpec.load(args.spec)
        if args.seed is not None:
            spec = SynthSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    else:
        spec = random_session_spec(
            seed=args.seed or 0, duration_s=args.duration_s, noise_px=args.noise_px, n_mutual=args.n_mutual
        )
    truth = generate_session(spec, args.out)
    n = sum(len(w["events"]) for w in truth["wearers"].values())
    print(f"session {spec.session_id!r}: {len(spec.wearers)} wearers, {n} planted segments -> {args.out}")
    return EXIT_OK


def cmd_export_overlay(args) -> int:
    manifest = parse_manifest(args.manifest)
    path = export_overlay(manifest, args.out, args.overlay)
    print(f"overlay written to {path}")
    return EXIT_OK


def cmd_score(args) -> int:
    truth_path = args.truth or Path(args.manifest).parent / "ground_truth.json"
    truth = json.loads(Path(truth_path).read_text(encoding="utf-8"))
    scores = score_against_truth(load_analysis(args.out), truth, args.tolerance_ms)
    print(json.dumps(scores.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="egolead", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"egolead {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v info, -vv debug")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="JSON analysis config")
        sp.add_argument(
            "--set", action="append", type=_override, metavar="SECTION.KEY=VALUE", help="override one config value"
        )
        sp.add_argument("--no-eye-contact", action="store_true", help="skip eye-contact metrics")
        sp.add_argument("--no-conversation", action="store_true", help="skip conversation metrics")

    sp = sub.add_parser("validate", help="check all session files without analysing")
    sp.add_argument("--manifest", required=True)
    with_config(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("analyze", help="analyse a session and write the report")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--emit-run-metadata", action="store_true", help="also write run_metadata.json")
    with_config(sp)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("synth", help="generate a synthetic session with ground truth")
    sp.add_argument("--spec", help="SynthSpec JSON; omitted means a random session")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--duration-s", type=float, default=600.0)
    sp.add_argument("--noise-px", type=float, default=0.0)
    sp.add_argument("--n-mutual", type=int, default=11)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("export-overlay", help="per-frame annotation track of the leader's video")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="directory holding a finished analysis")
    sp.add_argument("--overlay", help="output file (default <out>/overlay.jsonl)")
    sp.set_defaults(func=cmd_export_overlay)

    sp = sub.add_parser("score", help="compare an analysis with synthetic ground truth")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="directory holding a finished analysis")
    sp.add_argument("--truth", help="ground truth JSON (default next to the manifest)")
    sp.add_argument("--tolerance-ms", type=float, default=100.0)
    sp.set_defaults(func=cmd_score)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except IngestError as exc:
        print(f"error: {exc.name}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (EgoleadError, ValueError, OSError) as exc:
        name = getattr(exc, "name", type(exc).__name__)
        print(f"error: {name}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
