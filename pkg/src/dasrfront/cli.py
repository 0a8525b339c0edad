"""Command line: ``dasrfront {micsel,count,enhance,score,simulate}``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import pipeline
from .config import load_config
from .errors import ConfigError, DataError

log = logging.getLogger("dasrfront")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _config(args):
    cfg = load_config(args.config)
    return cfg.override(
        k_pct=getattr(args, "k_pct", None),
        min_mics=getattr(args, "min_mics", None),
        corr_threshold=getattr(args, "corr_threshold", None),
        max_speakers=getattr(args, "max_speakers", None),
        mu=getattr(args, "mu", None),
    )


def _run_micsel(session, cfg, args):
    result = pipeline.micsel(session, cfg).to_dict()
    pipeline.dump_json(result, Path(session) / "micsel.json")
    return result


def _run_count(session, cfg, args):
    result = pipeline.count(session, cfg, args.embeddings).to_dict()
    pipeline.dump_json(result, Path(session) / "count.json")
    return result


def _run_enhance(session, cfg, args):
    out = None
    if args.out_dir:
        out = Path(args.out_dir) / Path(session).name if len(args.sessions) > 1 else Path(args.out_dir)
    return pipeline.enhance_session(session, cfg, args.masks, args.segments, out)


RUNNERS = {"micsel": _run_micsel, "count": _run_count, "enhance": _run_enhance}


def _session_task(command, session, cfg, args):
    return RUNNERS[command](session, cfg, args)


def _summary(command, session, result) -> str:
    if command == "micsel":
        return f"{session}: {result['rule_branch']} -> {len(result['selected'])} mics: {' '.join(result['selected'])}"
    if command == "count":
        groups = ", ".join(f"{g['count']}x{g['n_embeddings']}" for g in result["per_group"])
        return f"{session}: {result['session_count']} speakers (count x embeddings per group: {groups})"
    return f"{session}: " + ", ".join(f"{k} -> ref {v['reference']}" for k, v in result["speakers"].items())


def _sessions(args, cfg):
    if args.jobs > 1 and len(args.sessions) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_session_task, args.command, s, cfg, args) for s in args.sessions]
            results = [f.result() for f in futures]
    else:
        results = [_session_task(args.command, s, cfg, args) for s in args.sessions]
    if args.json:
        payload = results[0] if len(results) == 1 else {str(s): r for s, r in zip(args.sessions, results)}
        sys.stdout.write(pipeline.dump_json(payload))
    else:
        for s, r in zip(args.sessions, results):
            print(_summary(args.command, s, r))


def _score(args, cfg):
    result = pipeline.score(args.ref, args.hyp, args.collar).to_dict()
    if args.json:
        sys.stdout.write(pipeline.dump_json(result))
    else:
        print(f"DER {100 * result['der']:.2f}% (missed {result['missed_s']:.3f} s, false alarm "
              f"{result['falarm_s']:.3f} s, confusion {result['confusion_s']:.3f} s, "
              f"scored speech {result['scored_speech_s']:.3f} s)")


def _simulate(args, cfg):
    manifest = pipeline.simulate(args.spec, args.out_dir, args.seed)
    if args.json:
        sys.stdout.write(pipeline.dump_json(manifest))
    else:
        print(f"wrote {manifest['session_id']} ({manifest['n_speakers']} speakers, "
              f"{len(manifest['files']['channels'])} mics) to {args.out_dir}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--json", action="store_true", help="print machine-readable JSON on stdout")
    common.add_argument("--jobs", type=int, default=1, help="sessions processed in parallel")
    common.add_argument("-v", "--verbose", action="store_true")

    sel = argparse.ArgumentParser(add_help=False)
    sel.add_argument("--k-pct", type=float, help="fraction of mics kept per ranking (default 0.65)")
    sel.add_argument("--min-mics", type=int, help="microphone floor (default 15)")

    p = argparse.ArgumentParser(prog="dasrfront", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("micsel", parents=[common, sel], help="microphone subset selection")
    s.add_argument("sessions", nargs="+")

    s = sub.add_parser("count", parents=[common], help="multi-channel speaker counting")
    s.add_argument("sessions", nargs="+")
    s.add_argument("--embeddings", help="EMB1 file (default <session>/emb/embeddings.emb)")
    s.add_argument("--corr-threshold", type=float, help="channel clustering threshold (default 0.3)")
    s.add_argument("--max-speakers", type=int, help="upper bound on the count (default 8)")

    s = sub.add_parser("enhance", parents=[common, sel], help="mask-based SP-MWF enhancement")
    s.add_argument("sessions", nargs="+")
    s.add_argument("--masks", help="mask directory (default <session>/masks)")
    s.add_argument("--segments", help="RTTM restricting covariance estimation to speaker segments")
    s.add_argument("--mu", type=float, help="SP-MWF trade-off parameter (default 0)")
    s.add_argument("--out-dir", help="output directory (default <session>/enhanced)")

    s = sub.add_parser("score", parents=[common], help="diarization error rate")
    s.add_argument("ref")
    s.add_argument("hyp")
    s.add_argument("--collar", type=float, default=0.25, help="collar in seconds (default 0.25)")

    s = sub.add_parser("simulate", parents=[common], help="write a synthetic session")
    s.add_argument("spec", help="scene spec JSON")
    s.add_argument("out_dir")
    s.add_argument("--seed", type=int, help="override the seed in the scene file")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = _config(args)
        if args.command == "score":
            _score(args, cfg)
        elif args.command == "simulate":
            _simulate(args, cfg)
        else:
            _sessions(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
