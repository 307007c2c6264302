"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure. Errors print one JSON line to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .dataset import generate_synthetic, import_sessions, read_sessions, write_sessions
from .encoder import embed_sequences, load_checkpoint
from .errors import ConfigurationError, DataError, NumericFailure
from .evaluation import ProtocolConfig, evaluate, write_report, write_roc_csv
from .features import vectorize
from .losses import LossConfig
from .metrics import Metric
from .scoring import SCORER_KINDS, ScorerConfig

LOSS_NAMES = {
    "triplet": "triplet",
    "batch_all": "batch_all_triplet",
    "batch_all_triplet": "batch_all_triplet",
    "wdcl": "wdcl",
    "softmax": "softmax",
}


class CliParser(argparse.ArgumentParser):
    """Exits 1 on usage errors (argparse defaults to 2, which we use for data)."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(json.dumps({"error": "usage", "message": message}), file=sys.stderr)
        raise SystemExit(1)


def _fmt(sub, **kwargs):
    kwargs.setdefault("formatter_class", argparse.ArgumentDefaultsHelpFormatter)
    return sub.add_parser(**kwargs)


def build_parser() -> CliParser:
    parser = CliParser(prog="keydyn", description=__doc__)
    parser.add_argument("--version", action="version", version=f"keydyn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = _fmt(sub, name="import", help="convert a delimited keystroke log to session JSONL")
    p.add_argument("--input", required=True, help="csv/tsv log file")
    p.add_argument("--out", required=True, help="output session JSONL path")
    p.add_argument("--delimiter", choices=["tab", "comma"], default=None, help="default: sniff header")
    for logical in ("subject", "session", "keycode", "press", "release"):
        p.add_argument(f"--col-{logical}", default=None, help=f"header name of the {logical} column")

    p = _fmt(sub, name="synth", help="generate a synthetic session corpus")
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--sessions", type=int, default=15, help="sessions per subject")
    p.add_argument("--keys", type=int, default=60, help="keystrokes per session")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = _fmt(sub, name="train", help="train an encoder and write a checkpoint")
    p.add_argument("--data", required=True, help="session JSONL")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--profile", choices=["desk", "paper"], default="desk")
    p.add_argument("--loss", choices=sorted(LOSS_NAMES), default=None)
    p.add_argument("--metric", choices=[m.value for m in Metric], default=None)
    p.add_argument("--margin", type=float, default=None, help="default: 1.0, or 0.25 for cosine")
    p.add_argument("--steps", type=int, default=None, help="override the profile's step count")
    p.add_argument("--seed", type=int, default=0)

    p = _fmt(sub, name="eval", help="run the verification protocol on a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--E", type=int, default=10, dest="n_enroll", help="enrollment sessions per subject")
    p.add_argument("--L", type=int, default=50, dest="seq_len", help="keystrokes per session")
    p.add_argument("--scorer", choices=SCORER_KINDS, default="avg_distance")
    p.add_argument("--scorer-metric", choices=[m.value for m in Metric], default="cosine")
    p.add_argument("--impostors", type=int, default=None, help="cap impostor queries per subject")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="report JSON path (default: stdout)")
    p.add_argument("--roc", default=None, help="also write ROC points as CSV")

    p = _fmt(sub, name="embed", help="embed sessions with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="embedding JSONL path")
    p.add_argument("--L", type=int, default=None, dest="seq_len", help="default: checkpoint max_len")

    p = _fmt(sub, name="serve", help="run the verification HTTP service")
    p.add_argument("--ckpt", default=None, help="default: KEYDYN_CKPT")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None, help="default: KEYDYN_PORT or 8321")
    p.add_argument("--scorer", choices=SCORER_KINDS, default=None, help="default: KEYDYN_SCORER or avg_distance")
    p.add_argument("--threshold", type=float, default=None, help="default: KEYDYN_THRESHOLD or 0")
    p.add_argument("--store", default=None, help="journal path (default: KEYDYN_STORE or in-memory)")
    p.add_argument("--policy", choices=["evict", "reject"], default=None)

    for name, help_text in (("enroll", "enroll a session file over HTTP"), ("verify", "verify a session file over HTTP")):
        p = _fmt(sub, name=name, help=help_text)
        p.add_argument("--url", default="http://127.0.0.1:8321", help="service base URL")
        p.add_argument("--subject", required=True)
        p.add_argument("--file", required=True, help="JSON file with an events array")

    return parser


def _emit(doc: dict) -> None:
    print(json.dumps(doc))


def cmd_import(args) -> int:
    column_map = {
        logical: value
        for logical in ("subject", "session", "keycode", "press", "release")
        if (value := getattr(args, f"col_{logical}")) is not None
    }
    delim = {"tab": "\t", "comma": ","}.get(args.delimiter)
    report = import_sessions(args.input, column_map or None, delim)
    write_sessions(report.sessions, args.out)
    _emit(
        {
            "sessions": len(report.sessions),
            "dropped_sessions": report.dropped_sessions,
            "skipped_rows": report.skipped_rows,
            "out": args.out,
        }
    )
    return 0


def cmd_synth(args) -> int:
    sessions = generate_synthetic(args.subjects, args.sessions, args.keys, args.seed)
    write_sessions(sessions, args.out)
    _emit({"subjects": args.subjects, "sessions": len(sessions), "out": args.out})
    return 0


def cmd_train(args) -> int:
    from .training import desk_profile, paper_profile, train

    loss_kind = LOSS_NAMES[args.loss] if args.loss else None
    metric = Metric(args.metric) if args.metric else None
    if loss_kind == "wdcl" and metric == Metric.MANHATTAN:
        raise ConfigurationError("wdcl is cosine-based; --metric manhattan is unsupported")
    profile = desk_profile if args.profile == "desk" else paper_profile
    enc_cfg, train_cfg = profile()
    if loss_kind or args.margin is not None:
        train_cfg.loss = LossConfig(kind=loss_kind or train_cfg.loss.kind, margin=args.margin)
    if metric is not None:
        train_cfg.metric = metric
    if args.steps is not None:
        train_cfg.steps = args.steps
        train_cfg.decay_every = max(1, args.steps // 3) if args.profile == "desk" else train_cfg.decay_every
    train_cfg.seed = args.seed
    if train_cfg.loss.kind == "softmax":
        enc_cfg.mode = "cross"
    sessions = read_sessions(args.data)
    _, report = train(sessions, enc_cfg, train_cfg, args.out)
    _emit(asdict(report))
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    sessions = read_sessions(args.data)
    config = ProtocolConfig(
        n_enroll=args.n_enroll,
        seq_len=args.seq_len,
        scorer=ScorerConfig(kind=args.scorer, metric=Metric(args.scorer_metric)),
        impostors_per_subject=args.impostors,
        seed=args.seed,
    )
    report = evaluate(model, sessions, config)
    if args.out:
        write_report(report, args.out)
        _emit({"adaptive_eer": report.adaptive_eer, "global_eer": report.global_eer, "out": args.out})
    else:
        print(json.dumps(report.to_dict(), indent=2))
    if args.roc:
        write_roc_csv(report, args.roc)
    return 0


def cmd_embed(args) -> int:
    model = load_checkpoint(args.ckpt)
    if model.norm_stats is None:
        raise DataError("checkpoint has no normalization stats")
    seq_len = args.seq_len or model.config.max_len
    sessions = read_sessions(args.data)
    seqs = [vectorize(s, model.norm_stats, seq_len) for s in sessions]
    embeddings = embed_sequences(model, seqs)
    with Path(args.out).open("w", encoding="utf-8") as fh:
        for session, row in zip(sessions, embeddings):
            fh.write(
                json.dumps(
                    {
                        "subject_id": session.subject_id,
                        "session_id": session.session_id,
                        "embedding": [float(x) for x in row],
                    }
                )
                + "\n"
            )
    _emit({"embedded": len(sessions), "dim": int(embeddings.shape[1]), "out": args.out})
    return 0


def cmd_serve(args) -> int:
    from .service import serve, settings_from_env

    scorer = ScorerConfig(kind=args.scorer) if args.scorer else None
    try:
        settings = settings_from_env(
            checkpoint=args.ckpt,
            host=args.host,
            port=args.port,
            threshold=args.threshold,
            store_path=args.store,
            policy=args.policy,
            scorer=scorer,
        )
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    serve(settings)
    return 0


def _post_session(args, route: str) -> int:
    import httpx

    try:
        doc = json.loads(Path(args.file).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read {args.file}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{args.file} is not valid JSON: {exc}") from exc
    events = doc["events"] if isinstance(doc, dict) else doc
    url = f"{args.url.rstrip('/')}/subjects/{args.subject}/{route}"
    response = httpx.post(url, json={"events": events}, timeout=30.0)
    print(json.dumps(response.json()))
    return 0 if response.status_code < 400 else 2


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "import": cmd_import,
        "synth": cmd_synth,
        "train": cmd_train,
        "eval": cmd_eval,
        "embed": cmd_embed,
        "serve": cmd_serve,
        "enroll": lambda a: _post_session(a, "enroll"),
        "verify": lambda a: _post_session(a, "verify"),
    }
    try:
        return handlers[args.command](args)
    except ConfigurationError as exc:
        print(json.dumps({"error": "configuration", "message": str(exc)}), file=sys.stderr)
        return 1
    except DataError as exc:
        print(json.dumps({"error": "data", "message": str(exc)}), file=sys.stderr)
        return 2
    except NumericFailure as exc:
        print(json.dumps({"error": "numeric", "message": str(exc)}), file=sys.stderr)
        return 3
    except ValueError as exc:
        print(json.dumps({"error": "data", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
