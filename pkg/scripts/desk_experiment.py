#!/usr/bin/env python3
"""Train a desk-scale model on synthetic typists and report verification EER.

Runs in a couple of minutes on a laptop CPU. Writes the checkpoint, training
telemetry, an evaluation report and a ROC curve under --out.
"""

import argparse
import dataclasses
import json
import time
from pathlib import Path

from keydyn.dataset import generate_synthetic, read_sessions
from keydyn.evaluation import ProtocolConfig, evaluate, write_report, write_roc_csv
from keydyn.losses import LossConfig
from keydyn.metrics import Metric
from keydyn.scoring import ScorerConfig
from keydyn.training import desk_profile, train


def parse_args():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--out", type=Path, default=Path("runs/desk"))
    p.add_argument("--data", type=Path, default=None, help="session JSONL; synthetic corpus when omitted")
    p.add_argument("--subjects", type=int, default=40)
    p.add_argument("--sessions-per-subject", type=int, default=15)
    p.add_argument("--keys", type=int, default=60, help="keystrokes per synthetic session")
    p.add_argument("--loss", default="batch_all_triplet", choices=["triplet", "batch_all_triplet", "wdcl"])
    p.add_argument("--metric", default="cosine", choices=["euclidean", "manhattan", "cosine"])
    p.add_argument("--steps", type=int, default=None, help="override the profile's step count")
    p.add_argument("--n-enroll", type=int, default=5)
    p.add_argument("--scorer", default="avg_distance", choices=["avg_distance", "abod", "lof", "ocsvm"])
    p.add_argument("--seed", type=int, default=7)
    return p.parse_args()


def main():
    args = parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    if args.data:
        corpus = read_sessions(args.data)
    else:
        corpus = generate_synthetic(args.subjects, args.sessions_per_subject, args.keys, seed=args.seed)

    enc, cfg = desk_profile(LossConfig(kind=args.loss))
    cfg = dataclasses.replace(cfg, metric=Metric(args.metric), seed=args.seed)
    if args.steps:
        cfg = dataclasses.replace(cfg, steps=args.steps, decay_every=max(1, args.steps // 3))

    t0 = time.monotonic()
    model, report = train(corpus, enc, cfg, args.out)
    print(f"trained {cfg.steps} steps in {time.monotonic() - t0:.0f}s, final loss {report.final_loss:.4f}")

    scorer = ScorerConfig(kind=args.scorer, metric=Metric(args.metric))
    protocol = ProtocolConfig(n_enroll=args.n_enroll, seq_len=enc.max_len, scorer=scorer, seed=args.seed)
    result = evaluate(model, corpus, protocol)
    write_report(result, args.out / "eval.json")
    write_roc_csv(result, args.out / "roc.csv")
    print(json.dumps({
        "n_subjects": result.n_subjects,
        "adaptive_eer": round(result.adaptive_eer, 6),
        "global_eer": round(result.global_eer, 6),
    }))
    for note in result.warnings:
        print(f"warning: {note}")


if __name__ == "__main__":
    main()
