#!/usr/bin/env python3
"""Sweep enrollment count and sequence length for a trained checkpoint.

Produces one row per (n_enroll, seq_len, scorer) with adaptive and global EER,
as CSV on stdout or --out. Enrollment sizes beyond the enrollment pool and
sequence lengths beyond the model's max length are rejected by the protocol.
"""

import argparse
import csv
import sys
from pathlib import Path

from keydyn.dataset import read_sessions
from keydyn.encoder import load_checkpoint
from keydyn.evaluation import sweep
from keydyn.metrics import Metric
from keydyn.scoring import MIN_ENROLLMENT, ScorerConfig


def parse_args():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="session JSONL with eval subjects")
    p.add_argument("--enroll-sizes", type=int, nargs="+", default=[1, 2, 5, 10])
    p.add_argument("--seq-lens", type=int, nargs="+", default=None, help="defaults to the model max length")
    p.add_argument("--scorers", nargs="+", default=["avg_distance"],
                   choices=["avg_distance", "abod", "lof", "ocsvm"])
    p.add_argument("--metric", default="cosine", choices=["euclidean", "manhattan", "cosine"],
                   help="distance used by avg_distance")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--seed", type=int, default=0)
    return p.parse_args()


def main():
    args = parse_args()
    model = load_checkpoint(args.ckpt)
    sessions = read_sessions(args.data)
    seq_lens = args.seq_lens or [model.config.max_len]

    rows = []
    for kind in args.scorers:
        # a scorer only gets the enrollment sizes it can actually fit on
        sizes = [e for e in args.enroll_sizes if e >= MIN_ENROLLMENT[kind]]
        if len(sizes) < len(args.enroll_sizes):
            skipped = sorted(set(args.enroll_sizes) - set(sizes))
            print(f"note: {kind} needs >= {MIN_ENROLLMENT[kind]} enrollments, skipping E={skipped}",
                  file=sys.stderr)
        if sizes:
            scorer = ScorerConfig(kind=kind, metric=Metric(args.metric))
            rows.extend(sweep(model, sessions, sizes, seq_lens, [scorer], seed=args.seed))
    sink = args.out.open("w", newline="", encoding="utf-8") if args.out else sys.stdout
    writer = csv.DictWriter(sink, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        sink.close()
        print(f"wrote {len(rows)} rows to {args.out}")


if __name__ == "__main__":
    main()
