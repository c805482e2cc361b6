"""Quality score x suppression ablation at toy scale.

Trains one model per quality score (leftness, centerness) and decodes each
with hard NMS and linear Soft-NMS.  Writes a CSV and prints a table.

    python3 scripts/run_ablation.py -o runs/ablation.csv [--score-thresh 0.05]
"""

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path

from beatdet.config import load_config
from beatdet.io import provenance_line
from beatdet.toy import ABLATION_HEADER, build_examples, run_ablation


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-o", "--output")
    ap.add_argument("--config")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--score-thresh", type=float, help="decode score threshold for every cell")
    args = ap.parse_args()
    cfg = load_config(args.config, {"seed": args.seed} if args.seed is not None else None)
    decode = cfg.decode if args.score_thresh is None else replace(cfg.decode, score_threshold=args.score_thresh)

    train, val, test = (build_examples(cfg.corpus.specs(s), cfg.level, cfg.jobs) for s in ("train", "val", "test"))
    rows = run_ablation(train, test, replace(cfg.train, seed=cfg.seed), cfg.loss, val, decode=decode, level_cfg=cfg.level)

    buf = io.StringIO()
    buf.write(provenance_line(cfg.provenance()) + "\n")
    w = csv.DictWriter(buf, ABLATION_HEADER, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.output:
        Path(args.output).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    print(f"{'quality':<11} {'nms':<12} {'beat F1':>8} {'downbeat F1':>12}", file=sys.stderr)
    for r in rows:
        print(f"{r['quality']:<11} {r['nms']:<12} {r['beat_f1']:8.3f} {r['downbeat_f1']:12.3f}", file=sys.stderr)

if __name__ == "__main__":
    main()
