"""Train the toy heads on the default synthetic corpus and report test metrics.

    python3 scripts/run_toy.py --out-dir runs/toy [--seed 0] [--config cfg.json]
"""

import argparse
import time
from dataclasses import replace
from pathlib import Path

from beatdet.config import load_config
from beatdet.io import json_text, write_report
from beatdet.metrics import format_triplet
from beatdet.thresholds import NoSeparationError, neighbor_iou_histogram, select_iou_threshold
from beatdet.toy import ToyHeads, build_examples, evaluate, predict_detections, save_checkpoint, train_toy


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out-dir", default="runs/toy")
    ap.add_argument("--config")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--jobs", type=int)
    args = ap.parse_args()
    overrides = {k: v for k, v in (("seed", args.seed), ("jobs", args.jobs)) if v is not None}
    cfg = load_config(args.config, overrides)
    prov = cfg.provenance()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    train, val, test = (build_examples(cfg.corpus.specs(s), cfg.level, cfg.jobs) for s in ("train", "val", "test"))
    heads = ToyHeads.init(cfg.level, seed=cfg.seed)
    heads, log = train_toy(train, heads, replace(cfg.train, seed=cfg.seed), cfg.loss, val, cfg.decode)
    rep, _ = evaluate(heads, test, cfg.decode)
    elapsed = time.perf_counter() - t0

    save_checkpoint(out / "checkpoint.json", heads, prov)
    write_report(out / "loss.csv", log, provenance=prov)
    write_report(out / "metrics.json", rep, provenance=prov)
    hist = neighbor_iou_histogram([predict_detections(heads, ex.pyramid, cfg.decode) for ex in val])
    write_report(out / "iou_hist.svg", hist, provenance=prov)
    try:
        thr = f"{select_iou_threshold(hist):.1f}"
    except NoSeparationError:
        thr = "no separation"
    (out / "config.json").write_text(json_text({"version": "1", "config": cfg.to_dict()}, prov))

    print(f"trained {len(train)} tracks for {len(log)} epochs in {elapsed:.1f} s")
    print(f"loss {log[0]['total']:.4f} -> {log[-1]['total']:.4f}")
    print("class     F1 / CMLt / AMLt")
    print(f"beat      {format_triplet(rep.beat)}")
    print(f"downbeat  {format_triplet(rep.downbeat)}")
    print(f"validation IoU threshold: {thr}")


if __name__ == "__main__":
    main()
