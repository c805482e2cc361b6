"""``beatdet`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .assignment import AnchorGrid, LevelConfig, anchor_grid, assign_targets
from .config import CONFIG_ENV, RunConfig, load_config
from .decoding import DecodeConfig, score_and_collect, suppress, detections_to_beats
from .geometry import AnnotationError, IntervalClass, intervals_from_beats
from .io import (
    SCHEMA_VERSION,
    UnsupportedFormatError,
    format_beats,
    json_text,
    parse_beats,
    provenance_line,
    read_wav,
    write_report,
    _csv_text,
)
from .levels import kmeans_1d
from .metrics import format_triplet, joint_report, mean_reports
from .thresholds import NoSeparationError, neighbor_iou_histogram, select_iou_threshold
from .toy import (
    ABLATION_HEADER,
    DivergenceError,
    ToyHeads,
    build_examples,
    evaluate,
    head_outputs,
    load_checkpoint,
    map_ordered,
    predict_detections,
    run_ablation,
    save_checkpoint,
    train_toy,
)
from .features import extract_pyramid

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
DATA_ERRORS = (
    AnnotationError,
    UnsupportedFormatError,
    NoSeparationError,
    DivergenceError,
    ValueError,
    OSError,
    KeyError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# helpers


def _config(args, overrides: Optional[dict] = None) -> RunConfig:
    ov: dict = dict(overrides or {})
    if getattr(args, "seed", None) is not None:
        ov["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        ov["jobs"] = args.jobs
    dec = {}
    for flag, key in (("nms", "nms"), ("iou_thresh", "iou_threshold"), ("score_thresh", "score_threshold"), ("sigma", "sigma")):
        v = getattr(args, flag, None)
        if v is not None:
            dec[key] = v
    if dec:
        ov.setdefault("decode", {}).update(dec)
    return load_config(getattr(args, "config", None), ov)


def _write(path: Optional[str], text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _beats_files(d: Path) -> dict[str, Path]:
    if not d.is_dir():
        raise OSError(f"{d}: not a directory")
    return {p.stem: p for p in sorted(d.glob("*.beats"))}


def _decode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--nms", choices=["hard", "soft-linear", "soft-gaussian"])
    p.add_argument("--iou-thresh", type=float)
    p.add_argument("--score-thresh", type=float)
    p.add_argument("--sigma", type=float)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help=f"JSON config (default: ${CONFIG_ENV})")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="worker processes for per-track work")


# ---------------------------------------------------------------------------
# subcommands


def cmd_fit_levels(args) -> int:
    cfg = _config(args)
    seqs = [parse_beats(p) for p in args.files]
    groups: dict[str, list[float]] = {"joint": []} if not args.per_class else {"beat": [], "downbeat": []}
    for s in seqs:
        b, d = intervals_from_beats(s)
        for iv in b + d:
            key = "joint" if not args.per_class else iv.cls.name.lower()
            groups[key].append(iv.length)
    doc = {"version": SCHEMA_VERSION, "provenance": cfg.provenance(), "k": args.k}
    for key, lengths in groups.items():
        fit = kmeans_1d(lengths, k=args.k, seed=cfg.seed)
        if args.per_class:
            doc[key] = fit.to_dict()
        else:
            doc.update(fit.to_dict())
    _write(args.output, json_text(doc))
    return EXIT_OK


def cmd_targets(args) -> int:
    cfg = _config(args)
    level = cfg.level
    if args.sub_box:
        level = replace(level, sub_box_mode=args.sub_box)
    seq = parse_beats(args.beats)
    if args.wav:
        audio, _ = read_wav(args.wav, level.sample_rate)
        track_len = len(audio)
    elif args.duration is not None:
        track_len = int(round(args.duration * level.sample_rate))
    else:
        # annotation only: assume the track ends one second after the last beat
        track_len = int(math.ceil((seq.times[-1] + 1.0) * level.sample_rate)) if len(seq) else level.sample_rate
    grid = anchor_grid(track_len, level)
    b, d = intervals_from_beats(seq)
    ts = assign_targets(b, d, grid, level, quality=args.quality or cfg.train.quality)
    from .io import targets_to_dict

    _write(args.output, json_text(targets_to_dict(ts, cfg.provenance())))
    return EXIT_OK


def _train_overrides(args) -> dict:
    tr = {}
    for k in ("epochs", "lr", "weight_decay", "quality", "eval_every", "batch_size"):
        v = getattr(args, k, None)
        if v is not None:
            tr[k] = v
    co = {}
    for k in ("n_train", "n_val", "n_test"):
        v = getattr(args, k, None)
        if v is not None:
            co[k] = v
    ov = {}
    if tr:
        ov["train"] = tr
    if co:
        ov["corpus"] = co
    return ov


def cmd_train_toy(args) -> int:
    cfg = _config(args, _train_overrides(args))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prov = cfg.provenance()
    (out / "config.json").write_text(json_text({"version": SCHEMA_VERSION, "config": cfg.to_dict()}, prov))
    train = build_examples(cfg.corpus.specs("train"), cfg.level, cfg.jobs)
    val = build_examples(cfg.corpus.specs("val"), cfg.level, cfg.jobs)
    tcfg = replace(cfg.train, seed=cfg.seed)
    heads = ToyHeads.init(cfg.level, seed=cfg.seed, std=tcfg.init_std, prior=tcfg.prior, quality=tcfg.quality)

    def log(row):
        if not args.quiet:
            extra = f" val_joint_f={0.5 * (row['val_beat_f1'] + row['val_downbeat_f1']):.3f}" if "val_beat_f1" in row else ""
            print(f"epoch {row['epoch']:4d} total={row['total']:.5f} lr={row['lr']:g}{extra}", file=sys.stderr)

    heads, loss_log = train_toy(train, heads, tcfg, cfg.loss, val, cfg.decode, log)
    save_checkpoint(out / "checkpoint.json", heads, prov)
    write_report(out / "loss.csv", loss_log, provenance=prov)
    if cfg.corpus.n_test > 0:
        test = build_examples(cfg.corpus.specs("test"), cfg.level, cfg.jobs)
        rep, _ = evaluate(heads, test, cfg.decode)
        write_report(out / "metrics.csv", rep, provenance=prov)
        _print_summary(rep)
    return EXIT_OK


def _print_summary(rep) -> None:
    print("class     F1 / CMLt / AMLt")
    print(f"beat      {format_triplet(rep.beat)}")
    print(f"downbeat  {format_triplet(rep.downbeat)}")


def _heads_json(heads: ToyHeads, audio_len: int, pyr, prov: dict) -> dict:
    cp, rg, qp = head_outputs(heads, pyr)
    return {
        "version": SCHEMA_VERSION,
        "provenance": prov,
        "track_len": audio_len,
        "level_config": heads.level_cfg.to_dict(),
        "levels": [
            {"cls_prob": c.tolist(), "reg": r.tolist(), "quality": q.tolist()} for c, r, q in zip(cp, rg, qp)
        ],
    }


def read_head_outputs(path) -> tuple[AnchorGrid, list, list, list]:
    """Parse a head-output JSON file into (grid, cls_prob, reg, quality)."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON ({e})") from None
    level = LevelConfig.from_dict(doc["level_config"])
    grid = anchor_grid(int(doc["track_len"]), level)
    if len(doc["levels"]) != level.num_levels:
        raise ValueError(f"{path}: expected {level.num_levels} levels")
    cp = [np.asarray(l["cls_prob"], dtype=np.float64).reshape(-1, 2) for l in doc["levels"]]
    rg = [np.asarray(l["reg"], dtype=np.float64).reshape(-1, 2) for l in doc["levels"]]
    qp = [np.asarray(l["quality"], dtype=np.float64).reshape(-1) for l in doc["levels"]]
    return grid, cp, rg, qp


def cmd_decode(args) -> int:
    cfg = _config(args)
    prov = cfg.provenance()
    src = Path(args.input)
    if src.suffix.lower() == ".wav":
        if not args.checkpoint:
            raise UsageError("decode: a WAV input needs --checkpoint")
        heads = load_checkpoint(args.checkpoint)
        audio, _ = read_wav(src, heads.level_cfg.sample_rate)
        pyr = extract_pyramid(audio, heads.level_cfg)
        if args.dump_heads:
            Path(args.dump_heads).write_text(json_text(_heads_json(heads, len(audio), pyr, prov)))
        grid = anchor_grid(len(audio), heads.level_cfg)
        cp, rg, qp = head_outputs(heads, pyr)
    else:
        grid, cp, rg, qp = read_head_outputs(src)
    dets = score_and_collect(cp, rg, qp, grid, grid.cfg, cfg.decode.pre_filter, cfg.decode.score_mode)
    kept = {c: suppress(dets[c], cfg.decode) for c in IntervalClass}
    seq = detections_to_beats(kept[IntervalClass.BEAT], kept[IntervalClass.DOWNBEAT], end_time=grid.duration)
    _write(args.output, format_beats(seq, header=provenance_line(prov)))
    return EXIT_OK


def cmd_analyze_iou(args) -> int:
    cfg = _config(args)
    prov = cfg.provenance()
    tracks = []
    if args.inputs:
        for p in args.inputs:
            grid, cp, rg, qp = read_head_outputs(p)
            tracks.append(score_and_collect(cp, rg, qp, grid, grid.cfg, cfg.decode.pre_filter, cfg.decode.score_mode))
    else:
        if not args.checkpoint:
            raise UsageError("analyze-iou: give head-output JSON files or --checkpoint")
        heads = load_checkpoint(args.checkpoint)
        val = build_examples(cfg.corpus.specs("val"), heads.level_cfg, cfg.jobs)
        tracks = [predict_detections(heads, ex.pyramid, cfg.decode) for ex in val]
    hist = neighbor_iou_histogram(tracks)
    if args.csv:
        write_report(args.csv, hist, "csv", prov)
    if args.svg:
        write_report(args.svg, hist, "svg", prov)
    thr = select_iou_threshold(hist, min_confidence=args.min_confidence)
    print(f"selected IoU threshold: {thr:.1f}")
    return EXIT_OK


def _eval_pair(pair):
    est_path, ref_path = pair
    return joint_report(parse_beats(est_path), parse_beats(ref_path))


def cmd_eval(args) -> int:
    cfg = _config(args)
    est = _beats_files(Path(args.est))
    ref = _beats_files(Path(args.ref))
    names = sorted(set(est) & set(ref))
    if not names:
        raise ValueError("no track names common to --est and --ref")
    for missing in sorted(set(ref) - set(est)):
        print(f"warning: no prediction for {missing}", file=sys.stderr)
    reports = map_ordered(_eval_pair, [(est[n], ref[n]) for n in names], cfg.jobs)
    rows = []
    for n, r in zip(names, reports):
        for cls in ("beat", "downbeat"):
            rows.append([n, cls, *getattr(r, cls).as_row()])
    text = _csv_text(["track", "class", "f1", "cmlc", "cmlt", "amlc", "amlt"], rows, cfg.provenance())
    if args.output:
        _write(args.output, text)
    _print_summary(mean_reports(reports))
    return EXIT_OK


def _parse_cells(tokens: Sequence[str]) -> tuple[list[str], list[str]]:
    text = " ".join(tokens)
    parts = [p.strip() for p in text.split(" x ")]
    if len(parts) != 2:
        raise UsageError("ablate: --cells must look like 'leftness,centerness x nms,soft'")
    quals = [q for q in parts[0].split(",") if q]
    nms_alias = {"nms": "hard", "hard": "hard", "soft": "soft-linear", "soft-linear": "soft-linear", "soft-gaussian": "soft-gaussian"}
    bad = [q for q in quals if q not in ("leftness", "centerness")]
    modes = []
    for m in (m for m in parts[1].split(",") if m):
        if m not in nms_alias:
            bad.append(m)
        else:
            modes.append(nms_alias[m])
    if bad or not quals or not modes:
        raise UsageError(f"ablate: unknown cells {bad}")
    return quals, modes


def cmd_ablate(args) -> int:
    quals, modes = _parse_cells(args.cells)
    cfg = _config(args, _train_overrides(args))
    train = build_examples(cfg.corpus.specs("train"), cfg.level, cfg.jobs)
    val = build_examples(cfg.corpus.specs("val"), cfg.level, cfg.jobs)
    test = build_examples(cfg.corpus.specs("test"), cfg.level, cfg.jobs)
    rows = run_ablation(
        train, test, replace(cfg.train, seed=cfg.seed), cfg.loss, val, quals, modes, cfg.decode, cfg.level
    )
    text = _csv_text(ABLATION_HEADER, ([r[k] for k in ABLATION_HEADER] for r in rows), cfg.provenance())
    _write(args.output, text)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="beatdet", description="Beat/downbeat tracking as 1D anchor-free detection.")
    p.add_argument("--version", action="version", version=f"beatdet {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("fit-levels", help="k-means size limits from .beats files")
    s.add_argument("files", nargs="+")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--per-class", action="store_true", help="fit beats and downbeats separately")
    s.add_argument("-o", "--output")
    _common(s)
    s.set_defaults(func=cmd_fit_levels)

    s = sub.add_parser("targets", help="write the per-anchor targets of one annotation file")
    s.add_argument("beats")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--wav", help="take the track length from this audio file")
    g.add_argument("--duration", type=float, help="track length in seconds")
    s.add_argument("--quality", choices=["leftness", "centerness"])
    s.add_argument("--sub-box", choices=["stride", "length"])
    s.add_argument("-o", "--output")
    _common(s)
    s.set_defaults(func=cmd_targets)

    s = sub.add_parser("train-toy", help="train linear heads on a synthetic click-track corpus")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--weight-decay", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--eval-every", type=int)
    s.add_argument("--quality", choices=["leftness", "centerness"])
    s.add_argument("--n-train", type=int)
    s.add_argument("--n-val", type=int)
    s.add_argument("--n-test", type=int)
    s.add_argument("--quiet", action="store_true")
    _decode_flags(s)
    _common(s)
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("decode", help="head outputs (JSON) or WAV + checkpoint -> .beats")
    s.add_argument("input")
    s.add_argument("--checkpoint")
    s.add_argument("--dump-heads", help="also write the head outputs as JSON (WAV input only)")
    s.add_argument("-o", "--output")
    _decode_flags(s)
    _common(s)
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("analyze-iou", help="neighbour IoU histogram and threshold selection")
    s.add_argument("inputs", nargs="*", help="head-output JSON files")
    s.add_argument("--checkpoint", help="run this model on the synthetic validation corpus")
    s.add_argument("--csv")
    s.add_argument("--svg")
    s.add_argument("--min-confidence", type=float, default=0.2)
    _common(s)
    s.set_defaults(func=cmd_analyze_iou)

    s = sub.add_parser("eval", help="score a directory of predictions against references")
    s.add_argument("--est", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("-o", "--output", help="per-track CSV")
    _common(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="quality-score x NMS comparison at toy scale")
    s.add_argument("--cells", nargs="+", default=["leftness,centerness", "x", "nms,soft"])
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--n-train", type=int)
    s.add_argument("--n-val", type=int)
    s.add_argument("--n-test", type=int)
    s.add_argument("-o", "--output")
    _decode_flags(s)
    _common(s)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if not argv:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"beatdet: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
