"""Command line entry point: ``procseg <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from .config import RunConfig
from .dataio import SynthConfig, load_dataset, save_dataset, synth_generate
from .metrics import EvalReport, score_video
from .pipeline import (ABLATION_FLAGS, METHODS, Checkpoint, dump_report, evaluate,
                       format_log_record, infer, permutation_experiment, predictions_file, train)
from .anchors import Segment

log = logging.getLogger("procseg")


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _run_config(args):
    cfg = RunConfig.from_dict(_read_json(args.config).get("run", {})) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "beam", None) is not None:
        cfg = cfg.replace(beam_size=args.beam)
    for name in getattr(args, "ablate", None) or ():
        cfg = cfg.replace(**{ABLATION_FLAGS[name]: True})
    return cfg


def _emit(obj, out_dir, name="report.json"):
    text = dump_report(obj)
    sys.stdout.write(text)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)


def _checkpoint(args):
    ckpt = Checkpoint.load(args.checkpoint)
    if args.beam is not None:
        ckpt.cfg = ckpt.cfg.replace(beam_size=args.beam)
    return ckpt


def cmd_gen_data(args):
    data = _read_json(args.config) if args.config else {}
    cfg = SynthConfig.from_dict(data.get("synth", {}))
    if args.seed is not None:
        cfg = SynthConfig.from_dict({**vars(cfg), "seed": args.seed})
    ds = synth_generate(cfg)
    save_dataset(args.out, ds.videos, ds.features)
    counts = Counter(v.split for v in ds.videos)
    _emit({"synth": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(cfg).items()},
           "videos": dict(sorted(counts.items()))}, None)
    return 0


def cmd_train(args):
    cfg = _run_config(args)
    train_data = load_dataset(args.data, "train", cfg.S_max)
    val_data = load_dataset(args.data, "val", cfg.S_max)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps({"run": cfg.to_dict()}, indent=2, sort_keys=True) + "\n")
    log_path = out / "train_log.txt"
    log_path.write_text("")

    def on_epoch(record, ckpt):
        with open(log_path, "a") as fh:
            fh.write(format_log_record(record) + "\n")
        ckpt.save(out / "last.npz")

    result = train(cfg, train_data, val_data, on_epoch=on_epoch)
    result.best.save(out / "best.npz")
    result.last.save(out / "last.npz")
    summary = {"config": cfg.to_dict(), "log": result.log, "best_epoch": result.best.epoch}
    if val_data:
        summary["val"] = evaluate("procnets-lstm", val_data, checkpoint=result.best).to_dict()
    _emit(summary, out)
    return 0


def cmd_infer(args):
    ckpt = _checkpoint(args)
    net = ckpt.model()
    data = load_dataset(args.data, args.split, ckpt.cfg.S_max)
    preds = predictions_file([infer(v, x, net=net) for v, x in data])
    _emit(preds, args.out, "predictions.json")
    return 0


def _eval_predictions(path, data, cfg):
    by_id = {r["id"]: r for r in _read_json(path)["videos"]}
    report = EvalReport("procnets-lstm", header={"method": "procnets-lstm", "source": str(path),
                                                 "n_eval_proposals": cfg.n_eval_proposals, "tp_iou": cfg.tp_iou})
    for video, _ in data:
        rec = by_id.get(video.id, {"segments": []})
        segs = [Segment(s["start_frame"], s["end_frame"]) for s in rec["segments"]]
        scores = [s.get("score", 0.0) for s in rec["segments"]]
        top = sorted(range(len(segs)), key=lambda i: -scores[i])[:cfg.n_eval_proposals]
        vs = score_video(video.id, segs, list(video.segments), [segs[i] for i in top], None, cfg.tp_iou)
        if vs is not None:
            report.videos.append(vs)
    return report


def cmd_eval(args):
    cfg = _run_config(args)
    if args.predictions:
        data = load_dataset(args.data, args.split, cfg.S_max)
        report = _eval_predictions(args.predictions, data, cfg)
    elif args.method == "uniform":
        data = load_dataset(args.data, args.split, cfg.S_max)
        report = evaluate("uniform", data, cfg=cfg)
    else:
        if not args.checkpoint:
            raise SystemExit(f"usage error: --method {args.method} needs --checkpoint")
        ckpt = _checkpoint(args)
        data = load_dataset(args.data, args.split, ckpt.cfg.S_max)
        report = evaluate(args.method, data, checkpoint=ckpt)
    _emit(report, args.out)
    return 0


def cmd_permute_eval(args):
    ckpt = _checkpoint(args)
    data = load_dataset(args.data, args.split, ckpt.cfg.S_max)
    _emit(permutation_experiment(data, checkpoint=ckpt), args.out)
    return 0


def cmd_stats(args):
    data = load_dataset(args.data, args.split)
    counts = Counter(len(v.segments) for v, _ in data)
    seg_lengths = Counter(s.length for v, _ in data for s in v.segments)
    lengths = [s.length for v, _ in data for s in v.segments]
    n = len(data)
    _emit({
        "num_videos": n,
        "splits": dict(sorted(Counter(v.split for v, _ in data).items())),
        "segments_per_video": {str(k): counts[k] for k in sorted(counts)},
        "mean_segments_per_video": sum(len(v.segments) for v, _ in data) / n if n else 0.0,
        "video_frames": dict(sorted(Counter(v.num_frames for v, _ in data).items())),
        "segment_length_histogram": {str(k): seg_lengths[k] for k in sorted(seg_lengths)},
        "mean_segment_length": sum(lengths) / len(lengths) if lengths else 0.0,
    }, args.out)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="procseg", description="Procedure segmentation toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("gen-data", cmd_gen_data, "write a synthetic dataset")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)

    sp = add("train", cmd_train, "train a model")
    sp.add_argument("--config")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--ablate", action="append", choices=sorted(ABLATION_FLAGS))

    sp = add("infer", cmd_infer, "decode segments with a trained model")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--out")
    sp.add_argument("--beam", type=int)

    sp = add("eval", cmd_eval, "evaluate a method on a split")
    sp.add_argument("--method", choices=METHODS, default="procnets-lstm")
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--checkpoint")
    sp.add_argument("--predictions", help="score a prediction file instead of running a model")
    sp.add_argument("--config")
    sp.add_argument("--out")
    sp.add_argument("--beam", type=int)

    sp = add("permute-eval", cmd_permute_eval, "compare original and half-swapped videos")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--out")
    sp.add_argument("--beam", type=int)

    sp = add("stats", cmd_stats, "dataset statistics")
    sp.add_argument("--data", required=True)
    sp.add_argument("--split")
    sp.add_argument("--out")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 2
        raise
    except Exception as exc:  # noqa: BLE001 - report and exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
