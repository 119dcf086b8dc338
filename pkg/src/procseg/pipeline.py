"""Training, checkpoints, inference and evaluation of all methods."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .anchors import ConfigurationError
from .config import RunConfig
from .dataio import permute_halves
from .decoder import nms_select, uniform_segments
from .metrics import EvalReport, score_video
from .model import ProcNet
from .numerics import ParamSlot, TrainingError

log = logging.getLogger(__name__)

METHODS = ("procnets-lstm", "procnets-nms", "uniform")


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    params: dict
    cfg: RunConfig
    epoch: int = 0
    rng_state: dict | None = None

    def copy(self):
        params = {n: ParamSlot(s.value.copy(), s.grad.copy(), s.adam_m.copy(), s.adam_v.copy(), s.step_count)
                  for n, s in self.params.items()}
        return Checkpoint(params, self.cfg, self.epoch, json.loads(json.dumps(self.rng_state)))

    def model(self):
        return ProcNet(self.cfg, self.params)

    def save(self, path):
        arrays = {}
        for name, slot in self.params.items():
            arrays[f"value/{name}"] = slot.value
            arrays[f"adam_m/{name}"] = slot.adam_m
            arrays[f"adam_v/{name}"] = slot.adam_v
        meta = {
            "cfg": self.cfg.to_dict(),
            "epoch": self.epoch,
            "rng_state": self.rng_state,
            "steps": {n: s.step_count for n, s in self.params.items()},
        }
        arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            params = {}
            for name, step in meta["steps"].items():
                value = data[f"value/{name}"]
                params[name] = ParamSlot(value.copy(), np.zeros_like(value),
                                         data[f"adam_m/{name}"].copy(), data[f"adam_v/{name}"].copy(), step)
        return cls(params, RunConfig.from_dict(meta["cfg"]), meta["epoch"], meta["rng_state"])


def initial_checkpoint(cfg):
    rng = np.random.default_rng(cfg.seed)
    return Checkpoint(ProcNet(cfg).params, cfg, 0, rng.bit_generator.state)


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    log: list = field(default_factory=list)


def train(cfg, train_data, val_data=(), resume=None, on_epoch=None):
    """Per-video Adam training; keeps the checkpoint with the best val Jaccard.

    ``train_data``/``val_data`` are sequences of ``(AnnotatedVideo, features)``.
    ``resume`` continues a previous run from its saved epoch and RNG state.
    """
    if not train_data:
        raise ValueError("training set is empty")
    ckpt = resume.copy() if resume is not None else initial_checkpoint(cfg)
    if ckpt.cfg != cfg:
        cfg = ckpt.cfg.replace(epochs=cfg.epochs)
        ckpt.cfg = cfg
    net = ckpt.model()
    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.rng_state
    best, best_score = ckpt.copy(), -np.inf
    history = []
    for epoch in range(ckpt.epoch + 1, cfg.epochs + 1):
        t0 = time.perf_counter()
        sums = {"l_cla": 0.0, "l_reg": 0.0, "l_seq": 0.0, "total": 0.0}
        count = 0
        for i in rng.permutation(len(train_data)):
            video, x = train_data[i]
            if not video.segments:
                log.warning("video %s has no segments; skipped", video.id)
                continue
            batch = net.sample_batch(video.segments, rng)
            net.zero_grad()
            try:
                report = net.loss_and_backward(x, video.segments, batch)
                net.step()
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, video {video.id}: {exc}") from exc
            for k, v in report.as_dict().items():
                sums[k] += v
            count += 1
        record = {"epoch": epoch, **{k: v / max(count, 1) for k, v in sums.items()}}
        if val_data:
            rep = evaluate("procnets-lstm", val_data, net=net)
            record["val_jaccard"], record["val_miou"] = rep.jaccard, rep.miou
            score = rep.jaccard
        else:
            score = -record["total"]
        ckpt.epoch = epoch
        ckpt.rng_state = rng.bit_generator.state
        if score > best_score:
            best, best_score = ckpt.copy(), score
        history.append(record)
        log.info("epoch %d  %s  (%.1fs)", epoch,
                 "  ".join(f"{k}={v:.4f}" for k, v in record.items() if k != "epoch"),
                 time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(record, ckpt)
    if not history:
        best = ckpt.copy()
    return TrainResult(best, ckpt, history)


def format_log_record(record):
    return " ".join(f"{k}={v}" for k, v in record.items())


# ---------------------------------------------------------------- inference and evaluation

def _as_model(checkpoint=None, net=None):
    if net is not None:
        return net
    if checkpoint is None:
        raise ConfigurationError("this method needs a checkpoint")
    return checkpoint.model()


def infer(video, x, checkpoint=None, net=None):
    """Decoded segments for one video as a prediction-file record."""
    net = _as_model(checkpoint, net)
    if x.shape[1] != net.cfg.D or x.shape[0] != net.cfg.L:
        raise ConfigurationError(f"{video.id}: features {x.shape} do not match model ({net.cfg.L}, {net.cfg.D})")
    preds = net.predict(x)
    return {"id": video.id,
            "segments": [{"start_frame": s.start, "end_frame": s.end, "score": float(p)} for s, p in preds]}


def predictions_file(records):
    return {"videos": sorted(records, key=lambda r: r["id"])}


def _method_predictions(method, net, video, x, cfg):
    """``(preds, prf_preds, prf_scores)`` for one video."""
    if method == "uniform":
        n_eval = min(cfg.n_eval_proposals, video.num_frames)
        return uniform_segments(video.num_frames, cfg.n_uniform), uniform_segments(video.num_frames, n_eval), None
    if method == "procnets-nms":
        segs, scores = net.proposals(x)
        kept = nms_select(segs, scores, cfg.nms_iou, cfg.n_uniform)
        ranked = nms_select(segs, scores, cfg.nms_iou, cfg.n_eval_proposals)
        return [s for s, _ in kept], [s for s, _ in ranked], [p for _, p in ranked]
    if method == "procnets-lstm":
        grid = net.candidate_grid(x)
        emitted = net.predict(x, grid=grid)
        preds = [s for s, _ in emitted]
        # emitted segments first by step probability, padded with score-ranked grid candidates
        ranked = sorted(emitted, key=lambda e: -e[1])
        taken = set(preds)
        for m in np.argsort(-grid.scores, kind="stable"):
            if len(ranked) >= cfg.n_eval_proposals:
                break
            seg = grid.segments[m]
            if seg not in taken:
                taken.add(seg)
                ranked.append((seg, float(grid.scores[m])))
        ranked = ranked[:cfg.n_eval_proposals]
        return preds, [s for s, _ in ranked], None
    raise ConfigurationError(f"unknown method {method!r}; choose from {METHODS}")


def evaluate(method, data, checkpoint=None, net=None, cfg=None):
    """Score a method on ``[(AnnotatedVideo, features)]``; the uniform baseline needs no model."""
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; choose from {METHODS}")
    if method != "uniform":
        net = _as_model(checkpoint, net)
        cfg = net.cfg
    cfg = cfg or RunConfig()
    header = {"method": method, "n_uniform": cfg.n_uniform, "n_eval_proposals": cfg.n_eval_proposals,
              "tp_iou": cfg.tp_iou}
    if method != "uniform":
        header.update({"beam_size": cfg.beam_size, "nms_iou": cfg.nms_iou, "ablate": list(cfg.ablate)})
    report = EvalReport(method, header=header)
    for video, x in sorted(data, key=lambda d: d[0].id):
        preds, prf_preds, prf_scores = _method_predictions(method, net, video, x, cfg)
        scores = score_video(video.id, preds, list(video.segments), prf_preds, prf_scores, cfg.tp_iou)
        if scores is not None:
            report.videos.append(scores)
    return report


def permutation_experiment(data, checkpoint=None, net=None):
    """Evaluate on the original and half-swapped versions of every video."""
    net = _as_model(checkpoint, net)
    permuted = [permute_halves(v, x) for v, x in data]
    original = evaluate("procnets-lstm", data, net=net)
    swapped = evaluate("procnets-lstm", permuted, net=net)
    return {
        "original": original.to_dict(),
        "permuted": swapped.to_dict(),
        "delta_jaccard": swapped.jaccard - original.jaccard,
        "delta_miou": swapped.miou - original.miou,
    }


ABLATION_FLAGS = {
    "proposal_vec": "drop_proposal_vec",
    "location_emb": "drop_location_emb",
    "segment_content": "drop_segment_content",
}


def run_ablations(cfg, train_data, val_data, test_data):
    """Train one model per dropped decoder input and report each on the test data."""
    reports = {}
    for name, flag in ABLATION_FLAGS.items():
        result = train(cfg.replace(**{flag: True}), train_data, val_data)
        reports[name] = evaluate("procnets-lstm", test_data, checkpoint=result.best)
    return reports


def dump_report(obj):
    """Canonical JSON text for reports (sorted keys, stable float repr)."""
    if isinstance(obj, EvalReport):
        obj = obj.to_dict()
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"
