"""Annotation/feature files, the synthetic video generator and data transforms.

A dataset directory holds ``annotations.json`` and one ``features/<id>.psf``
file per video.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .anchors import Segment

log = logging.getLogger(__name__)

PSF_MAGIC = b"PSF1"
PSF_HEADER = struct.Struct("<4sIII")
SPLITS = ("train", "val", "test")


class AnnotationError(ValueError):
    pass


class FeatureFormatError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotatedVideo:
    id: str
    num_frames: int
    segments: tuple
    split: str = "train"
    duration: float | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise AnnotationError(f"{self.id}: unknown split {self.split!r}")
        segs = tuple(sorted(self.segments))
        object.__setattr__(self, "segments", segs)
        for s in segs:
            if s.start < 0 or s.end > self.num_frames:
                raise AnnotationError(f"{self.id}: segment [{s.start}, {s.end}) outside {self.num_frames} frames")


# ---------------------------------------------------------------- annotations

def _round_half_up(x):
    return int(math.floor(x + 0.5))


def _field(rec, key, kind, vid):
    if key not in rec:
        raise AnnotationError(f"video {vid!r}: missing field {key!r}")
    val = rec[key]
    if kind is float and isinstance(val, (int, float)) and not isinstance(val, bool):
        return float(val)
    if kind is int and isinstance(val, int) and not isinstance(val, bool):
        return val
    if kind is str and isinstance(val, str):
        return val
    if kind is list and isinstance(val, list):
        return val
    raise AnnotationError(f"video {vid!r}: field {key!r} has bad value {val!r}")


def parse_annotations(data, s_max=16):
    if not isinstance(data, dict) or not isinstance(data.get("videos"), list):
        raise AnnotationError("annotation file needs a top-level 'videos' list")
    videos = []
    for rec in data["videos"]:
        vid = rec.get("id", "?") if isinstance(rec, dict) else "?"
        if not isinstance(rec, dict):
            raise AnnotationError(f"video {vid!r}: record is not an object")
        vid = _field(rec, "id", str, vid)
        duration = _field(rec, "duration", float, vid)
        n = _field(rec, "num_frames", int, vid)
        split = _field(rec, "split", str, vid)
        if duration <= 0 or n < 1:
            raise AnnotationError(f"video {vid!r}: duration and num_frames must be positive")
        segs = []
        for i, srec in enumerate(_field(rec, "segments", list, vid)):
            if not isinstance(srec, dict):
                raise AnnotationError(f"video {vid!r}: segment {i} is not an object")
            start = _round_half_up(_field(srec, "start", float, vid) * n / duration)
            end = _round_half_up(_field(srec, "end", float, vid) * n / duration)
            if end > n:
                log.warning("video %s: segment %d ends past the video; clipped", vid, i)
                end = n
            start = max(start, 0)
            if end <= start:
                log.warning("video %s: segment %d is empty after rounding; dropped", vid, i)
                continue
            segs.append(Segment(start, end))
        if not segs:
            log.warning("video %s has no segments; skipped", vid)
            continue
        segs.sort()
        if any(a.end > b.start for a, b in zip(segs, segs[1:])):
            log.warning("video %s has overlapping segments", vid)
        if len(segs) > s_max:
            log.warning("video %s has %d segments; keeping the first %d", vid, len(segs), s_max)
            segs = segs[:s_max]
        videos.append(AnnotatedVideo(vid, n, tuple(segs), split, duration))
    return videos


def load_annotations(path, s_max=16):
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"{path}: invalid JSON ({exc})") from exc
    return parse_annotations(data, s_max)


def annotations_to_dict(videos):
    out = []
    for v in videos:
        duration = float(v.duration if v.duration is not None else v.num_frames)
        scale = duration / v.num_frames
        out.append({
            "id": v.id,
            "duration": duration,
            "num_frames": v.num_frames,
            "split": v.split,
            "segments": [{"start": s.start * scale, "end": s.end * scale} for s in v.segments],
        })
    return {"videos": out}


def save_annotations(videos, path):
    with open(path, "w") as fh:
        json.dump(annotations_to_dict(videos), fh, indent=1)


# ---------------------------------------------------------------- features

def save_features(x, path):
    x = np.asarray(x)
    if x.ndim != 2:
        raise FeatureFormatError(f"features must be 2-D, got shape {x.shape}")
    with open(path, "wb") as fh:
        fh.write(PSF_HEADER.pack(PSF_MAGIC, x.shape[0], x.shape[1], 0))
        fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())


def load_features(path):
    raw = Path(path).read_bytes()
    if len(raw) < PSF_HEADER.size:
        raise FeatureFormatError(f"{path}: truncated header at byte offset {len(raw)}")
    magic, L, D, reserved = PSF_HEADER.unpack_from(raw)
    if magic != PSF_MAGIC:
        raise FeatureFormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    if reserved != 0:
        raise FeatureFormatError(f"{path}: reserved header word is {reserved}, expected 0 at byte offset 12")
    expected = PSF_HEADER.size + 4 * L * D
    if len(raw) != expected:
        raise FeatureFormatError(
            f"{path}: expected {expected} bytes for {L}x{D}, file ends at byte offset {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=PSF_HEADER.size).reshape(L, D).astype(np.float32)


def save_dataset(directory, videos, features):
    directory = Path(directory)
    (directory / "features").mkdir(parents=True, exist_ok=True)
    save_annotations(videos, directory / "annotations.json")
    for v, x in zip(videos, features):
        save_features(x, directory / "features" / f"{v.id}.psf")


def load_dataset(directory, split=None, s_max=16):
    """``[(AnnotatedVideo, features)]`` sorted by video id."""
    directory = Path(directory)
    videos = load_annotations(directory / "annotations.json", s_max)
    out = []
    for v in sorted(videos, key=lambda v: v.id):
        if split is not None and v.split != split:
            continue
        x = load_features(directory / "features" / f"{v.id}.psf")
        if x.shape[0] != v.num_frames:
            raise FeatureFormatError(f"{v.id}: features have {x.shape[0]} frames, annotation says {v.num_frames}")
        out.append((v, x))
    return out


# ---------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class SynthConfig:
    num_videos: int = 260
    L: int = 64
    D: int = 16
    num_step_prototypes: int = 16
    num_recipes: int = 4
    min_segments: int = 3
    max_segments: int = 16
    min_segment_len: int = 2
    max_segment_len: int = 10
    segment_noise: float = 0.5
    background_noise: float = 0.5
    seed: int = 0
    split_sizes: tuple | None = None  # (train, val, test); None -> 67/23/10 percent
    num_shifts: int = 1  # augmented copies per training video (1 = off)
    s_max: int = 16

    def __post_init__(self):
        if not 1 <= self.min_segments <= self.max_segments <= self.s_max:
            raise ValueError("need 1 <= min_segments <= max_segments <= s_max")
        if not 1 <= self.min_segment_len <= self.max_segment_len:
            raise ValueError("bad segment length range")
        if self.L < 2 * self.s_max:
            raise ValueError("L must be at least 2 * s_max")
        if self.max_segments > self.num_step_prototypes:
            raise ValueError("each recipe step needs its own prototype")
        if self.split_sizes is not None and sum(self.split_sizes) != self.num_videos:
            raise ValueError("split_sizes must add up to num_videos")
        if self.num_shifts < 1:
            raise ValueError("num_shifts must be >= 1")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if data.get("split_sizes") is not None:
            data["split_sizes"] = tuple(data["split_sizes"])
        return cls(**data)


@dataclass
class SynthWorld:
    """Prototype vectors shared by every video of a synthetic dataset."""

    steps: np.ndarray
    background: np.ndarray
    ending: np.ndarray
    recipes: np.ndarray  # num_recipes x max_segments prototype ids
    cfg: SynthConfig


@dataclass
class SynthVideo:
    video: AnnotatedVideo
    features: np.ndarray
    steps: tuple
    recipe: int


@dataclass
class SynthDataset:
    world: SynthWorld
    items: list = field(default_factory=list)

    @property
    def videos(self):
        return [it.video for it in self.items]

    @property
    def features(self):
        return [it.features for it in self.items]


def ending_frames(L):
    return max(1, math.ceil(0.05 * L))


def render_features(world, segments, steps, L, rng):
    cfg = world.cfg
    D = world.background.shape[0]
    x = world.background + cfg.background_noise * rng.standard_normal((L, D))
    n_end = ending_frames(L)
    x[L - n_end:] = world.ending + cfg.background_noise * rng.standard_normal((n_end, D))
    for seg, step in zip(segments, steps):
        x[seg.start:seg.end] = world.steps[step] + cfg.segment_noise * rng.standard_normal((seg.length, D))
    return x.astype(np.float32)


def _place_segments(cfg, n, rng, attempts=100):
    L = cfg.L
    usable = L - ending_frames(L)
    half = L // 2
    for _ in range(attempts):
        lens = rng.integers(cfg.min_segment_len, cfg.max_segment_len + 1, size=n)
        free = usable - int(lens.sum()) - (n - 1)
        if free < 0:
            continue
        gaps = rng.multinomial(free, np.full(n + 1, 1.0 / (n + 1)))
        gaps[1:n] += 1
        segs, pos = [], 0
        for i in range(n):
            pos += int(gaps[i])
            segs.append(Segment(pos, pos + int(lens[i])))
            pos += int(lens[i])
        if all(not (s.start < half < s.end) for s in segs):
            return segs
    return None


def synth_generate(cfg: SynthConfig):
    rng = np.random.default_rng(cfg.seed)
    world = SynthWorld(
        steps=rng.standard_normal((cfg.num_step_prototypes, cfg.D)),
        background=rng.standard_normal(cfg.D),
        ending=rng.standard_normal(cfg.D),
        recipes=np.stack([rng.permutation(cfg.num_step_prototypes)[:cfg.max_segments]
                          for _ in range(cfg.num_recipes)]),
        cfg=cfg,
    )
    if cfg.split_sizes is None:
        n_train = round(0.67 * cfg.num_videos)
        n_val = round(0.23 * cfg.num_videos)
        sizes = (n_train, n_val, cfg.num_videos - n_train - n_val)
    else:
        sizes = cfg.split_sizes
    splits = [s for s, count in zip(SPLITS, sizes) for _ in range(count)]
    width = len(str(cfg.num_videos))
    data = SynthDataset(world)
    for i, split in enumerate(splits):
        n = int(rng.integers(cfg.min_segments, cfg.max_segments + 1))
        segs = _place_segments(cfg, n, rng)
        while segs is None:
            log.warning("could not place %d segments in %d frames; trying %d", n, cfg.L, n - 1)
            n -= 1
            if n < 1:
                raise RuntimeError("cannot place even one segment; check segment lengths")
            segs = _place_segments(cfg, n, rng)
        recipe = int(rng.integers(cfg.num_recipes))
        steps = tuple(int(s) for s in world.recipes[recipe][:n])
        x = render_features(world, segs, steps, cfg.L, rng)
        video = AnnotatedVideo(f"v{i:0{width}d}", cfg.L, tuple(segs), split, float(cfg.L))
        data.items.append(SynthVideo(video, x, steps, recipe))
    if cfg.num_shifts > 1:
        extra = []
        for item in data.items:
            if item.video.split == "train":
                extra.extend(temporal_shift_augment(item, world, cfg.num_shifts, rng)[1:])
        data.items.extend(extra)
    return data


def shift_offsets(L, num_shifts):
    return [_round_half_up(i * L / (4 * num_shifts)) for i in range(num_shifts)]


def temporal_shift_augment(item: SynthVideo, world: SynthWorld, num_shifts=10, rng=None):
    """Copies of a synthetic video with every boundary moved later in time.

    Copy 0 is the original. Other copies are re-rendered; segments pushed
    past the end are clipped, or dropped when nothing is left of them.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    L = item.video.num_frames
    copies = []
    for i, off in enumerate(shift_offsets(L, num_shifts)):
        if off == 0:
            copies.append(item)
            continue
        segs, steps = [], []
        for seg, step in zip(item.video.segments, item.steps):
            if seg.start + off >= L:
                log.warning("%s shift %d: segment [%d, %d) pushed out; dropped",
                            item.video.id, i, seg.start, seg.end)
                continue
            segs.append(Segment(seg.start + off, min(seg.end + off, L)))
            steps.append(step)
        if not segs:
            continue
        x = render_features(world, segs, steps, L, rng)
        video = replace(item.video, id=f"{item.video.id}_s{i}", segments=tuple(segs))
        copies.append(SynthVideo(video, x, tuple(steps), item.recipe))
    return copies


def permute_halves(video: AnnotatedVideo, x):
    """Swap the first and second halves of a video, features and segments alike."""
    L = video.num_frames
    half = L // 2
    x = np.asarray(x)
    moved = np.concatenate([x[half:], x[:half]], axis=0)
    segs = []
    for s in video.segments:
        if s.end <= half:
            segs.append(s.shifted(L - half))
        elif s.start >= half:
            segs.append(s.shifted(-half))
        else:
            log.warning("%s: segment [%d, %d) straddles the midpoint; dropped", video.id, s.start, s.end)
    return replace(video, segments=tuple(segs)), moved
