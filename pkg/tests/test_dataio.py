import json
import math

import numpy as np
import pytest

from conftest import DESK_SYNTH
from procseg.anchors import Segment, iou
from procseg.dataio import (AnnotatedVideo, AnnotationError, FeatureFormatError, SynthConfig, ending_frames,
                            load_annotations, load_dataset, load_features, parse_annotations, permute_halves,
                            save_dataset, save_features, shift_offsets, synth_generate, temporal_shift_augment)


def _video(segments, **kw):
    rec = {"id": "a", "duration": 300.0, "num_frames": 500, "split": "train", "segments": segments}
    rec.update(kw)
    return {"videos": [rec]}


def test_seconds_to_frames(tmp_path):
    path = tmp_path / "ann.json"
    path.write_text(json.dumps(_video([{"start": 30, "end": 60}])))
    (v,) = load_annotations(path)
    assert v.segments == (Segment(50, 100),)
    assert (v.id, v.num_frames, v.split) == ("a", 500, "train")


def test_empty_segments_skipped(caplog):
    assert parse_annotations(_video([])) == []
    assert "no segments" in caplog.text


def test_end_clipped(caplog):
    (v,) = parse_annotations(_video([{"start": 290, "end": 320}]))
    assert v.segments == (Segment(483, 500),)
    assert "clipped" in caplog.text


def test_rounding_to_empty_dropped(caplog):
    (v,) = parse_annotations(_video([{"start": 30, "end": 30.1}, {"start": 1, "end": 2}]))
    assert v.segments == (Segment(2, 3),)
    assert "dropped" in caplog.text


def test_segments_sorted_and_truncated():
    segs = [{"start": float(s), "end": float(s) + 5} for s in range(200, 0, -10)]
    (v,) = parse_annotations(_video(segs), s_max=16)
    assert len(v.segments) == 16 and list(v.segments) == sorted(v.segments)


@pytest.mark.parametrize("mutate, field", [
    (lambda r: r.pop("duration"), "duration"),
    (lambda r: r.update(num_frames="many"), "num_frames"),
    (lambda r: r["segments"][0].pop("end"), "end"),
])
def test_malformed_record_names_field(mutate, field):
    data = _video([{"start": 1, "end": 2}], id="vid7")
    mutate(data["videos"][0])
    with pytest.raises(AnnotationError, match=f"vid7.*{field}"):
        parse_annotations(data)


def test_bad_json(tmp_path):
    path = tmp_path / "ann.json"
    path.write_text("{not json")
    with pytest.raises(AnnotationError):
        load_annotations(path)


def test_annotated_video_checks():
    with pytest.raises(AnnotationError):
        AnnotatedVideo("a", 10, (Segment(5, 11),))
    with pytest.raises(AnnotationError):
        AnnotatedVideo("a", 10, (Segment(1, 2),), split="dev")


# ---------------------------------------------------------------- features

def test_feature_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=(7, 5)).astype(np.float32)
    save_features(x, tmp_path / "a.psf")
    y = load_features(tmp_path / "a.psf")
    assert y.dtype == np.float32 and y.tobytes() == x.tobytes()


def test_feature_file_size(tmp_path):
    save_features(np.zeros((500, 512), np.float32), tmp_path / "a.psf")
    raw = (tmp_path / "a.psf").read_bytes()
    assert len(raw) == 1_024_016
    assert raw[:4] == b"PSF1" and raw[4:8] == (500).to_bytes(4, "little") and raw[12:16] == bytes(4)


def test_feature_truncation(tmp_path):
    path = tmp_path / "a.psf"
    save_features(np.ones((4, 3), np.float32), path)
    path.write_bytes(path.read_bytes()[:16])
    with pytest.raises(FeatureFormatError, match="byte offset 16"):
        load_features(path)
    path.write_bytes(b"PSF")
    with pytest.raises(FeatureFormatError, match="byte offset 3"):
        load_features(path)


def test_feature_bad_magic(tmp_path):
    path = tmp_path / "a.psf"
    save_features(np.ones((4, 3), np.float32), path)
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(FeatureFormatError, match="magic"):
        load_features(path)


def test_dataset_round_trip(tmp_path):
    ds = synth_generate(SynthConfig(num_videos=6, max_segments=4, num_step_prototypes=4, s_max=16))
    save_dataset(tmp_path, ds.videos, ds.features)
    loaded = load_dataset(tmp_path)
    assert [v.id for v, _ in loaded] == sorted(v.id for v in ds.videos)
    by_id = {it.video.id: it for it in ds.items}
    for v, x in loaded:
        assert v.segments == by_id[v.id].video.segments
        assert np.array_equal(x, by_id[v.id].features)
    assert all(v.split == "test" for v, _ in load_dataset(tmp_path, "test"))


# ---------------------------------------------------------------- generator

def _check_generated(item, cfg):
    v = item.video
    L, half = cfg.L, cfg.L // 2
    assert v.num_frames == L and item.features.shape == (L, cfg.D)
    assert cfg.min_segments <= len(v.segments) <= cfg.max_segments
    assert list(v.segments) == sorted(v.segments)
    for a, b in zip(v.segments, v.segments[1:]):
        assert a.end < b.start  # background gap between segments
    for s in v.segments:
        assert 0 <= s.start < s.end <= L - ending_frames(L)
        assert cfg.min_segment_len <= s.length <= cfg.max_segment_len
        assert not (s.start < half < s.end)


def test_generator_invariants_desk():
    ds = synth_generate(DESK_SYNTH)
    assert len(ds.items) == 260
    assert [sum(v.split == s for v in ds.videos) for s in ("train", "val", "test")] == [200, 30, 30]
    for item in ds.items:
        _check_generated(item, DESK_SYNTH)


def test_generator_invariants_200():
    cfg = SynthConfig(num_videos=200, L=64, D=16, num_step_prototypes=8, min_segments=3, max_segments=6, seed=5)
    for item in synth_generate(cfg).items:
        _check_generated(item, cfg)


def test_generator_deterministic():
    cfg = SynthConfig(num_videos=20, seed=9)
    a, b = synth_generate(cfg), synth_generate(cfg)
    assert a.videos == b.videos
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.features, b.features))
    c = synth_generate(SynthConfig(num_videos=20, seed=10))
    assert a.videos != c.videos


def test_generator_noise_free_frames():
    cfg = SynthConfig(num_videos=5, segment_noise=0.0, background_noise=0.0, seed=2)
    ds = synth_generate(cfg)
    for item in ds.items:
        x = item.features
        for seg, step in zip(item.video.segments, item.steps):
            assert np.array_equal(x[seg.start:seg.end], np.tile(ds.world.steps[step].astype(np.float32),
                                                               (seg.length, 1)))
        assert np.array_equal(x[-1], ds.world.ending.astype(np.float32))


def test_generator_recipe_order():
    ds = synth_generate(SynthConfig(num_videos=30, seed=4))
    for item in ds.items:
        n = len(item.steps)
        assert list(item.steps) == list(ds.world.recipes[item.recipe][:n])


def test_default_split_fractions():
    ds = synth_generate(SynthConfig(num_videos=100))
    assert [sum(v.split == s for v in ds.videos) for s in ("train", "val", "test")] == [67, 23, 10]


def test_generator_rejects_bad_config():
    with pytest.raises(ValueError):
        SynthConfig(L=20)
    with pytest.raises(ValueError):
        SynthConfig(min_segments=5, max_segments=3)


# ---------------------------------------------------------------- augmentation

def test_shift_offsets():
    assert shift_offsets(64, 1) == [0]
    assert shift_offsets(64, 10) == [math.floor(i * 64 / 40 + 0.5) for i in range(10)]
    assert shift_offsets(64, 10)[:3] == [0, 2, 3]


def test_temporal_shift_consistency():
    cfg = SynthConfig(num_videos=3, seed=1, segment_noise=0.0, background_noise=0.0)
    ds = synth_generate(cfg)
    item = ds.items[0]
    copies = temporal_shift_augment(item, ds.world, 10)
    assert copies[0] is item
    offsets = shift_offsets(cfg.L, 10)
    for i, cp in enumerate(copies[1:], start=1):
        off = offsets[i]
        for seg, orig in zip(cp.video.segments, item.video.segments):
            if seg.end - off == orig.end:
                assert iou(seg.shifted(-off), orig) == 1.0
            # features follow the annotation
            step = cp.steps[cp.video.segments.index(seg)]
            assert np.array_equal(cp.features[seg.start], ds.world.steps[step].astype(np.float32))


def test_temporal_shift_single_is_identity():
    ds = synth_generate(SynthConfig(num_videos=2))
    assert temporal_shift_augment(ds.items[0], ds.world, 1) == [ds.items[0]]


def test_generator_augments_training_only():
    base = synth_generate(SynthConfig(num_videos=10, split_sizes=(6, 2, 2)))
    aug = synth_generate(SynthConfig(num_videos=10, split_sizes=(6, 2, 2), num_shifts=3))
    assert len(aug.items) > len(base.items)
    assert all(v.split == "train" for v in aug.videos[10:])


# ---------------------------------------------------------------- permutation

def test_permute_examples():
    x = np.arange(64 * 2, dtype=np.float32).reshape(64, 2)
    v = AnnotatedVideo("a", 64, (Segment(10, 20), Segment(40, 50)))
    pv, px = permute_halves(v, x)
    assert pv.segments == (Segment(8, 18), Segment(42, 52))
    assert np.array_equal(px[:32], x[32:]) and np.array_equal(px[32:], x[:32])


def test_permute_involution():
    ds = synth_generate(SynthConfig(num_videos=8, seed=3))
    for item in ds.items:
        v2, x2 = permute_halves(*permute_halves(item.video, item.features))
        assert v2 == item.video and np.array_equal(x2, item.features)


def test_permute_drops_straddling(caplog):
    v = AnnotatedVideo("a", 64, (Segment(30, 40), Segment(50, 60)))
    pv, _ = permute_halves(v, np.zeros((64, 1)))
    assert pv.segments == (Segment(18, 28),)
    assert "straddles" in caplog.text
