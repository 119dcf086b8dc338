from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import oracle_metrics, random_instance
from procseg.anchors import Segment
from procseg.decoder import uniform_segments
from procseg.metrics import EvalReport, jaccard_score, miou_score, prf_at_iou, score_video

GT = [Segment(10, 20)]
PREDS = [Segment(10, 30), Segment(0, 5)]


def test_identity_scores_one():
    gts = [Segment(0, 10), Segment(12, 30)]
    assert jaccard_score(gts, gts) == 1.0 and miou_score(gts, gts) == 1.0
    assert prf_at_iou(gts + [Segment(40, 41)], gts)[0] == 1.0


def test_jaccard_example():
    assert jaccard_score(PREDS, GT) == pytest.approx(0.5, abs=1e-12)


def test_miou_example():
    # union of [10, 20) and [10, 30) is 20 frames, so IoU = 10 / 20
    ref = oracle_metrics([(10, 30), (0, 5)], [(10, 20)], [1.0, 0.0])[1]
    assert ref == Fraction(1, 2)
    assert miou_score(PREDS, GT) == pytest.approx(float(ref), abs=1e-12)


def test_miou_below_jaccard_example():
    preds, gts = [Segment(5, 30)], [Segment(10, 20)]  # I/P 10/25, IoU 10/25
    assert miou_score(preds, gts) == pytest.approx(0.4)
    preds = [Segment(15, 25)]  # I/P 5/10, IoU 5/15
    assert jaccard_score(preds, gts) == pytest.approx(0.5) and miou_score(preds, gts) == pytest.approx(1 / 3)


def test_contained_preds_score_full_jaccard():
    assert jaccard_score([Segment(3, 9), Segment(40, 60)], [Segment(0, 64)]) == 1.0


def test_uniform_on_whole_video_gt():
    assert miou_score(uniform_segments(70, 7), [Segment(0, 70)]) == pytest.approx(1 / 7, abs=1e-12)


def test_prf_example():
    r, p, f = prf_at_iou([Segment(0, 9), Segment(50, 60)], [Segment(0, 10), Segment(20, 30)], [0.9, 0.8])
    assert (r, p, f) == pytest.approx((0.5, 0.5, 0.5), abs=1e-12)


def test_prf_no_overlap():
    assert prf_at_iou([Segment(50, 60)], [Segment(0, 10)]) == (0.0, 0.0, 0.0)


def test_prf_one_to_one():
    # two identical predictions can only claim the single gt once
    r, p, _ = prf_at_iou([Segment(0, 10), Segment(0, 10)], [Segment(0, 10)], [0.5, 0.4])
    assert (r, p) == (1.0, 0.5)


def test_empty_cases():
    assert jaccard_score([], GT) == 0.0 and miou_score([], GT) == 0.0
    with pytest.raises(ValueError):
        jaccard_score(PREDS, [])
    assert score_video("x", PREDS, [], PREDS) is None


def test_oracle_agreement():
    rng = np.random.default_rng(2024)
    for _ in range(300):
        preds, gts, scores = random_instance(rng)
        ref = oracle_metrics(preds, gts, scores)
        P, G = [Segment(*s) for s in preds], [Segment(*s) for s in gts]
        got = (jaccard_score(P, G), miou_score(P, G), *prf_at_iou(P, G, scores))
        assert np.allclose(got, [float(v) for v in ref], rtol=0, atol=1e-12)


seg = st.builds(lambda s, n: Segment(s, s + n), st.integers(0, 80), st.integers(1, 30))


@given(st.lists(seg, max_size=8), st.lists(seg, min_size=1, max_size=8), st.randoms())
def test_jaccard_dominates_and_order_invariance(preds, gts, rnd):
    j, m = jaccard_score(preds, gts), miou_score(preds, gts)
    assert 0 <= m <= j <= 1
    scores = [rnd.random() for _ in preds]
    shuffled = list(range(len(preds)))
    rnd.shuffle(shuffled)
    P2, S2 = [preds[i] for i in shuffled], [scores[i] for i in shuffled]
    assert jaccard_score(P2, gts) == j and miou_score(P2, gts) == m
    if len(set(scores)) == len(scores):
        assert prf_at_iou(P2, gts, S2) == prf_at_iou(preds, gts, scores)


def test_report_aggregates_per_video():
    rep = EvalReport("x", [score_video("b", PREDS, GT, PREDS), score_video("a", GT, GT, GT)])
    assert rep.jaccard == pytest.approx(75.0) and rep.miou == pytest.approx(75.0)
    d = rep.to_dict()
    assert [v["id"] for v in d["per_video"]] == ["a", "b"]
    assert all(0 <= d[k] <= 100 for k in ("jaccard", "miou", "recall", "precision", "f1"))
