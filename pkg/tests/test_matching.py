import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundrl.geometry import BoundingBox, GroundedInstance
from groundrl.matching import (
    brute_force_match,
    hungarian,
    match_instances,
    max_weight_assignment,
)
from groundrl.selftest import clustered_instances, random_instances
from helpers import inst


def enumerate_best(weights):
    """All injective row->col maps; returns (best total, lexicographically first optimum)."""
    n_rows, n_cols = len(weights), len(weights[0])
    best, best_seq = None, None
    n = max(n_rows, n_cols)
    for perm in itertools.permutations(range(n)):
        seq = tuple((r, perm[r]) for r in range(n_rows) if perm[r] < n_cols and weights[r][perm[r]] > 0)
        total = sum((Fraction(weights[r][c]) for r, c in seq), Fraction(0))
        if best is None or total > best or (total == best and seq < best_seq):
            best, best_seq = total, seq
    return best, best_seq


def F(x):
    return Fraction(str(x))


class TestAssignment:
    def test_two_by_two(self):
        w = [[F(0.9), F(0.1)], [F(0.2), F(0.8)]]
        total, seq = enumerate_best(w)
        assert total == F(1.7) and seq == ((0, 0), (1, 1))
        assert max_weight_assignment(w) == {0: 0, 1: 1}

    def test_diagonal(self):
        w = [[F(0.5), 0, 0], [0, F(0.6), 0], [0, 0, F(0.7)]]
        total, _ = enumerate_best(w)
        assert total == F(1.8)
        assert max_weight_assignment(w) == {0: 0, 1: 1, 2: 2}

    def test_zero_weight_not_matched(self):
        assert max_weight_assignment([[0]]) == {}

    def test_tie_picks_lexicographic_first(self):
        w = [[1, 1], [1, 1]]
        assert max_weight_assignment(w) == {0: 0, 1: 1}
        # Row 0 matched beats row 0 unmatched even if the total is equal.
        assert max_weight_assignment([[1], [1]]) == {0: 0}

    @settings(max_examples=200)
    @given(st.integers(1, 5), st.integers(1, 5), st.data())
    def test_matches_enumeration(self, n_rows, n_cols, data):
        w = [[data.draw(st.integers(0, 4)) for _ in range(n_cols)] for _ in range(n_rows)]
        total, seq = enumerate_best(w)
        got = max_weight_assignment(w)
        assert sum(w[r][c] for r, c in got.items()) == total
        assert tuple(sorted(got.items())) == seq

    def test_hungarian_square(self):
        cost = [[4, 1, 3], [2, 0, 5], [3, 2, 2]]
        assign, u, v = hungarian(cost)
        assert sum(cost[i][j] for i, j in enumerate(assign)) == 5
        for i in range(3):
            for j in range(3):
                assert cost[i][j] - u[i] - v[j] >= 0


class TestMatchInstances:
    def test_empty_predictions(self):
        m = match_instances([], [inst(0, 0, 5, 5), inst(1, 1, 4, 4)])
        assert m.pairs == () and m.unmatched_gts == (0, 1) and m.unmatched_preds == ()

    def test_cross_image_forbidden(self):
        m = match_instances([inst(0, 0, 10, 10, image=1)], [inst(0, 0, 10, 10, image=2)])
        assert m.pairs == ()
        assert m.unmatched_preds == (0,) and m.unmatched_gts == (0,)

    def test_prefers_total_over_greedy(self):
        # Greedy on pred 0 would take gt 0 (IoU 0.5) and leave pred 1 at IoU 0.
        gts = [inst(0, 0, 10, 10), inst(10, 0, 20, 10)]
        preds = [inst(5, 0, 15, 10), inst(0, 0, 10, 10)]
        m = match_instances(preds, gts)
        assert [(p, g) for p, g, _ in m.pairs] == [(0, 1), (1, 0)]
        assert m.total_iou == pytest.approx(1 + 1 / 3)

    def test_zero_iou_pairs_are_unmatched(self):
        m = match_instances([inst(0, 0, 1, 1)], [inst(50, 50, 60, 60)])
        assert m.pairs == () and m.unmatched_preds == (0,)

    def test_brute_force_examples(self):
        assert brute_force_match([inst(0, 0, 1, 1)], [inst(5, 5, 6, 6)]).pairs == ()
        gts = [inst(0, 0, 10, 10), inst(20, 20, 30, 30)]
        preds = [inst(1, 1, 10, 10), inst(21, 20, 30, 30)]
        assert brute_force_match(preds, gts) == match_instances(preds, gts)

    def test_brute_force_size_limit(self):
        many = [inst(k, k, k + 5, k + 5) for k in range(8)]
        with pytest.raises(ValueError):
            brute_force_match(many, many[:2])


def _check_invariants(m, preds, gts):
    p_seen = [p for p, _, _ in m.pairs]
    g_seen = [g for _, g, _ in m.pairs]
    assert len(set(p_seen)) == len(p_seen) and len(set(g_seen)) == len(g_seen)
    for p, g, v in m.pairs:
        assert v > 0 and preds[p].image_index == gts[g].image_index
    assert sorted(p_seen + list(m.unmatched_preds)) == list(range(len(preds)))
    assert sorted(g_seen + list(m.unmatched_gts)) == list(range(len(gts)))


@pytest.mark.parametrize("gen", [random_instances, clustered_instances])
def test_agrees_with_brute_force(gen):
    rng = np.random.default_rng(7)
    for _ in range(150):
        preds, gts = gen(rng, 3, 6), gen(rng, 3, 6)
        fast, slow = match_instances(preds, gts), brute_force_match(preds, gts)
        _check_invariants(fast, preds, gts)
        assert fast.total_iou == slow.total_iou
        assert fast.pairs == slow.pairs


def test_duplicate_boxes_tie_break():
    box = inst(0, 0, 10, 10)
    m = match_instances([box, box], [box, box])
    assert [(p, g) for p, g, _ in m.pairs] == [(0, 0), (1, 1)]


def test_permutation_invariance():
    rng = np.random.default_rng(11)
    for _ in range(60):
        preds, gts = clustered_instances(rng, 2, 5), clustered_instances(rng, 2, 5)
        base = match_instances(preds, gts)
        perm_p = rng.permutation(len(preds))
        perm_g = rng.permutation(len(gts))
        shuffled = match_instances([preds[i] for i in perm_p], [gts[i] for i in perm_g])
        assert shuffled.total_iou == base.total_iou
        relabeled = {(int(perm_p[p]), int(perm_g[g])) for p, g, _ in shuffled.pairs}
        if relabeled != {(p, g) for p, g, _ in base.pairs}:
            # Equal-total alternatives may differ; they must still be optimal.
            assert shuffled.total_iou == brute_force_match(preds, gts).total_iou


def test_adding_prediction_never_hurts():
    rng = np.random.default_rng(3)
    for _ in range(100):
        preds, gts = clustered_instances(rng, 2, 4), clustered_instances(rng, 2, 4)
        extra = clustered_instances(rng, 2, 1)
        before = match_instances(preds, gts).total_iou
        after = match_instances(preds + extra, gts).total_iou
        assert after >= before


def test_float_coordinates():
    gts = [GroundedInstance(BoundingBox(0.5, 0.25, 10.75, 9.5), 1)]
    preds = [GroundedInstance(BoundingBox(0.6, 0.2, 10.0, 9.9), 1)]
    assert match_instances(preds, gts) == brute_force_match(preds, gts)
