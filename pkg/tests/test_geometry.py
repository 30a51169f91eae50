import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundrl.geometry import (
    BoundingBox,
    GroundedInstance,
    PromptRecord,
    iou,
    rescale_instance,
    validate_prompt,
)


def pixel_iou(a, b, size=100):
    """Count unit cells [i, i+1) x [j, j+1) covered by integer boxes."""
    grid = np.arange(size)
    def mask(box):
        xs = (grid >= box[0]) & (grid < box[2])
        ys = (grid >= box[1]) & (grid < box[3])
        return np.outer(ys, xs)
    ma, mb = mask(a), mask(b)
    union = np.logical_or(ma, mb).sum()
    return 0.0 if union == 0 else np.logical_and(ma, mb).sum() / union


int_box = st.tuples(*[st.integers(0, 100)] * 4).map(lambda t: BoundingBox(*t))


class TestIoU:
    def test_identity(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(0, 0, 10, 10)) == 1.0

    def test_disjoint(self):
        assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(20, 20, 30, 30)) == 0.0

    def test_half_overlap_matches_pixel_count(self):
        a, b = (0, 0, 10, 10), (5, 0, 15, 10)
        assert pixel_iou(a, b) == pytest.approx(50 / 150, abs=1e-15)
        assert iou(BoundingBox(*a), BoundingBox(*b)) == pytest.approx(1 / 3, abs=1e-15)

    def test_degenerate_boxes(self):
        line = BoundingBox(5, 0, 5, 10)
        assert iou(line, line) == 0.0
        assert iou(line, BoundingBox(0, 0, 10, 10)) == 0.0

    @settings(max_examples=300)
    @given(int_box, int_box)
    def test_pixel_oracle(self, a, b):
        assert abs(iou(a, b) - pixel_iou(a.as_tuple(), b.as_tuple())) < 1e-9

    @given(int_box, int_box)
    def test_symmetric(self, a, b):
        assert iou(a, b) == iou(b, a)

    @given(int_box)
    def test_self_iou_is_one(self, a):
        if a.area > 0:
            assert iou(a, a) == 1.0

    @given(int_box, int_box, st.integers(0, 50), st.integers(0, 50))
    def test_translation_invariant(self, a, b, dx, dy):
        assert iou(a, b) == pytest.approx(iou(a.translated(dx, dy), b.translated(dx, dy)), abs=1e-12)


class TestBoundingBox:
    def test_reorders_corners(self):
        assert BoundingBox(50, 50, 10, 10).as_tuple() == (10, 10, 50, 50)

    @pytest.mark.parametrize("bad", [-1, float("nan"), float("inf")])
    def test_rejects_invalid_coordinates(self, bad):
        with pytest.raises(ValueError):
            BoundingBox(0, 0, bad, 10)

    def test_instance_index_is_one_based(self):
        with pytest.raises(ValueError):
            GroundedInstance(BoundingBox(0, 0, 1, 1), 0)


def _prompt(gt, m=3):
    return PromptRecord("p", m, [(100, 100)] * m, "find it", gt)


class TestValidatePrompt:
    def test_well_formed(self):
        assert validate_prompt(_prompt([GroundedInstance(BoundingBox(0, 0, 10, 10), 2)])) == []

    def test_index_out_of_range(self):
        problems = validate_prompt(_prompt([GroundedInstance(BoundingBox(0, 0, 10, 10), 4)]))
        assert len(problems) == 1
        assert "image_index out of range" in problems[0]
        assert problems[0].startswith("ground_truth[0].image_index")

    def test_swapped_box_is_fine(self):
        p = _prompt([GroundedInstance(BoundingBox(50, 50, 10, 10), 1)])
        assert validate_prompt(p) == []
        assert p.ground_truth[0].box.as_tuple() == (10, 10, 50, 50)

    def test_dims_length_and_box_bounds(self):
        p = PromptRecord("p", 2, [(100, 100)], "", [GroundedInstance(BoundingBox(0, 0, 200, 10), 1)])
        problems = validate_prompt(p)
        assert any(s.startswith("image_dims:") for s in problems)
        assert any("exceeds image dims" in s for s in problems)


def test_norm1000_rescale():
    g = GroundedInstance(BoundingBox(0, 500, 1000, 1000), 1)
    out = rescale_instance(g, (640, 480), "norm1000")
    assert out.box.as_tuple() == (0, 240, 640, 480)
    assert rescale_instance(g, (640, 480), "pixel") is g
