import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cubepose.geometry import (
    Pose,
    apply_pose,
    axis_angle_to_rotation,
    cube_from_aabb,
    cube_from_extents,
    volume,
)
from cubepose.losses import (
    BevBox,
    LossWeights,
    PoseScaleParams,
    bev_box,
    combined_loss,
    cube_loss,
    loss_terms,
    predicted_cube,
    riou,
    riou_with_grad,
    volume_loss,
)
from cubepose.metrics import ChamferDirection, add_error

PG, GP = ChamferDirection.PRED_TO_GT, ChamferDirection.GT_TO_PRED
UNIT = cube_from_aabb((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
BOX = cube_from_extents((120.0, 80.0, 60.0))
GT_POSE = Pose.from_axis_angle([0.2, -0.4, 0.1], (10.0, -20.0, 900.0))

boxes = st.builds(BevBox, st.floats(0.1, 100), st.floats(0.1, 100), st.floats(-np.pi, np.pi),
                  st.floats(-60, 60), st.floats(-60, 60))


def at_gt(pose=GT_POSE, offset=0.2):
    return PoseScaleParams.from_pose(pose, offset)


# ---------------------------------------------------------------- cube loss


def test_cube_loss_zero_at_ground_truth():
    assert cube_loss(at_gt(), BOX, GT_POSE, BOX) == pytest.approx(0.0, abs=1e-9)
    for d in (PG, GP):
        assert cube_loss(at_gt(), BOX, GT_POSE, BOX, d, True) == pytest.approx(0.0, abs=1e-9)


def test_cube_loss_translation_shift():
    p = at_gt(Pose(GT_POSE.rotation, GT_POSE.translation + [10, 0, 0]))
    assert cube_loss(p, BOX, GT_POSE, BOX) == pytest.approx(10.0, abs=1e-9)


def test_asymmetric_cube_loss_equals_add_on_vertices():
    rng = np.random.default_rng(0)
    for _ in range(50):
        params = PoseScaleParams(rng.normal(size=3), rng.normal(size=3) * 50,
                                 np.log1p(-0.2) * np.ones(3), 0.2)
        expected = add_error(params.pose, GT_POSE, BOX.vertices)
        assert cube_loss(params, BOX, GT_POSE, BOX) == pytest.approx(expected, rel=1e-12)


def test_predicted_cube_uses_scale():
    p = PoseScaleParams(raw=np.log([1.8, 0.8, 0.3]), offset=0.2)
    np.testing.assert_allclose(predicted_cube(p, BOX).extents, [240, 80, 30], rtol=1e-12)


def test_collapse_incentive_with_free_translation():
    """A 90-degree rotation error makes a collapsed cube cheaper than a full-size one.

    With ADD-S measured from the predicted points, shrinking the cube to a point
    and sliding it onto one ground-truth vertex costs nothing, while every
    translation of the full-size rotated cube leaves a positive loss.
    """
    aa = np.array([1.0, 1.0, 0.0]) / np.sqrt(2) * (np.pi / 2)
    collapsed = PoseScaleParams(aa, UNIT.vertices[0], np.full(3, -30.0), 0.0)
    loss_collapsed = cube_loss(collapsed, UNIT, Pose(), UNIT, PG, True)
    grid = np.linspace(-0.5, 0.5, 11)
    loss_full = min(
        cube_loss(PoseScaleParams(aa, (x, y, z), np.zeros(3), 0.0), UNIT, Pose(), UNIT, PG, True)
        for x in grid for y in grid for z in grid)
    assert loss_collapsed < 1e-9
    assert loss_collapsed <= loss_full
    assert loss_full > 0.1
    # the volume term makes the collapse expensive again
    w = LossWeights(1.0, 1.0, 0.0)
    both = combined_loss(collapsed, UNIT, Pose(), UNIT, w, PG, True)
    assert both > loss_collapsed
    assert both == pytest.approx(loss_collapsed + 1.0, abs=1e-9)


# ---------------------------------------------------------------- volume loss


def test_volume_loss_examples():
    assert volume_loss(BOX, BOX) == 0.0
    a = cube_from_extents((200.0, 100.0, 100.0))
    b = cube_from_extents((100.0, 100.0, 100.0))
    assert volume(a) == pytest.approx(2e6) and volume_loss(a, b) == pytest.approx(1.0)
    flat = cube_from_extents((0.0, 0.0, 0.0))
    assert volume_loss(UNIT, flat) == 1.0  # denominator clamped at 1 mm^3


def test_volume_floor_from_offset():
    p = PoseScaleParams(raw=np.full(3, -20.0), offset=0.2)
    ratio = volume(predicted_cube(p, BOX)) / volume(BOX)
    assert ratio == pytest.approx(0.2**3, rel=1e-7)
    assert ratio >= 0.2**3


# ---------------------------------------------------------------- RIoU


def test_riou_examples():
    a = BevBox(1.0, 1.0, 0.3)
    assert riou(a, a) == 1.0
    assert riou(a, BevBox(1.0, 1.0, 0.3 + np.pi / 4)) == pytest.approx(0.0, abs=1e-12)
    assert riou(a, BevBox(1.0, 1.0, 0.3, 5.0, 0.0)) == 0.0


def test_riou_hand_computed():
    g = BevBox(4.0, 2.0)
    p = BevBox(4.0, 2.0, 0.0, 2.0, 0.0)  # half overlap: I = 4, U = 12
    assert riou(g, p) == pytest.approx(4.0 / 12.0, rel=1e-15)
    small = BevBox(2.0, 1.0)
    assert riou(g, small) == pytest.approx(2.0 / 8.0, rel=1e-15)


def test_riou_union_uses_areas():
    # a long thin box against itself rotated by 90 degrees is zero, but a wide
    # one against a slightly larger copy must stay positive and below one
    g = BevBox(1.0, 5.0)
    p = BevBox(1.2, 5.5)
    v = riou(g, p)
    assert 0 < v < 1
    assert v == pytest.approx(5.0 / 6.6, rel=1e-12)


def test_riou_swap_symmetry_fuzz():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        g = BevBox(*rng.uniform(0.1, 10, 2), rng.uniform(-np.pi, np.pi), *rng.normal(size=2) * 3)
        p = BevBox(*rng.uniform(0.1, 10, 2), rng.uniform(-np.pi, np.pi), *rng.normal(size=2) * 3)
        assert abs(riou(g, p) - riou(p, g)) <= 1e-12


@given(boxes, boxes)
def test_riou_in_unit_interval(g, p):
    assert 0.0 <= riou(g, p) <= 1.0


@given(boxes, boxes)
@settings(max_examples=200, deadline=None)
def test_riou_gradient_matches_finite_differences(g, p):
    value, grad = riou_with_grad(g, p)
    x = np.array([p.l, p.w, p.r, p.cx, p.cy])
    h = 1e-7

    def f(v):
        return riou(g, BevBox(*v))

    num = np.zeros(5)
    for j in range(5):
        e = np.zeros(5)
        e[j] = h
        up, down = f(x + e), f(x - e)
        # skip instances where a branch switches inside the stencil
        if abs((up - value) - (value - down)) / h > 1e-5:
            return
        num[j] = (up - down) / (2 * h)
    np.testing.assert_allclose(grad, num, atol=1e-5)


def test_bev_box_of_posed_cube():
    pose = Pose(axis_angle_to_rotation([0, 0, 0.5]), (100.0, 50.0, 900.0))
    b = bev_box(pose, BOX)
    assert (b.l, b.w) == pytest.approx((120.0, 80.0))
    assert b.r == pytest.approx(0.5)
    assert (b.cx, b.cy) == pytest.approx((100.0, 50.0))


def test_bev_box_rejects_bad_sides():
    with pytest.raises(ValueError):
        BevBox(0.0, 1.0)


# ---------------------------------------------------------------- combined


def test_combined_loss_weights():
    rng = np.random.default_rng(1)
    params = PoseScaleParams(rng.normal(size=3), GT_POSE.translation + rng.normal(size=3) * 20,
                             rng.normal(size=3) * 0.2, 0.2)
    cube_only = combined_loss(params, BOX, GT_POSE, BOX, LossWeights(1, 0, 0))
    assert cube_only == cube_loss(params, BOX, GT_POSE, BOX)
    terms = loss_terms(params, BOX, GT_POSE, BOX)
    w = LossWeights(1.0, 0.5, 2.0)
    expected = terms["cube"] + 0.5 * terms["volume"] + 2.0 * (1 - terms["riou"])
    assert combined_loss(params, BOX, GT_POSE, BOX, w) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("w", [(1, 0, 0), (1, 0.1, 0), (0, 1, 0), (0, 0, 1), (2, 3, 4)])
def test_combined_loss_zero_at_ground_truth(w):
    pose = Pose(axis_angle_to_rotation([0.0, 0.0, 0.7]), (10.0, 20.0, 800.0))
    assert combined_loss(at_gt(pose), BOX, pose, BOX, LossWeights(*w)) == pytest.approx(
        0.0, abs=1e-9)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(0, 0, 0)
    with pytest.raises(ValueError):
        LossWeights(-1, 1, 0)


def test_predicted_points_follow_pose():
    p = at_gt()
    pts = apply_pose(p.pose, predicted_cube(p, BOX).vertices)
    np.testing.assert_allclose(pts, apply_pose(GT_POSE, BOX.vertices), atol=1e-9)
