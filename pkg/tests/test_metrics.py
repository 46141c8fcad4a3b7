import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cubepose.errors import EmptyInput, EmptyPointSet
from cubepose.geometry import Pose, apply_pose, axis_angle_to_rotation, cube_from_aabb
from cubepose.metrics import (
    ChamferDirection,
    MetricScore,
    NnIndex,
    add_error,
    add_s_error,
    chamfer_mean,
    nearest,
    nearest_brute,
    pose_error,
    threshold_accuracy,
)

UNIT = cube_from_aabb((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5)).vertices
HALF_TURN = Pose.from_axis_angle([0, 0, np.pi])


def random_pose(rng, spread=100.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Pose.from_axis_angle(axis * rng.uniform(0, np.pi), rng.normal(size=3) * spread)


def test_add_identity_and_translation():
    p = Pose.from_axis_angle([0.1, 0.2, 0.3], (1, 2, 3))
    assert add_error(p, p, UNIT) == 0.0
    q = Pose(p.rotation, p.translation + [10, 0, 0])
    assert add_error(q, p, UNIT) == pytest.approx(10.0, abs=1e-12)


def test_half_turn_cube():
    assert add_error(HALF_TURN, Pose(), UNIT) == pytest.approx(np.sqrt(2), abs=1e-12)
    for d in ChamferDirection:
        assert add_s_error(HALF_TURN, Pose(), UNIT, d) == pytest.approx(0.0, abs=1e-12)
    assert pose_error(HALF_TURN, Pose(), UNIT, symmetric=True) == pytest.approx(0, abs=1e-12)
    assert pose_error(HALF_TURN, Pose(), UNIT, symmetric=False) == pytest.approx(np.sqrt(2))


def test_empty_point_set():
    with pytest.raises(EmptyPointSet):
        add_error(Pose(), Pose(), np.zeros((0, 3)))
    with pytest.raises(EmptyPointSet):
        add_s_error(Pose(), Pose(), np.zeros((0, 3)))


def test_add_is_symmetric_in_arguments():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(50, 3)) * 30
    for _ in range(20):
        a, b = random_pose(rng), random_pose(rng)
        assert add_error(a, b, pts) == pytest.approx(add_error(b, a, pts), rel=1e-12)


def test_add_left_invariance():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(50, 3)) * 30
    for _ in range(20):
        a, b, c = random_pose(rng), random_pose(rng), random_pose(rng)
        assert add_error(c.compose(a), c.compose(b), pts) == pytest.approx(
            add_error(a, b, pts), abs=1e-9)


@pytest.mark.parametrize("m", [8, 64, 1000, 4096])
def test_tree_matches_brute_force(m):
    rng = np.random.default_rng(m)
    pts = rng.normal(size=(m, 3)) * [80, 50, 30]
    for _ in range(100 if m <= 1000 else 10):  # full 100 at m=4096 in the acceptance suite
        a, b = random_pose(rng, 20), random_pose(rng, 20)
        for d in ChamferDirection:
            fast = add_s_error(a, b, pts, d, brute_force_max=-1)
            slow = add_s_error(a, b, pts, d, brute_force_max=10**9)
            assert abs(fast - slow) <= 1e-9


def test_index_is_exact():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(2000, 3))
    q = rng.normal(size=(500, 3))
    d1, i1 = NnIndex(pts).query(q)
    d2, i2 = nearest_brute(q, pts)
    np.testing.assert_array_equal(i1, i2)
    np.testing.assert_allclose(d1, d2, atol=1e-12)


def test_nearest_switches_at_crossover():
    pts = np.random.default_rng(3).normal(size=(65, 3))
    d_tree, _ = nearest(pts[:5] + 0.01, pts, brute_force_max=64)
    d_brute, _ = nearest(pts[:5] + 0.01, pts[:], brute_force_max=65)
    np.testing.assert_allclose(d_tree, d_brute, atol=1e-12)


def test_direction_matters():
    gt = np.array([[0.0, 0, 0], [10.0, 0, 0]])
    pred = np.array([[0.0, 0, 0], [0.0, 0, 0]])
    assert chamfer_mean(pred, gt, ChamferDirection.PRED_TO_GT) == 0.0
    assert chamfer_mean(pred, gt, ChamferDirection.GT_TO_PRED) == 5.0
    assert ChamferDirection.parse("Pred-To-Gt") is ChamferDirection.PRED_TO_GT


def test_adds_never_exceeds_add_fuzz():
    rng = np.random.default_rng(4)
    violations = 0
    for _ in range(1000):
        pts = rng.normal(size=(rng.integers(1, 40), 3)) * rng.uniform(1, 100)
        a, b = random_pose(rng), random_pose(rng)
        add = add_error(a, b, pts)
        for d in ChamferDirection:
            violations += add_s_error(a, b, pts, d) > add + 1e-12
    assert violations == 0


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_metrics_non_negative_and_zero_on_match(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(10, 3))
    a, b = random_pose(rng), random_pose(rng)
    assert add_error(a, b, pts) >= 0 and add_s_error(a, b, pts) >= 0
    assert add_error(a, a, pts) == 0.0
    assert add_s_error(a, a, pts) == 0.0


def test_symmetric_flag_only_matters_when_metrics_differ():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(30, 3))
    for _ in range(50):
        a, b = random_pose(rng, 1), random_pose(rng, 1)
        add, adds = add_error(a, b, pts), add_s_error(a, b, pts)
        assert pose_error(a, b, pts, False) == add
        assert pose_error(a, b, pts, True) == adds
        assert (pose_error(a, b, pts, True) != pose_error(a, b, pts, False)) == (add != adds)


def test_threshold_accuracy():
    d = 100.0
    assert threshold_accuracy([MetricScore(0.05 * d, d), MetricScore(0.2 * d, d)]) == 0.5
    assert threshold_accuracy([MetricScore(0.0, d)] * 3) == 1.0
    boundary = MetricScore(10.0, 100.0)
    assert not boundary.correct
    assert threshold_accuracy([boundary]) == 0.0
    with pytest.raises(EmptyInput):
        threshold_accuracy([])
    with pytest.raises(ValueError):
        threshold_accuracy([boundary], k=0)


def test_correct_flag_uses_its_own_k():
    assert MetricScore(6.0, 100.0, k=0.07).correct
    assert not MetricScore(7.1, 100.0, k=0.07).correct


def test_transformed_sets_match_apply_pose():
    rng = np.random.default_rng(6)
    pts = rng.normal(size=(20, 3))
    a, b = random_pose(rng), random_pose(rng)
    expected = np.mean(np.linalg.norm(apply_pose(a, pts) - apply_pose(b, pts), axis=1))
    assert add_error(a, b, pts) == pytest.approx(expected, rel=1e-15)
    assert np.allclose(axis_angle_to_rotation([0, 0, 0]), np.eye(3))
