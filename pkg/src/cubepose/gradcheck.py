"""Seeded comparison of the analytic loss gradient with central differences."""

from dataclasses import dataclass

import numpy as np

from .geometry import (axis_angle_to_rotation, cube_from_extents, diameter,
                       rotation_to_axis_angle)
from .losses import LossWeights
from .metrics import ChamferDirection
from .optim import (LossProblem, finite_difference_gradient, gradient_error, loss_gradient,
                    random_axis, random_ball, random_gt_pose)

# Loss variants cycled through by instance index: (symmetric, direction, weights).
VARIANTS = (
    ("add", False, ChamferDirection.PRED_TO_GT, LossWeights(1.0, 0.1, 0.0)),
    ("adds_pred_to_gt", True, ChamferDirection.PRED_TO_GT, LossWeights(1.0, 0.1, 0.0)),
    ("adds_gt_to_pred", True, ChamferDirection.GT_TO_PRED, LossWeights(1.0, 0.1, 0.0)),
    ("add_riou", False, ChamferDirection.PRED_TO_GT, LossWeights(1.0, 0.1, 0.5)),
)
COARSE_H = 1e-4  # coarse step of the convergence-order check


@dataclass
class Instance:
    index: int
    variant: str
    problem: LossProblem
    x: np.ndarray
    extents: np.ndarray

    def describe(self):
        p = self.problem
        return {
            "index": self.index,
            "variant": self.variant,
            "x": [float(v) for v in self.x],
            "extents_mm": [float(v) for v in self.extents],
            "gt_rotation": [float(v) for v in p.gt_pose.rotation.reshape(-1)],
            "gt_translation_mm": [float(v) for v in p.gt_pose.translation],
            "offset": p.offset,
        }


def _nn_gap(a, b):
    """Smallest difference between first and second nearest distance, a -> b."""
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    d.sort(axis=1)
    return float(np.min(d[:, 1] - d[:, 0])), float(np.min(d[:, 0]))


def _smooth(problem, x, margin):
    """True when ``x`` is at least ``margin`` away from every kink of the loss."""
    rot, s, _, p = problem._points(x)
    g = problem._gt_points
    if problem.symmetric:
        a, b = (p, g) if problem.direction is ChamferDirection.PRED_TO_GT else (g, p)
        gap, closest = _nn_gap(a, b)
        if gap < margin or closest < margin:
            return False
    elif np.min(np.linalg.norm(p - g, axis=1)) < margin:
        return False
    vp = float(np.prod(s)) * problem._prior_volume
    if abs(vp - problem._gt_volume) < 1e-3 * problem._gt_volume:
        return False
    if problem.weights.riou:
        box = problem._pred_box(rot, s, x)
        c2 = np.cos(2 * (box.r - problem._gt_box.r))
        if abs(c2) < 1e-2:
            return False
    return True


def make_instance(index, seed=0, offset=0.2, h=1e-5):
    """Instance ``index`` of the seeded sequence, resampled until it is smooth.

    Rotation angles stay away from 0 and pi, where the axis-angle map has its
    removable singularities.
    """
    rng = np.random.default_rng([seed, index])
    name, symmetric, direction, weights = VARIANTS[index % len(VARIANTS)]
    while True:
        extents = rng.uniform(40.0, 250.0, size=3)
        cube = cube_from_extents(extents)
        size = diameter(cube.vertices)
        gt_pose = random_gt_pose(rng)
        aa = random_axis(rng) * rng.uniform(0.2, np.pi - 0.2)
        if weights.riou:
            # keep the boxes overlapping so the RIoU term is active
            t = gt_pose.translation + random_ball(rng, 0.1 * size)
            tweak = axis_angle_to_rotation(random_axis(rng) * rng.uniform(0.05, 0.3))
            aa = rotation_to_axis_angle(tweak @ gt_pose.rotation)
            if not 0.2 < np.linalg.norm(aa) < np.pi - 0.2:
                continue
        else:
            t = gt_pose.translation + random_ball(rng, 0.3 * size)
        raw = rng.uniform(-0.4, 0.4, size=3)
        x = np.concatenate([aa, t, raw])
        problem = LossProblem(cube, gt_pose, cube, weights, direction, symmetric, offset)
        if _smooth(problem, x, margin=1e3 * h * size):
            return Instance(index, name, problem, x, extents)


def check_instance(inst, h=1e-5, grad_fn=loss_gradient):
    analytic = grad_fn(inst.x, inst.problem)
    numeric = finite_difference_gradient(inst.problem.loss, inst.x, h)
    return gradient_error(analytic, numeric)


def convergence_order(inst, grad_fn=loss_gradient, h_coarse=COARSE_H, h_fine=1e-5):
    """Observed order of the finite-difference disagreement between two step sizes."""
    analytic = grad_fn(inst.x, inst.problem)
    e1 = np.max(np.abs(finite_difference_gradient(inst.problem.loss, inst.x, h_coarse)
                       - analytic))
    e2 = np.max(np.abs(finite_difference_gradient(inst.problem.loss, inst.x, h_fine)
                       - analytic))
    if e2 == 0.0 or e1 == 0.0:
        return float("nan")
    return float(np.log(e1 / e2) / np.log(h_coarse / h_fine))


def run_gradcheck(n=100, seed=0, h=1e-5, tol=1e-5, offset=0.2, grad_fn=loss_gradient):
    """Check ``n`` seeded instances; returns a report dict.

    ``passed`` requires every relative error below ``tol`` and a median
    observed finite-difference order between 1.5 and 2.5: central differences
    are second order, so shrinking the step from 1e-4 to ``h`` should shrink
    the disagreement by the square of that ratio.
    """
    errors, orders, worst = [], [], None
    for i in range(n):
        inst = make_instance(i, seed, offset, h)
        err = check_instance(inst, h, grad_fn)
        errors.append(err)
        orders.append(convergence_order(inst, grad_fn, max(COARSE_H, 10 * h), h))
        if worst is None or err > worst[0]:
            worst = (err, inst)
    finite = [o for o in orders if o == o]
    median_order = float(np.median(finite)) if finite else float("nan")
    max_error = float(max(errors))
    return {
        "instances": n,
        "seed": seed,
        "h": h,
        "tol": tol,
        "max_rel_error": max_error,
        "median_order": median_order,
        "order_ok": 1.5 <= median_order <= 2.5,
        "passed": max_error < tol and 1.5 <= median_order <= 2.5,
        "worst": dict(worst[1].describe(), rel_error=worst[0]),
        "errors": errors,
    }
