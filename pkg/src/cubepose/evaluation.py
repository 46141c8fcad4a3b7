"""Score prediction records against ground truth with ADD(-S)."""

from dataclasses import dataclass, field

from .geometry import diameter
from .metrics import BRUTE_FORCE_MAX, ChamferDirection, pose_error

OVERALL = "__all__"


@dataclass
class ClassStats:
    class_id: str
    n_gt: int = 0
    n_pred: int = 0
    correct: int = 0
    missed: int = 0
    false_preds: int = 0
    errors: list = field(default_factory=list)

    @property
    def count(self):
        """Scored entries: every ground truth plus every unmatched or extra prediction."""
        return self.n_gt + self.false_preds

    @property
    def accuracy(self):
        return self.correct / self.count if self.count else 0.0

    @property
    def mean_error(self):
        return sum(self.errors) / len(self.errors) if self.errors else float("nan")

    def row(self):
        return [self.class_id, self.count, self.n_gt, self.n_pred, self.correct, self.missed,
                self.false_preds, self.mean_error, self.accuracy]


CLASS_HEADER = ["class_id", "count", "n_gt", "n_pred", "correct", "missed", "false_preds",
                "mean_error_mm", "accuracy"]
RECORD_HEADER = ["image_id", "class_id", "symmetric", "error_mm", "diameter_mm", "threshold_mm",
                 "correct"]


@dataclass
class EvalReport:
    classes: list
    overall: ClassStats
    records: list  # rows matching RECORD_HEADER
    k: float
    direction: str
    config: dict


def evaluate_records(gt, pred, k=0.1, direction=ChamferDirection.GT_TO_PRED,
                     symmetric_classes=(), avg_diameter=0.0, config=None,
                     brute_force_max=BRUTE_FORCE_MAX):
    """Join predictions to ground truth on ``(image_id, class_id)`` and score them.

    Errors are measured on the ground-truth cube's vertices. When several
    predictions share a key the best one is scored and the rest count as
    incorrect; predictions with no ground truth also count as incorrect, and
    ground truths with no prediction as missed. ``avg_diameter`` > 0 replaces
    the per-record cube diameter in the threshold.
    """
    direction = ChamferDirection.parse(direction)
    preds = {}
    for p in pred:
        preds.setdefault((p.image_id, p.class_id), []).append(p)
    stats = {}

    def get(cid):
        return stats.setdefault(cid, ClassStats(cid))

    rows = []
    seen = set()
    for g in sorted(gt, key=lambda r: (r.image_id, r.class_id)):
        key = (g.image_id, g.class_id)
        st = get(g.class_id)
        st.n_gt += 1
        sym = g.symmetric or g.class_id in symmetric_classes
        diam = avg_diameter if avg_diameter > 0 else diameter(g.cube.vertices)
        cands = preds.get(key, [])
        if key in seen:
            cands = []  # duplicate ground truth: predictions were consumed by the first
        seen.add(key)
        if not cands:
            st.missed += 1
            rows.append([g.image_id, g.class_id, sym, float("nan"), diam, k * diam, False])
            continue
        errs = [pose_error(p.pose, g.pose, g.cube.vertices, sym, direction,
                           brute_force_max) for p in cands]
        best = min(errs)
        st.n_pred += len(cands)
        st.false_preds += len(cands) - 1
        st.errors.append(best)
        ok = best < k * diam
        st.correct += ok
        rows.append([g.image_id, g.class_id, sym, best, diam, k * diam, ok])
    for key in sorted(preds):
        if key not in seen:
            st = get(key[1])
            st.n_pred += len(preds[key])
            st.false_preds += len(preds[key])

    classes = [stats[c] for c in sorted(stats)]
    overall = ClassStats(OVERALL)
    for st in classes:
        overall.n_gt += st.n_gt
        overall.n_pred += st.n_pred
        overall.correct += st.correct
        overall.missed += st.missed
        overall.false_preds += st.false_preds
        overall.errors.extend(st.errors)
    return EvalReport(classes, overall, rows, k, direction.value, dict(config or {}))
