"""Pose evaluation metrics and supervised loss arithmetic.

Joint metrics follow the usual evaluation protocol: root-center both sets at
the pelvis before the plain per-joint error, and solve an orthogonal
Procrustes similarity alignment (rotation by SVD, uniform scale and
translation, reflections forced out) before the aligned variant. Vertex
error centers each mesh at its regressed pelvis. Inputs and outputs are in
millimeters when the caller works in millimeters; the functions are
unit-agnostic.

Amputated joints are excluded from a metric through a validity mask on the
joint set; a toggle in the evaluation config re-includes them for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .amputation import label_to_joints
from .body import NUM_JOINTS
from .errors import DegenerateGeometryError, InvalidInputError
from .rotations import matrix_to_6d

PELVIS = 0


@dataclass(frozen=True)
class JointSet:
    """K x 3 joint locations with a per-joint validity mask."""

    points: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise InvalidInputError(f"points must be (K, 3), got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise InvalidInputError("joint coordinates contain non-finite values")
        valid = np.asarray(self.valid, dtype=bool)
        if valid.shape != (points.shape[0],):
            raise InvalidInputError("valid mask must have one flag per joint")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "valid", valid)

    @staticmethod
    def all_valid(points):
        points = np.asarray(points, dtype=np.float64)
        return JointSet(points, np.ones(points.shape[0], dtype=bool))


def joint_set_for_label(points, label, include_amputated=False):
    """JointSet whose mask drops the label's amputated subtree unless included."""
    valid = np.ones(NUM_JOINTS, dtype=bool)
    if not include_amputated:
        for j in label_to_joints(label):
            valid[j] = False
    return JointSet(np.asarray(points, dtype=np.float64), valid)


def _check_pair(pred, gt):
    if pred.points.shape != gt.points.shape:
        raise InvalidInputError("joint sets differ in size")
    if not np.array_equal(pred.valid, gt.valid):
        raise InvalidInputError("joint sets carry different validity masks")
    if not np.any(pred.valid):
        raise InvalidInputError("no valid joints to evaluate")


def mpjpe(pred, gt, root=PELVIS):
    """Mean per-joint position error after root-centering both sets at the pelvis."""
    _check_pair(pred, gt)
    p = pred.points - pred.points[root]
    g = gt.points - gt.points[root]
    d = np.linalg.norm(p - g, axis=1)
    return float(d[pred.valid].mean())


def mve(pred_vertices, gt_vertices, joint_regressor, vertex_mask=None, root=PELVIS):
    """Mean per-vertex error after centering each mesh at its regressed pelvis.

    ``vertex_mask`` restricts the average to surviving vertices; the pelvis
    is always regressed from the full vertex set.
    """
    pred_vertices = np.asarray(pred_vertices, dtype=np.float64)
    gt_vertices = np.asarray(gt_vertices, dtype=np.float64)
    if pred_vertices.shape != gt_vertices.shape or pred_vertices.ndim != 2:
        raise InvalidInputError("vertex arrays must share an (N, 3) shape")
    p = pred_vertices - (joint_regressor @ pred_vertices)[root]
    g = gt_vertices - (joint_regressor @ gt_vertices)[root]
    d = np.linalg.norm(p - g, axis=1)
    if vertex_mask is not None:
        vertex_mask = np.asarray(vertex_mask, dtype=bool)
        if vertex_mask.shape != (pred_vertices.shape[0],):
            raise InvalidInputError("vertex mask must have one flag per vertex")
        if not np.any(vertex_mask):
            raise InvalidInputError("no surviving vertices to evaluate")
        d = d[vertex_mask]
    return float(d.mean())


def surviving_vertex_mask(tmpl, label):
    """Vertices whose dominant skin weight lies outside the masked subtrees."""
    dominant = np.argmax(tmpl.skin_weights, axis=1)
    dropped = label_to_joints(label)
    return ~np.isin(dominant, sorted(dropped))


def similarity_align(source, target, with_scale=True):
    """Least-squares similarity transform mapping source points onto target.

    Returns (s, R, t) with target ~ s * R @ source + t. Reflections are
    excluded by forcing det(R) = +1.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise InvalidInputError("alignment needs matching (K, 3) point sets")
    if source.shape[0] < 3:
        raise DegenerateGeometryError("similarity alignment needs at least 3 points")

    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    sc = source - mu_s
    tc = target - mu_t

    var_s = float(np.sum(sc**2))
    if var_s < 1e-18:
        raise DegenerateGeometryError("source points are coincident")
    sing = np.linalg.svd(sc, compute_uv=False)
    if sing[1] <= 1e-9 * sing[0]:
        raise DegenerateGeometryError("source points are collinear")

    H = tc.T @ sc
    U, D, Vt = np.linalg.svd(H)
    sign = np.sign(np.linalg.det(U @ Vt))
    S = np.diag([1.0, 1.0, sign])
    R = U @ S @ Vt
    scale = float(np.trace(np.diag(D) @ S)) / var_s if with_scale else 1.0
    t = mu_t - scale * R @ mu_s
    return scale, R, t


def pa_mpjpe(pred, gt, with_scale=True):
    """MPJPE after Procrustes similarity alignment of pred onto gt (valid joints)."""
    _check_pair(pred, gt)
    if int(pred.valid.sum()) < 3:
        raise DegenerateGeometryError("Procrustes alignment needs at least 3 valid joints")
    p = pred.points[pred.valid]
    g = gt.points[gt.valid]
    s, R, t = similarity_align(p, g, with_scale=with_scale)
    aligned = s * p @ R.T + t
    return float(np.linalg.norm(aligned - g, axis=1).mean())


# ---------------------------------------------------------------------------
# Supervised losses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    pose: float = 1e-3
    shape: float = 5e-4
    joints2d: float = 1e-2
    joints3d: float = 5e-2
    classifier: float = 1e-2

    def __post_init__(self):
        for name in ("pose", "shape", "joints2d", "joints3d", "classifier"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvalidInputError(f"loss weight {name} must be finite and >= 0")


@dataclass(frozen=True)
class LossComponents:
    pose: float
    shape: float
    joints2d: float
    joints3d: float
    classifier: float


def overall_loss(components, weights=None):
    """Weighted sum of the five supervision terms."""
    if weights is None:
        weights = LossWeights()
    vals = [components.pose, components.shape, components.joints2d,
            components.joints3d, components.classifier]
    for v in vals:
        if not np.isfinite(v) or v < 0:
            raise InvalidInputError("loss components must be finite and >= 0")
    return (
        weights.pose * components.pose
        + weights.shape * components.shape
        + weights.joints2d * components.joints2d
        + weights.joints3d * components.joints3d
        + weights.classifier * components.classifier
    )


def cross_entropy_cls(logits_4x4, label):
    """Sum of the four limb heads' cross-entropy against the true levels.

    Log-sum-exp stabilized; uniform logits give 4 ln 4.
    """
    logits_4x4 = np.asarray(logits_4x4, dtype=np.float64)
    if logits_4x4.shape != (4, 4):
        raise InvalidInputError(f"expected (4, 4) logits, got {logits_4x4.shape}")
    if not np.all(np.isfinite(logits_4x4)):
        raise InvalidInputError("logits contain non-finite values")
    total = 0.0
    for row, level in zip(logits_4x4, label.levels):
        m = row.max()
        lse = m + np.log(np.exp(row - m).sum())
        total += lse - row[level]
    return float(total)


def pose_loss_6d(pose_pred, pose_gt):
    """Squared pose error in the 6D rotation representation."""
    return float(np.sum((matrix_to_6d(pose_pred) - matrix_to_6d(pose_gt)) ** 2))


def shape_loss(betas_pred, betas_gt):
    return float(np.sum((np.asarray(betas_pred) - np.asarray(betas_gt)) ** 2))


def joints3d_loss(pred, gt):
    return float(np.sum((np.asarray(pred) - np.asarray(gt)) ** 2))


def joints2d_loss(pred_kp, gt_kp, bbox=None):
    """Squared 2D keypoint error over the ground truth's visible keypoints.

    Visibility is confidence > 0 in the ground truth, which is exactly the
    set left unmasked by the 2D exclusion rule. Coordinates are normalized
    by the bbox diagonal when a bbox (x, y, w, h) is given.
    """
    pred_kp = np.asarray(pred_kp, dtype=np.float64)
    gt_kp = np.asarray(gt_kp, dtype=np.float64)
    if pred_kp.shape != gt_kp.shape or pred_kp.ndim != 2 or pred_kp.shape[1] != 3:
        raise InvalidInputError("keypoint arrays must share a (J, 3) shape")
    visible = gt_kp[:, 2] > 0
    diff = pred_kp[visible, :2] - gt_kp[visible, :2]
    if bbox is not None:
        diag = float(np.hypot(bbox[2], bbox[3]))
        if diag <= 0:
            raise InvalidInputError("bbox diagonal must be positive")
        diff = diff / diag
    return float(np.sum(diff**2))


# ---------------------------------------------------------------------------
# Confusion-matrix statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionStats:
    accuracy: float
    precision: np.ndarray       # per class
    recall: np.ndarray          # per class
    f1: np.ndarray              # per class
    macro_f1: float
    column_percent: np.ndarray  # percentages normalized per predicted-label column
    zero_denominator: dict      # metric name -> list of degenerate class indices


def confusion_stats(counts):
    """Accuracy, per-class precision/recall/F1, macro F1, and column percentages.

    ``counts`` is a C x C integer matrix with rows the true class and columns
    the predicted class. Zero-denominator cases score 0 and are flagged.
    """
    counts = np.asarray(counts)
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or counts.shape[0] < 1:
        raise InvalidInputError(f"confusion matrix must be square, got {counts.shape}")
    if np.any(counts < 0) or not np.all(counts == np.floor(counts)):
        raise InvalidInputError("confusion counts must be non-negative integers")
    counts = counts.astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise InvalidInputError("confusion matrix is empty")

    diag = np.diag(counts)
    col_sums = counts.sum(axis=0)
    row_sums = counts.sum(axis=1)

    flags = {"precision": [], "recall": [], "f1": []}
    c = counts.shape[0]
    precision = np.zeros(c)
    recall = np.zeros(c)
    f1 = np.zeros(c)
    for i in range(c):
        if col_sums[i] > 0:
            precision[i] = diag[i] / col_sums[i]
        else:
            flags["precision"].append(i)
        if row_sums[i] > 0:
            recall[i] = diag[i] / row_sums[i]
        else:
            flags["recall"].append(i)
        if precision[i] + recall[i] > 0:
            f1[i] = 2.0 * precision[i] * recall[i] / (precision[i] + recall[i])
        else:
            flags["f1"].append(i)

    column_percent = np.zeros_like(counts)
    nz = col_sums > 0
    column_percent[:, nz] = counts[:, nz] / col_sums[nz] * 100.0

    return ConfusionStats(
        accuracy=float(diag.sum() / total),
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=float(f1.mean()),
        column_percent=column_percent,
        zero_denominator=flags,
    )
