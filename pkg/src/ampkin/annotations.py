"""Annotation records tying pose, joints, keypoints, and amputation labels.

A record stores the original pose as axis-angle triples plus explicit
per-joint mask bits (axis-angle cannot encode the zero-rotation sentinel, and
keeping the source pose with masking as a separate bit matches how masking is
applied as post-processing). Three invariants bind a record to a template:
the 2D keypoints of masked joints are (0, 0, 0), the stored 3D joints match a
fresh forward pass of the masked pose to 1e-6 m, and the mask bits equal the
label's subtree expansion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .amputation import (
    AmputationLabel,
    apply_mask,
    format_label,
    label_to_joints,
    mask_bits,
    mask_keypoints_2d,
    parse_label,
)
from .body import NUM_BETAS, NUM_JOINTS, forward, validate_pose
from .errors import InvalidInputError, SchemaError
from .rotations import axis_angle_to_matrix, matrix_to_axis_angle
from .synth import WeakPerspectiveCamera, project_weak_perspective

JOINTS3D_TOL_M = 1e-6

_REQUIRED_FIELDS = {
    "image", "bbox", "pose_aa", "pose_mask", "betas",
    "joints3d", "kp2d", "camera", "amputation",
}


@dataclass(frozen=True)
class AnnotationRecord:
    image_ref: str
    bbox: np.ndarray        # (4,) x, y, w, h pixels
    pose_aa: np.ndarray     # (24, 3) axis-angle of the source pose
    pose_mask: np.ndarray   # (24,) bool, True where the joint is zero-masked
    betas: np.ndarray       # (10,)
    joints3d: np.ndarray    # (24, 3) meters
    kp2d: np.ndarray        # (24, 3) x, y, conf pixels
    camera: WeakPerspectiveCamera
    label: AmputationLabel

    def __post_init__(self):
        object.__setattr__(self, "bbox", np.asarray(self.bbox, dtype=np.float64))
        object.__setattr__(self, "pose_aa", np.asarray(self.pose_aa, dtype=np.float64))
        object.__setattr__(self, "pose_mask", np.asarray(self.pose_mask, dtype=bool))
        object.__setattr__(self, "betas", np.asarray(self.betas, dtype=np.float64))
        object.__setattr__(self, "joints3d", np.asarray(self.joints3d, dtype=np.float64))
        object.__setattr__(self, "kp2d", np.asarray(self.kp2d, dtype=np.float64))
        shapes = {
            "bbox": (self.bbox, (4,)),
            "pose_aa": (self.pose_aa, (NUM_JOINTS, 3)),
            "pose_mask": (self.pose_mask, (NUM_JOINTS,)),
            "betas": (self.betas, (NUM_BETAS,)),
            "joints3d": (self.joints3d, (NUM_JOINTS, 3)),
            "kp2d": (self.kp2d, (NUM_JOINTS, 3)),
        }
        for name, (arr, want) in shapes.items():
            if arr.shape != want:
                raise SchemaError(f"record field {name} must have shape {want}, got {arr.shape}")

    def masked_pose(self):
        """Rotation matrices with the mask bits applied."""
        pose = axis_angle_to_matrix(self.pose_aa)
        pose[self.pose_mask] = 0.0
        return pose


@dataclass(frozen=True)
class Violation:
    invariant: str
    joints: tuple
    message: str

    def __str__(self):
        return f"{self.invariant}: {self.message} (joints {list(self.joints)})"


def emit_record(tmpl, pose, betas, label, camera, image_ref,
                image_size=(256, 256), occluded=(), bbox=None):
    """Build a self-consistent record from a source pose and a label.

    Runs the masking policy, the forward pass, the weak-perspective
    projection, and the 2D exclusion rule. The bbox defaults to the padded
    extent of the visible keypoints.
    """
    pose = validate_pose(pose)
    masked = apply_mask(pose, label)
    mesh = forward(tmpl, masked, betas)
    kp_raw = project_weak_perspective(mesh.joints_posed, camera, image_size)
    kp = np.concatenate([kp_raw, np.ones((NUM_JOINTS, 1))], axis=1)
    kp = mask_keypoints_2d(kp, label, occluded)

    if bbox is None:
        visible = kp[:, 2] > 0
        lo = kp[visible, :2].min(axis=0)
        hi = kp[visible, :2].max(axis=0)
        pad = 0.1 * float(np.linalg.norm(hi - lo)) + 1.0
        bbox = np.array([lo[0] - pad, lo[1] - pad, hi[0] - lo[0] + 2 * pad, hi[1] - lo[1] + 2 * pad])

    return AnnotationRecord(
        image_ref=image_ref,
        bbox=bbox,
        pose_aa=matrix_to_axis_angle(pose),
        pose_mask=mask_bits(label),
        betas=np.asarray(betas, dtype=np.float64),
        joints3d=mesh.joints_posed,
        kp2d=kp,
        camera=camera,
        label=label,
    )


def validate_record(rec, tmpl):
    """Return the list of invariant violations (empty when the record is consistent)."""
    violations = []

    masked_joints = sorted(label_to_joints(rec.label))
    bad = [j for j in masked_joints if np.any(rec.kp2d[j] != 0.0)]
    if bad:
        violations.append(Violation(
            invariant="keypoint-masking",
            joints=tuple(bad),
            message="amputated-subtree keypoints must be (0, 0) with confidence 0",
        ))

    expected_bits = mask_bits(rec.label)
    diff = [int(j) for j in np.where(rec.pose_mask != expected_bits)[0]]
    if diff:
        violations.append(Violation(
            invariant="mask-bits",
            joints=tuple(diff),
            message="pose_mask disagrees with the label's subtree expansion",
        ))

    try:
        mesh = forward(tmpl, rec.masked_pose(), rec.betas)
    except InvalidInputError as exc:
        violations.append(Violation(
            invariant="pose-validity", joints=(), message=str(exc),
        ))
        return violations
    err = np.linalg.norm(mesh.joints_posed - rec.joints3d, axis=1)
    bad = [int(j) for j in np.where(err > JOINTS3D_TOL_M)[0]]
    if bad:
        violations.append(Violation(
            invariant="joints3d-consistency",
            joints=tuple(bad),
            message=f"stored joints deviate from the forward pass by more than {JOINTS3D_TOL_M} m",
        ))

    return violations


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def record_to_dict(rec):
    return {
        "image": rec.image_ref,
        "bbox": [float(v) for v in rec.bbox],
        "pose_aa": [[float(v) for v in row] for row in rec.pose_aa],
        "pose_mask": [bool(v) for v in rec.pose_mask],
        "betas": [float(v) for v in rec.betas],
        "joints3d": [[float(v) for v in row] for row in rec.joints3d],
        "kp2d": [[float(v) for v in row] for row in rec.kp2d],
        "camera": {"s": float(rec.camera.scale), "tx": float(rec.camera.tx),
                   "ty": float(rec.camera.ty)},
        "amputation": format_label(rec.label),
    }


def record_from_dict(data, strict=False):
    if not isinstance(data, dict):
        raise SchemaError("record must be a JSON object")
    missing = _REQUIRED_FIELDS - set(data)
    if missing:
        raise SchemaError(f"record is missing required fields: {sorted(missing)}")
    if strict:
        unknown = set(data) - _REQUIRED_FIELDS
        if unknown:
            raise SchemaError(f"record has unknown fields in strict mode: {sorted(unknown)}")
    cam = data["camera"]
    if not isinstance(cam, dict) or {"s", "tx", "ty"} - set(cam):
        raise SchemaError("camera must be an object with fields s, tx, ty")
    try:
        return AnnotationRecord(
            image_ref=str(data["image"]),
            bbox=np.asarray(data["bbox"], dtype=np.float64),
            pose_aa=np.asarray(data["pose_aa"], dtype=np.float64),
            pose_mask=np.asarray(data["pose_mask"], dtype=bool),
            betas=np.asarray(data["betas"], dtype=np.float64),
            joints3d=np.asarray(data["joints3d"], dtype=np.float64),
            kp2d=np.asarray(data["kp2d"], dtype=np.float64),
            camera=WeakPerspectiveCamera(scale=float(cam["s"]), tx=float(cam["tx"]),
                                         ty=float(cam["ty"])),
            label=parse_label(str(data["amputation"])),
        )
    except (ValueError, TypeError, InvalidInputError) as exc:
        raise SchemaError(f"malformed record field: {exc}") from exc


def write_record(rec, path):
    """Write a record as JSON; float fields round-trip bit-exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record_to_dict(rec), fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_record(path, strict=False):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"record parse error at byte offset {exc.pos}: {exc.msg}") from exc
    return record_from_dict(data, strict=strict)


def records_equal(a, b):
    """Field-by-field equality with exact float comparison."""
    return (
        a.image_ref == b.image_ref
        and np.array_equal(a.bbox, b.bbox)
        and np.array_equal(a.pose_aa, b.pose_aa)
        and np.array_equal(a.pose_mask, b.pose_mask)
        and np.array_equal(a.betas, b.betas)
        and np.array_equal(a.joints3d, b.joints3d)
        and np.array_equal(a.kp2d, b.kp2d)
        and a.camera == b.camera
        and a.label == b.label
    )
