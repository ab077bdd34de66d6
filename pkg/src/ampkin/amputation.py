"""Amputation label vocabulary, subtree expansion, and masking policy.

Four limbs (left/right arm, left/right leg) each carry a 4-class level:
0 = intact, 1/2/3 = amputation at increasing severity. Arm levels mask from
the wrist / elbow / shoulder; leg levels from the ankle / knee / hip. Masking
a limb zeroes the pose rotation of that joint and every descendant, which is
what makes the body model collapse the limb. 2D keypoints of masked joints
are excluded from supervision by moving them to (0, 0) with zero confidence;
3D joints and pose parameters are deliberately left untouched by the 2D rule.

The 12 single-limb amputated states are indexed 0..11 as
``index = 3 * limb_ordinal + (level - 1)`` with limb order
(L_arm, R_arm, L_leg, R_leg). This ordering is normative for this artifact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import NUM_JOINTS, PARENTS
from .errors import InvalidInputError
from .rotations import is_zero_matrix

LIMB_ORDER = ("L_arm", "R_arm", "L_leg", "R_leg")

# Amputated parent joint per (limb, level). Levels 1..3 move proximally:
# arms wrist -> elbow -> shoulder, legs ankle -> knee -> hip.
_MASK_ROOT = {
    ("L_arm", 1): 20, ("L_arm", 2): 18, ("L_arm", 3): 16,
    ("R_arm", 1): 21, ("R_arm", 2): 19, ("R_arm", 3): 17,
    ("L_leg", 1): 7, ("L_leg", 2): 4, ("L_leg", 3): 1,
    ("R_leg", 1): 8, ("R_leg", 2): 5, ("R_leg", 3): 2,
}

_LABEL_KEYS = ("Larm", "Rarm", "Lleg", "Rleg")


@dataclass(frozen=True)
class LimbClass:
    """One limb's 4-class amputation state (level 0 = intact)."""

    limb: str
    level: int

    def __post_init__(self):
        if self.limb not in LIMB_ORDER:
            raise InvalidInputError(f"unknown limb {self.limb!r}")
        if self.level not in (0, 1, 2, 3):
            raise InvalidInputError(f"amputation level must be in 0..3, got {self.level}")


@dataclass(frozen=True)
class AmputationLabel:
    """Per-limb levels in the order (L_arm, R_arm, L_leg, R_leg)."""

    levels: tuple

    def __post_init__(self):
        levels = tuple(int(v) for v in self.levels)
        if len(levels) != 4 or any(v not in (0, 1, 2, 3) for v in levels):
            raise InvalidInputError(f"label needs 4 levels in 0..3, got {self.levels!r}")
        object.__setattr__(self, "levels", levels)

    @property
    def classes(self):
        return tuple(LimbClass(limb, lvl) for limb, lvl in zip(LIMB_ORDER, self.levels))

    @property
    def binary(self):
        """Binary 4-vector: 1 where the limb is amputated at any level."""
        return np.array([1 if lvl > 0 else 0 for lvl in self.levels], dtype=np.int64)

    @staticmethod
    def intact():
        return AmputationLabel((0, 0, 0, 0))


def limb_class_to_joints(c):
    """Joint indices masked by one limb class: the root joint plus all descendants.

    Level 0 returns the empty set.
    """
    if c.level == 0:
        return set()
    root = _MASK_ROOT[(c.limb, c.level)]
    out = {root}
    # parents[j] < j, so one ascending pass closes the set under descendants.
    for j in range(root + 1, NUM_JOINTS):
        if int(PARENTS[j]) in out:
            out.add(j)
    return out


def label_to_joints(label):
    """Union of masked joints over all four limbs."""
    out = set()
    for c in label.classes:
        out |= limb_class_to_joints(c)
    return out


def index_to_label(idx):
    """Map an amputation index 0..11 to its (limb, level) class."""
    idx = int(idx)
    if not 0 <= idx <= 11:
        raise InvalidInputError(f"amputation index must be in 0..11, got {idx}")
    limb = LIMB_ORDER[idx // 3]
    level = idx % 3 + 1
    return LimbClass(limb, level)


def label_from_index(idx):
    """Single-limb AmputationLabel for an amputation index 0..11."""
    c = index_to_label(idx)
    levels = [0, 0, 0, 0]
    levels[LIMB_ORDER.index(c.limb)] = c.level
    return AmputationLabel(tuple(levels))


def index_from_label(c):
    """Inverse of index_to_label (level 0 has no index)."""
    if c.level == 0:
        raise InvalidInputError("the intact state has no amputation index")
    return 3 * LIMB_ORDER.index(c.limb) + (c.level - 1)


def binary_decision(logits):
    """Collapse one limb head's 4-class logits to a binary amputation bit.

    Returns 0 iff the argmax class is 0 (intact). Ties break toward the
    lowest index, so an intact/amputated tie conservatively reads intact.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape != (4,):
        raise InvalidInputError(f"limb logits must have shape (4,), got {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("limb logits contain non-finite values")
    return 0 if int(np.argmax(logits)) == 0 else 1


def binary_from_logits(logits_4x4):
    """Binary 4-vector from the four limb heads' logits (rows in limb order)."""
    logits_4x4 = np.asarray(logits_4x4, dtype=np.float64)
    if logits_4x4.shape != (4, 4):
        raise InvalidInputError(f"expected (4, 4) logits, got {logits_4x4.shape}")
    return np.array([binary_decision(row) for row in logits_4x4], dtype=np.int64)


def apply_mask(pose, label):
    """Zero the pose rotations of every masked joint; all others unchanged.

    Idempotent: re-zeroing an already zero entry is a no-op.
    """
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (NUM_JOINTS, 3, 3):
        raise InvalidInputError(f"pose must have shape (24, 3, 3), got {pose.shape}")
    out = pose.copy()
    for j in label_to_joints(label):
        out[j] = 0.0
    return out


def mask_bits(label):
    """Boolean (24,) array marking the masked joints of a label."""
    bits = np.zeros(NUM_JOINTS, dtype=bool)
    for j in label_to_joints(label):
        bits[j] = True
    return bits


def pose_is_masked(pose, label):
    """True if exactly the label's subtree entries of pose are zero matrices."""
    masked = label_to_joints(label)
    for j in range(NUM_JOINTS):
        if is_zero_matrix(pose[j]) != (j in masked):
            return False
    return True


def mask_keypoints_2d(kps, label, occluded=()):
    """Zero out 2D keypoints excluded from supervision.

    Amputated-subtree joints and explicitly occluded joints get coordinates
    (0, 0) and confidence 0. Occluded indices are taken as given (no subtree
    expansion); the union with the amputation subtree is what gets masked.
    """
    kps = np.asarray(kps, dtype=np.float64)
    if kps.ndim != 2 or kps.shape[1] != 3:
        raise InvalidInputError(f"keypoints must be (J, 3) rows of x, y, conf, got {kps.shape}")
    if not np.all(np.isfinite(kps)):
        raise InvalidInputError("keypoints contain non-finite values")
    out = kps.copy()
    drop = label_to_joints(label) | {int(j) for j in occluded}
    for j in drop:
        if not 0 <= j < out.shape[0]:
            raise InvalidInputError(f"occluded joint index {j} out of range")
        out[j] = 0.0
    return out


# ---------------------------------------------------------------------------
# Text encoding: "Larm:0,Rarm:0,Lleg:0,Rleg:2"
# ---------------------------------------------------------------------------

def format_label(label):
    return ",".join(f"{k}:{v}" for k, v in zip(_LABEL_KEYS, label.levels))


def parse_label(text):
    parts = text.strip().split(",")
    if len(parts) != 4:
        raise InvalidInputError(f"label text needs 4 comma-separated fields: {text!r}")
    levels = []
    for part, key in zip(parts, _LABEL_KEYS):
        name, sep, value = part.strip().partition(":")
        if not sep or name != key:
            raise InvalidInputError(
                f"label field {part!r} must be {key}:<level> (fields in fixed order)"
            )
        try:
            levels.append(int(value))
        except ValueError:
            raise InvalidInputError(f"label level {value!r} is not an integer") from None
    return AmputationLabel(tuple(levels))
