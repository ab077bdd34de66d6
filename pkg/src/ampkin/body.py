"""Kinematic-tree parametric body model with zero-rotation limb collapse.

The model follows the standard 24-joint skinned-mesh recipe: shape
blendshapes deform a rest template, a fixed regressor produces rest joints,
per-joint rigid transforms propagate down the kinematic tree, and vertices
are deformed by linear blend skinning. A joint whose pose entry is the zero
matrix produces a world transform with a zero rotation block; composition
then zeroes every descendant's rotation as well, so all vertices fully
weighted inside that subtree land exactly on the transform's translation
column. That single point is the limb-collapse location.

The built-in toy template is a deterministic procedural mannequin used for
desk-scale testing in place of licensed body-scan assets.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, SchemaError
from .rotations import is_rotation, is_zero_matrix

NUM_JOINTS = 24
NUM_BETAS = 10

# Parent index per joint, root (pelvis) first. parents[j] < j for all j > 0.
PARENTS = np.array(
    [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21],
    dtype=np.int32,
)

JOINT_NAMES = [
    "Pelvis", "L_Hip", "R_Hip", "Spine1", "L_Knee", "R_Knee", "Spine2",
    "L_Ankle", "R_Ankle", "Spine3", "L_Foot", "R_Foot", "Neck", "L_Collar",
    "R_Collar", "Head", "L_Shoulder", "R_Shoulder", "L_Elbow", "R_Elbow",
    "L_Wrist", "R_Wrist", "L_Hand", "R_Hand",
]

# Scaffold joint positions for the toy mannequin (meters, y up, left = +x).
_TOY_JOINTS = np.array([
    [0.00, 0.95, 0.00],    # Pelvis
    [0.09, 0.90, 0.00],    # L_Hip
    [-0.09, 0.90, 0.00],   # R_Hip
    [0.00, 1.08, 0.00],    # Spine1
    [0.10, 0.50, 0.00],    # L_Knee
    [-0.10, 0.50, 0.00],   # R_Knee
    [0.00, 1.18, 0.00],    # Spine2
    [0.11, 0.10, 0.00],    # L_Ankle
    [-0.11, 0.10, 0.00],   # R_Ankle
    [0.00, 1.28, 0.00],    # Spine3
    [0.12, 0.02, 0.12],    # L_Foot
    [-0.12, 0.02, 0.12],   # R_Foot
    [0.00, 1.45, 0.00],    # Neck
    [0.07, 1.40, 0.00],    # L_Collar
    [-0.07, 1.40, 0.00],   # R_Collar
    [0.00, 1.58, 0.00],    # Head
    [0.17, 1.40, 0.00],    # L_Shoulder
    [-0.17, 1.40, 0.00],   # R_Shoulder
    [0.42, 1.38, 0.00],    # L_Elbow
    [-0.42, 1.38, 0.00],   # R_Elbow
    [0.66, 1.37, 0.00],    # L_Wrist
    [-0.66, 1.37, 0.00],   # R_Wrist
    [0.76, 1.36, 0.00],    # L_Hand
    [-0.76, 1.36, 0.00],   # R_Hand
])

TEMPLATE_MAGIC = b"AMPKIN01"


@dataclass
class BodyTemplate:
    """Immutable rest-state body description.

    Attributes
    ----------
    rest_vertices : (N, 3) float64, meters
    skin_weights : (N, 24) float64, rows non-negative and summing to 1
    shape_dirs : (N, 3, 10) float64, meters per unit shape coefficient
    joint_regressor : (24, N) float64, rows non-negative and summing to 1
    parents : (24,) int32, parent joint indices, -1 at the root
    joint_names : list of 24 strings
    """

    rest_vertices: np.ndarray
    skin_weights: np.ndarray
    shape_dirs: np.ndarray
    joint_regressor: np.ndarray
    parents: np.ndarray
    joint_names: list = field(default_factory=lambda: list(JOINT_NAMES))

    @property
    def n_vertices(self):
        return self.rest_vertices.shape[0]

    @property
    def faces(self):
        """Trivial triangulation: consecutive vertex triples."""
        n = self.n_vertices // 3
        return np.arange(3 * n, dtype=np.int64).reshape(n, 3)

    def children(self, j):
        return [int(c) for c in np.where(self.parents == j)[0]]


@dataclass
class MeshResult:
    """Output of a forward pass.

    ``joints_posed`` is regressed from the skinned vertices, so collapsed
    limbs pull their child joints toward the collapse point.
    ``joint_transforms`` holds the 24 world transforms from the kinematic
    chain; zero-rotation entries are degenerate by design and their
    translation column is the collapse point of the subtree.
    """

    vertices: np.ndarray        # (N, 3)
    joints_posed: np.ndarray    # (24, 3)
    joint_transforms: np.ndarray  # (24, 4, 4)


def validate_pose(pose):
    """Check that pose is (24, 3, 3) with each entry a rotation or the zero sentinel."""
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (NUM_JOINTS, 3, 3):
        raise InvalidInputError(f"pose must have shape (24, 3, 3), got {pose.shape}")
    for j in range(NUM_JOINTS):
        if not (is_zero_matrix(pose[j]) or is_rotation(pose[j])):
            raise InvalidInputError(
                f"pose entry {j} is neither a valid rotation nor the zero sentinel"
            )
    return pose


def identity_pose():
    return np.broadcast_to(np.eye(3), (NUM_JOINTS, 3, 3)).copy()


def shape_vertices(tmpl, betas):
    """Apply shape blendshapes: rest vertices plus the beta-weighted offsets."""
    betas = np.asarray(betas, dtype=np.float64)
    if betas.shape != (NUM_BETAS,):
        raise InvalidInputError(f"betas must have shape (10,), got {betas.shape}")
    if not np.all(np.isfinite(betas)):
        raise InvalidInputError("betas contain non-finite values")
    return tmpl.rest_vertices + np.einsum("vck,k->vc", tmpl.shape_dirs, betas)


def regress_joints(tmpl, vertices):
    """Regress 24 joint locations from mesh vertices."""
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.shape != (tmpl.n_vertices, 3):
        raise InvalidInputError(
            f"vertices must have shape ({tmpl.n_vertices}, 3), got {vertices.shape}"
        )
    return tmpl.joint_regressor @ vertices


def rest_joints(tmpl, betas=None):
    """Rest joint locations for the given (or zero) shape."""
    if betas is None:
        betas = np.zeros(NUM_BETAS)
    return regress_joints(tmpl, shape_vertices(tmpl, betas))


def forward(tmpl, pose, betas=None, trans=None):
    """Full forward pass: blendshapes, kinematic chain, linear blend skinning.

    Parameters
    ----------
    tmpl : BodyTemplate
    pose : (24, 3, 3) array
        Joint-local rotations; entry 0 is the global orientation. Entries may
        be the zero sentinel, which collapses everything skinned to that
        joint's subtree onto one point.
    betas : (10,) array, optional
        Shape coefficients (default zero).
    trans : (3,) array, optional
        Root translation added to all outputs (default zero).

    Returns
    -------
    MeshResult
    """
    pose = validate_pose(pose)
    if betas is None:
        betas = np.zeros(NUM_BETAS)
    if trans is None:
        trans = np.zeros(3)
    trans = np.asarray(trans, dtype=np.float64)

    v_shaped = shape_vertices(tmpl, betas)
    j_rest = tmpl.joint_regressor @ v_shaped

    # Local rigid transforms: rotation from the pose, translation from the
    # rest offset to the parent (absolute position at the root).
    rel = j_rest.copy()
    rel[1:] -= j_rest[tmpl.parents[1:]]
    local = np.zeros((NUM_JOINTS, 4, 4))
    local[:, :3, :3] = pose
    local[:, :3, 3] = rel
    local[:, 3, 3] = 1.0

    world = np.zeros_like(local)
    world[0] = local[0]
    for j in range(1, NUM_JOINTS):
        world[j] = world[tmpl.parents[j]] @ local[j]

    # Skinning transforms map rest-space points directly; subtracting the
    # rotated rest joint keeps each joint a fixed point of its own transform.
    skin_tf = world.copy()
    skin_tf[:, :3, 3] -= np.einsum("jab,jb->ja", world[:, :3, :3], j_rest)

    per_vertex = np.einsum("vj,jab->vab", tmpl.skin_weights, skin_tf)
    vertices = (
        np.einsum("vab,vb->va", per_vertex[:, :3, :3], v_shaped)
        + per_vertex[:, :3, 3]
        + trans
    )

    world_out = world.copy()
    world_out[:, :3, 3] += trans
    return MeshResult(
        vertices=vertices,
        joints_posed=regress_joints(tmpl, vertices),
        joint_transforms=world_out,
    )


# ---------------------------------------------------------------------------
# Toy template construction
# ---------------------------------------------------------------------------

_FALLOFF_RHO = 0.05      # Gaussian falloff length for skin weights (m)
_FALLOFF_CUTOFF = 0.12   # hard support cutoff so distal weights are exactly 0 (m)
_CAPSULE_RADIUS = 0.03   # radial offset of sampled vertices from the bone axis (m)


def _segment_distances(points, a, b):
    """Distance from each point to segment [a, b]."""
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-18:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def _joint_region_distances(points, joints, parents):
    """(N, 24) distance from each point to each joint's influence region.

    A joint's region is the union of the bone segments to its children; leaf
    joints use their own position.
    """
    n = points.shape[0]
    dists = np.full((n, NUM_JOINTS), np.inf)
    for j in range(NUM_JOINTS):
        kids = np.where(parents == j)[0]
        if kids.size == 0:
            dists[:, j] = np.linalg.norm(points - joints[j], axis=1)
        else:
            for c in kids:
                dists[:, j] = np.minimum(
                    dists[:, j], _segment_distances(points, joints[j], joints[c])
                )
    return dists


def make_toy_template(n_vertices=512, seed=0):
    """Build a deterministic procedural mannequin template.

    Vertices are sampled along bone capsules; skin weights use a smooth
    nearest-bone falloff with a hard support cutoff (so weights far from a
    bone are exactly zero and full-subtree support exists); the joint
    regressor averages the k nearest vertices of each scaffold joint; shape
    directions are small smooth sinusoidal fields.

    Same (n_vertices, seed) always produces a bit-identical template.
    """
    if n_vertices < NUM_JOINTS:
        raise InvalidInputError(f"n_vertices must be >= {NUM_JOINTS}, got {n_vertices}")
    rng = np.random.default_rng(seed)
    joints = _TOY_JOINTS

    bones = [(int(PARENTS[j]), j) for j in range(1, NUM_JOINTS)]
    lengths = np.array([np.linalg.norm(joints[c] - joints[p]) for p, c in bones])
    counts = np.maximum(1, np.floor(lengths / lengths.sum() * n_vertices).astype(int))
    while counts.sum() > n_vertices:
        counts[np.argmax(counts)] -= 1
    i = 0
    while counts.sum() < n_vertices:
        counts[i % len(bones)] += 1
        i += 1

    verts = np.zeros((n_vertices, 3))
    k = 0
    for (p, c), m in zip(bones, counts):
        a, b = joints[p], joints[c]
        axis = b - a
        axis = axis / np.linalg.norm(axis)
        # Any fixed vector not parallel to the bone gives a radial frame.
        ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        u = np.cross(axis, ref)
        u /= np.linalg.norm(u)
        w = np.cross(axis, u)
        for s in range(m):
            t = (s + 0.5) / m
            phi = rng.uniform(0.0, 2.0 * np.pi)
            verts[k] = a + t * (b - a) + _CAPSULE_RADIUS * (np.cos(phi) * u + np.sin(phi) * w)
            k += 1

    dists = _joint_region_distances(verts, joints, PARENTS)
    weights = np.exp(-((dists / _FALLOFF_RHO) ** 2))
    weights[dists > _FALLOFF_CUTOFF] = 0.0
    row_sums = weights.sum(axis=1)
    # Every vertex sits on a bone, so its own joint distance is ~the capsule
    # radius and the row sum cannot vanish.
    weights /= row_sums[:, None]

    k_near = max(1, min(8, n_vertices // NUM_JOINTS))
    regressor = np.zeros((NUM_JOINTS, n_vertices))
    for j in range(NUM_JOINTS):
        order = np.argsort(np.linalg.norm(verts - joints[j], axis=1), kind="stable")
        regressor[j, order[:k_near]] = 1.0 / k_near

    shape_dirs = np.zeros((n_vertices, 3, NUM_BETAS))
    for q in range(NUM_BETAS):
        freq = rng.normal(0.0, 2.0, size=3)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        amp = 0.01
        fieldvals = amp * np.sin(verts @ freq + phase)
        shape_dirs[:, :, q] = fieldvals[:, None] * direction[None, :]

    tmpl = BodyTemplate(
        rest_vertices=verts,
        skin_weights=weights,
        shape_dirs=shape_dirs,
        joint_regressor=regressor,
        parents=PARENTS.copy(),
        joint_names=list(JOINT_NAMES),
    )
    validate_template(tmpl)
    return tmpl


# ---------------------------------------------------------------------------
# Validation and binary I/O
# ---------------------------------------------------------------------------

def validate_template(tmpl):
    """Raise SchemaError naming the first violated template invariant."""
    n = tmpl.rest_vertices.shape[0]
    if tmpl.rest_vertices.shape != (n, 3):
        raise SchemaError("rest_vertices must be (N, 3)")
    if tmpl.skin_weights.shape != (n, NUM_JOINTS):
        raise SchemaError("skin_weights must be (N, 24)")
    if tmpl.shape_dirs.shape != (n, 3, NUM_BETAS):
        raise SchemaError("shape_dirs must be (N, 3, 10)")
    if tmpl.joint_regressor.shape != (NUM_JOINTS, n):
        raise SchemaError("joint_regressor must be (24, N)")
    if tmpl.parents.shape != (NUM_JOINTS,):
        raise SchemaError("parents must have length 24")
    if len(tmpl.joint_names) != NUM_JOINTS:
        raise SchemaError("joint_names must have length 24")

    for arr, name in [
        (tmpl.rest_vertices, "rest_vertices"),
        (tmpl.skin_weights, "skin_weights"),
        (tmpl.shape_dirs, "shape_dirs"),
        (tmpl.joint_regressor, "joint_regressor"),
    ]:
        if not np.all(np.isfinite(arr)):
            raise SchemaError(f"{name} contains non-finite values")

    if np.any(tmpl.skin_weights < 0):
        raise SchemaError("skin_weights has negative entries")
    bad = np.where(np.abs(tmpl.skin_weights.sum(axis=1) - 1.0) > 1e-9)[0]
    if bad.size:
        raise SchemaError(f"skin_weights rows do not sum to 1 (first bad row {bad[0]})")

    if np.any(tmpl.joint_regressor < 0):
        raise SchemaError("joint_regressor has negative entries")
    bad = np.where(np.abs(tmpl.joint_regressor.sum(axis=1) - 1.0) > 1e-9)[0]
    if bad.size:
        raise SchemaError(f"joint_regressor rows do not sum to 1 (first bad row {bad[0]})")

    if tmpl.parents[0] != -1:
        raise SchemaError("parents[0] must be -1 (pelvis root)")
    for j in range(1, NUM_JOINTS):
        p = int(tmpl.parents[j])
        if not (0 <= p < j):
            raise SchemaError(f"parents[{j}]={p} breaks the tree ordering parents[j] < j")


def save_template(tmpl, path):
    """Write the template in the AMPKIN01 binary format (little-endian f64)."""
    validate_template(tmpl)
    n = tmpl.n_vertices
    with open(path, "wb") as fh:
        fh.write(TEMPLATE_MAGIC)
        fh.write(struct.pack("<III", n, NUM_JOINTS, NUM_BETAS))
        for arr in (tmpl.rest_vertices, tmpl.skin_weights, tmpl.shape_dirs, tmpl.joint_regressor):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(tmpl.parents, dtype="<i4").tobytes())
        for name in tmpl.joint_names:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)


def load_template(path):
    """Read an AMPKIN01 template file and validate all invariants."""
    with open(path, "rb") as fh:
        data = fh.read()

    if len(data) < len(TEMPLATE_MAGIC) + 12 or data[: len(TEMPLATE_MAGIC)] != TEMPLATE_MAGIC:
        raise SchemaError("not an AMPKIN01 template file (bad magic)")
    off = len(TEMPLATE_MAGIC)
    n, j, kb = struct.unpack_from("<III", data, off)
    off += 12
    if j != NUM_JOINTS or kb != NUM_BETAS:
        raise SchemaError(f"unsupported template header: J={j}, K_beta={kb}")

    def take(count, dtype):
        nonlocal off
        nbytes = count * np.dtype(dtype).itemsize
        if off + nbytes > len(data):
            raise SchemaError("template file truncated")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=off).copy()
        off += nbytes
        return arr

    rest = take(n * 3, "<f8").reshape(n, 3)
    weights = take(n * NUM_JOINTS, "<f8").reshape(n, NUM_JOINTS)
    sdirs = take(n * 3 * NUM_BETAS, "<f8").reshape(n, 3, NUM_BETAS)
    reg = take(NUM_JOINTS * n, "<f8").reshape(NUM_JOINTS, n)
    parents = take(NUM_JOINTS, "<i4")

    names = []
    for _ in range(NUM_JOINTS):
        if off + 4 > len(data):
            raise SchemaError("template file truncated in joint names")
        (length,) = struct.unpack_from("<I", data, off)
        off += 4
        if off + length > len(data):
            raise SchemaError("template file truncated in joint names")
        names.append(data[off : off + length].decode("utf-8"))
        off += length

    tmpl = BodyTemplate(
        rest_vertices=rest,
        skin_weights=weights,
        shape_dirs=sdirs,
        joint_regressor=reg,
        parents=parents,
        joint_names=names,
    )
    validate_template(tmpl)
    return tmpl


def export_obj(vertices, faces, path):
    """Write a Wavefront OBJ file with deterministic ordering and formatting."""
    vertices = np.asarray(vertices, dtype=np.float64)
    lines = []
    for v in vertices:
        lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    for f in np.asarray(faces, dtype=np.int64):
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
