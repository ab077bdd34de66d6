"""Rotation representation conversions: axis-angle, 3x3 matrix, continuous 6D.

All functions are batch-vectorized over leading dimensions. Rotation matrices
are either proper rotations (orthonormal, det +1) or the exact zero matrix,
which is used downstream as an in-band mask sentinel for absent joints. The
zero matrix is a legal *value* of the matrix representation but is rejected by
the 6D encoder, since a degenerate rotation has no continuous encoding.

The 6D representation (first two matrix columns, decoded by Gram-Schmidt) is
stored as a flat 6-vector ``[a | b]`` with ``a`` the first column.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateRotationError, InvalidInputError

# Tolerance below which a 6D decode input counts as degenerate.
DEGENERACY_EPS = 1e-8

# Tolerance used to classify a matrix as a valid rotation / exact zero.
ROTATION_ATOL = 1e-6


def axis_angle_to_matrix(v):
    """Convert axis-angle vectors to rotation matrices (Rodrigues' formula).

    Parameters
    ----------
    v : array_like, shape (..., 3)
        Rotation axis scaled by the rotation angle in radians. The zero
        vector maps to the identity.

    Returns
    -------
    R : ndarray, shape (..., 3, 3)
        Proper rotation matrices (orthonormal, det +1).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 3:
        raise InvalidInputError(f"axis-angle must have last dimension 3, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("axis-angle input contains non-finite values")

    vv = v.reshape(-1, 3)

    angle = np.linalg.norm(vv, axis=-1)
    safe = angle > 1e-12
    axis = np.zeros_like(vv)
    axis[safe] = vv[safe] / angle[safe, None]

    K = np.zeros((vv.shape[0], 3, 3))
    K[:, 0, 1] = -axis[:, 2]
    K[:, 0, 2] = axis[:, 1]
    K[:, 1, 0] = axis[:, 2]
    K[:, 1, 2] = -axis[:, 0]
    K[:, 2, 0] = -axis[:, 1]
    K[:, 2, 1] = axis[:, 0]

    sin_a = np.sin(angle)[:, None, None]
    cos_a = np.cos(angle)[:, None, None]
    R = np.eye(3)[None] + sin_a * K + (1.0 - cos_a) * (K @ K)
    return R.reshape(v.shape[:-1] + (3, 3))


def matrix_to_axis_angle(R):
    """Convert rotation matrices to canonical axis-angle vectors.

    The returned angle is in [0, pi]; the sign is folded into the axis so the
    representation is unique (up to the unavoidable axis ambiguity at exactly
    pi, which is resolved by making the first nonzero axis component positive).

    Parameters
    ----------
    R : array_like, shape (..., 3, 3)
        Proper rotation matrices. The zero sentinel is rejected.

    Returns
    -------
    aa : ndarray, shape (..., 3)
    """
    R = np.asarray(R, dtype=np.float64)
    Rf = R.reshape(-1, 3, 3)
    for i in range(Rf.shape[0]):
        if not is_rotation(Rf[i]):
            raise DegenerateRotationError(
                "matrix_to_axis_angle requires a valid rotation (zero sentinel rejected)"
            )

    trace = Rf[:, 0, 0] + Rf[:, 1, 1] + Rf[:, 2, 2]
    angle = np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0))  # in [0, pi]
    aa = np.zeros((Rf.shape[0], 3))

    sin_angle = np.sin(angle)
    general = sin_angle > 1e-7
    if np.any(general):
        r = np.stack(
            [
                Rf[:, 2, 1] - Rf[:, 1, 2],
                Rf[:, 0, 2] - Rf[:, 2, 0],
                Rf[:, 1, 0] - Rf[:, 0, 1],
            ],
            axis=-1,
        )
        idx = np.where(general)[0]
        aa[idx] = r[idx] / (2.0 * sin_angle[idx, None]) * angle[idx, None]

    near_pi = (~general) & (angle > 1e-7)
    for i in np.where(near_pi)[0]:
        # R ~ 2 n n^T - I, so the largest column of (R + I)/2 is parallel to n.
        M = (Rf[i] + np.eye(3)) / 2.0
        col = M[:, np.argmax(np.sum(M**2, axis=0))]
        axis = col / np.linalg.norm(col)
        nz = np.nonzero(np.abs(axis) > 1e-12)[0]
        if nz.size and axis[nz[0]] < 0:
            axis = -axis
        aa[i] = axis * angle[i]

    return aa.reshape(R.shape[:-2] + (3,))


def matrix_to_6d(R):
    """Extract the continuous 6D representation (first two columns) of R.

    Parameters
    ----------
    R : array_like, shape (..., 3, 3)
        Proper rotation matrices. The zero sentinel raises
        :class:`DegenerateRotationError` because it has no stable 6D encoding.

    Returns
    -------
    x : ndarray, shape (..., 6)
        ``[col0 | col1]`` of each matrix.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise InvalidInputError(f"expected (..., 3, 3) matrix, got {R.shape}")
    flat = R.reshape(-1, 3, 3)
    for i in range(flat.shape[0]):
        if is_zero_matrix(flat[i]):
            raise DegenerateRotationError("zero-matrix sentinel has no 6D representation")
        if not is_rotation(flat[i]):
            raise DegenerateRotationError("matrix_to_6d requires a valid rotation matrix")
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def rot6d_to_matrix(x):
    """Decode a 6D rotation representation via Gram-Schmidt.

    Parameters
    ----------
    x : array_like, shape (..., 6)
        ``[a | b]``; ``a`` normalizes to the first column, ``b`` is
        orthogonalized against it, and the third column is their cross
        product. Invariant under positive scaling of ``a`` and under adding
        multiples of ``a`` to ``b``.

    Returns
    -------
    R : ndarray, shape (..., 3, 3)
        Proper rotation matrices.

    Raises
    ------
    DegenerateRotationError
        If ``a`` is near zero or ``a`` and ``b`` are near parallel
        (residual norm below ``DEGENERACY_EPS``).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 6:
        raise InvalidInputError(f"6D input must have last dimension 6, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("6D input contains non-finite values")

    xf = x.reshape(-1, 6)
    a = xf[:, :3]
    b = xf[:, 3:]

    na = np.linalg.norm(a, axis=-1)
    if np.any(na <= DEGENERACY_EPS):
        raise DegenerateRotationError("6D decode: first column has near-zero norm")
    b1 = a / na[:, None]
    resid = b - np.sum(b1 * b, axis=-1, keepdims=True) * b1
    nr = np.linalg.norm(resid, axis=-1)
    if np.any(nr <= DEGENERACY_EPS):
        raise DegenerateRotationError("6D decode: columns are near parallel")
    b2 = resid / nr[:, None]
    b3 = np.cross(b1, b2)

    R = np.stack([b1, b2, b3], axis=-1)
    return R.reshape(x.shape[:-1] + (3, 3))


def is_rotation(R, atol=ROTATION_ATOL):
    """True if R is orthonormal with determinant +1 (within atol)."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    if not np.allclose(R.T @ R, np.eye(3), atol=atol):
        return False
    return bool(abs(np.linalg.det(R) - 1.0) <= atol)


def is_zero_matrix(R):
    """True if R is exactly the zero matrix (the amputation mask sentinel)."""
    R = np.asarray(R)
    return R.shape == (3, 3) and bool(np.all(R == 0.0))


def validate_rotation_or_zero(R):
    """Raise InvalidInputError unless R is a valid rotation or the exact zero matrix."""
    if not (is_zero_matrix(R) or is_rotation(R)):
        raise InvalidInputError(
            "matrix is neither a valid rotation (orthonormal, det +1) nor the zero sentinel"
        )
