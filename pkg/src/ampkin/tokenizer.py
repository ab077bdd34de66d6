"""Dual-codebook pose tokenizer machinery.

A codebook is an M x d matrix of latent code vectors with EMA bookkeeping
(usage counts and accumulated latent sums) used for the moving-average code
update and dead-code reset. Two codebooks coexist: one trained on mixed
amputee/non-amputee poses ("amp") and one on non-amputee poses only
("non_amp"). Decoding switches between them on the predicted binary
amputation vector: any set bit selects the amp codebook.

Quantization, soft decoding, switching, and the loss are pure functions;
``ema_update`` and ``reset_dead_codes`` return updated copies and assume a
single writer per codebook value.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, InvalidInputError, SchemaError
from .rotations import matrix_to_6d

CODEBOOK_MAGIC = b"AMPCB01"
KIND_AMP = "amp"
KIND_NON_AMP = "non_amp"
_KIND_BYTE = {KIND_NON_AMP: 0, KIND_AMP: 1}
_BYTE_KIND = {v: k for k, v in _KIND_BYTE.items()}

# Usage below this never divides a code update.
USAGE_EPS = 1e-9


@dataclass(frozen=True)
class Codebook:
    """M x d code matrix plus EMA usage/sum state and its training-domain kind."""

    codes: np.ndarray     # (M, d)
    usage: np.ndarray     # (M,)
    ema_sum: np.ndarray   # (M, d)
    kind: str

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.float64)
        usage = np.asarray(self.usage, dtype=np.float64)
        ema_sum = np.asarray(self.ema_sum, dtype=np.float64)
        if codes.ndim != 2 or codes.shape[0] < 1 or codes.shape[1] < 1:
            raise InvalidInputError(f"codes must be (M>=1, d>=1), got {codes.shape}")
        if usage.shape != (codes.shape[0],):
            raise InvalidInputError("usage must have one entry per code")
        if ema_sum.shape != codes.shape:
            raise InvalidInputError("ema_sum must match codes shape")
        for arr, name in ((codes, "codes"), (usage, "usage"), (ema_sum, "ema_sum")):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} contains non-finite values")
        if np.any(usage < 0):
            raise InvalidInputError("usage counts must be non-negative")
        if self.kind not in _KIND_BYTE:
            raise ConfigurationError(f"codebook kind must be 'amp' or 'non_amp', got {self.kind!r}")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "usage", usage)
        object.__setattr__(self, "ema_sum", ema_sum)

    @property
    def size(self):
        return self.codes.shape[0]

    @property
    def dim(self):
        return self.codes.shape[1]

    @staticmethod
    def random(size, dim, kind, seed=0, scale=1.0):
        """Fresh codebook with Gaussian codes and unit pseudo-usage."""
        rng = np.random.default_rng(seed)
        codes = rng.normal(0.0, scale, size=(size, dim))
        return Codebook(codes=codes, usage=np.ones(size), ema_sum=codes.copy(), kind=kind)


def quantize(z, cb):
    """Assign each latent row to its nearest code by Euclidean distance.

    Ties break toward the lowest code index.

    Returns
    -------
    indices : (S,) int64
    z_tilde : (S, d) selected code rows
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != cb.dim:
        raise InvalidInputError(f"latents must be (S, {cb.dim}), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("latents contain non-finite values")

    indices = np.empty(z.shape[0], dtype=np.int64)
    chunk = 256  # bound the (chunk, M, d) difference tensor
    for start in range(0, z.shape[0], chunk):
        block = z[start : start + chunk]
        d = np.linalg.norm(block[:, None, :] - cb.codes[None, :, :], axis=2)
        indices[start : start + block.shape[0]] = np.argmin(d, axis=1)
    return indices, cb.codes[indices]


def soft_decode(logits, cb):
    """Decode token logits to latents: row-wise softmax times the code matrix."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] != cb.size:
        raise InvalidInputError(f"logits must be (S, {cb.size}), got {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("logits contain non-finite values")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    return probs @ cb.codes


def switch_and_decode(logits, y_hat, cb_amp, cb_non):
    """Soft-decode against the codebook selected by the binary amputation vector.

    Any set bit selects the amp codebook; the all-zero vector selects the
    non-amputee codebook. Returns (latents, kind used).
    """
    if cb_amp.kind != KIND_AMP or cb_non.kind != KIND_NON_AMP:
        raise ConfigurationError(
            f"codebook kinds are swapped or wrong: got ({cb_amp.kind!r}, {cb_non.kind!r})"
        )
    y_hat = np.asarray(y_hat)
    if y_hat.shape != (4,) or not np.all(np.isin(y_hat, (0, 1))):
        raise InvalidInputError(f"y_hat must be a binary 4-vector, got {y_hat!r}")
    cb = cb_amp if int(y_hat.sum()) > 0 else cb_non
    return soft_decode(logits, cb), cb.kind


@dataclass(frozen=True)
class TokenizerLossWeights:
    mix: float = 100.0
    codebook: float = 1.0
    commitment: float = 1.0


@dataclass(frozen=True)
class MeshTargets:
    """Reconstruction targets: vertices (N,3), 3D joints (24,3), pose (24,3,3)."""

    vertices: np.ndarray
    joints3d: np.ndarray
    pose: np.ndarray


def _mix_loss(recon, gt):
    """Mean squared error over vertices, joints, and the pose in 6D form."""
    terms = [
        np.mean((np.asarray(recon.vertices) - np.asarray(gt.vertices)) ** 2),
        np.mean((np.asarray(recon.joints3d) - np.asarray(gt.joints3d)) ** 2),
        np.mean((matrix_to_6d(recon.pose) - matrix_to_6d(gt.pose)) ** 2),
    ]
    return float(sum(terms))


def tokenizer_loss(z, z_tilde, recon=None, gt=None, weights=None, reduction="sum"):
    """Total tokenizer training loss and its components.

    The codebook and commitment terms are both the quadratic residual between
    the latents and their quantized selections; at training time they differ
    only by where the gradient is stopped, so numerically they are the same
    quantity reported twice. The default reduction is sum-of-squares;
    ``reduction="mean"`` selects the mean convention instead.

    Returns
    -------
    total : float
    components : dict with keys "mix", "codebook", "commitment"
    """
    if weights is None:
        weights = TokenizerLossWeights()
    if reduction not in ("sum", "mean"):
        raise ConfigurationError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
    z = np.asarray(z, dtype=np.float64)
    z_tilde = np.asarray(z_tilde, dtype=np.float64)
    if z.shape != z_tilde.shape:
        raise InvalidInputError(f"latent shapes differ: {z.shape} vs {z_tilde.shape}")

    sq = (z - z_tilde) ** 2
    quad = float(sq.sum()) if reduction == "sum" else float(sq.mean())

    if (recon is None) != (gt is None):
        raise InvalidInputError("recon and gt must be given together")
    mix = _mix_loss(recon, gt) if recon is not None else 0.0

    components = {"mix": mix, "codebook": quad, "commitment": quad}
    total = (
        weights.mix * components["mix"]
        + weights.codebook * components["codebook"]
        + weights.commitment * components["commitment"]
    )
    return total, components


def ema_update(cb, z, indices, gamma=0.99):
    """Exponential-moving-average code update.

    usage <- gamma * usage + (1 - gamma) * assignment_count
    ema_sum <- gamma * ema_sum + (1 - gamma) * sum of assigned latents
    codes <- ema_sum / usage wherever usage exceeds USAGE_EPS

    Codes whose usage stays at or below the guard are left unchanged.
    """
    if not 0.0 <= gamma < 1.0:
        raise InvalidInputError(f"gamma must be in [0, 1), got {gamma}")
    z = np.asarray(z, dtype=np.float64)
    indices = np.asarray(indices, dtype=np.int64)
    if z.ndim != 2 or z.shape[1] != cb.dim:
        raise InvalidInputError(f"latents must be (S, {cb.dim}), got {z.shape}")
    if indices.shape != (z.shape[0],):
        raise InvalidInputError("indices must have one entry per latent row")
    if np.any(indices < 0) or np.any(indices >= cb.size):
        raise InvalidInputError("code index out of range")

    counts = np.bincount(indices, minlength=cb.size).astype(np.float64)
    sums = np.zeros_like(cb.ema_sum)
    np.add.at(sums, indices, z)

    usage = gamma * cb.usage + (1.0 - gamma) * counts
    ema_sum = gamma * cb.ema_sum + (1.0 - gamma) * sums
    codes = cb.codes.copy()
    # A code with no assignments keeps its value bit-for-bit: decaying usage
    # and ema_sum by the same factor leaves their ratio untouched.
    live = (usage > USAGE_EPS) & (counts > 0)
    codes[live] = ema_sum[live] / usage[live, None]
    return replace(cb, codes=codes, usage=usage, ema_sum=ema_sum)


def reset_dead_codes(cb, z, threshold, seed=0):
    """Replace codes whose usage fell below the threshold with sampled latents.

    Replacement rows are drawn from z with a seeded generator, so the same
    seed always picks the same rows. Replaced codes restart with usage 1.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != cb.dim or z.shape[0] < 1:
        raise InvalidInputError(f"latents must be (S>=1, {cb.dim}), got {z.shape}")

    dead = np.where(cb.usage < threshold)[0]
    if dead.size == 0:
        return replace(cb, codes=cb.codes.copy(), usage=cb.usage.copy(), ema_sum=cb.ema_sum.copy())

    rng = np.random.default_rng(seed)
    picks = rng.integers(0, z.shape[0], size=dead.size)
    codes = cb.codes.copy()
    usage = cb.usage.copy()
    ema_sum = cb.ema_sum.copy()
    codes[dead] = z[picks]
    usage[dead] = 1.0
    ema_sum[dead] = z[picks]
    return replace(cb, codes=codes, usage=usage, ema_sum=ema_sum)


# ---------------------------------------------------------------------------
# Binary I/O
# ---------------------------------------------------------------------------

def save_codebook(cb, path):
    """Write the codebook in the AMPCB01 binary format."""
    with open(path, "wb") as fh:
        fh.write(CODEBOOK_MAGIC)
        fh.write(struct.pack("<IIB", cb.size, cb.dim, _KIND_BYTE[cb.kind]))
        fh.write(np.ascontiguousarray(cb.codes, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(cb.ema_sum, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(cb.usage, dtype="<f8").tobytes())


def load_codebook(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(CODEBOOK_MAGIC) + 9 or data[: len(CODEBOOK_MAGIC)] != CODEBOOK_MAGIC:
        raise SchemaError("not an AMPCB01 codebook file (bad magic)")
    off = len(CODEBOOK_MAGIC)
    m, d, kind_byte = struct.unpack_from("<IIB", data, off)
    off += 9
    if kind_byte not in _BYTE_KIND:
        raise SchemaError(f"unknown codebook kind byte {kind_byte}")

    expected = off + (2 * m * d + m) * 8
    if len(data) < expected:
        raise SchemaError("codebook file truncated")

    def take(count):
        nonlocal off
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).copy()
        off += count * 8
        return arr

    codes = take(m * d).reshape(m, d)
    ema_sum = take(m * d).reshape(m, d)
    usage = take(m)
    return Codebook(codes=codes, usage=usage, ema_sum=ema_sum, kind=_BYTE_KIND[kind_byte])
