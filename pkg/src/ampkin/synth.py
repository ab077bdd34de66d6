"""Geometric pieces of the synthesis pipeline.

Weak-perspective projection maps camera-space points to pixels, Gaussian
heatmaps rasterize keypoints for the classifier input, seeded noise
injection supports the keypoint-robustness ablation, a uniform-window SSIM
implements the background quality gate, and a z-buffered triangle splat
composites a projected mesh over a background image.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, SchemaError

HEATMAP_MAGIC = b"AMPHM01"

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


@dataclass(frozen=True)
class WeakPerspectiveCamera:
    """Scale plus normalized-plane translation; depth is ignored."""

    scale: float
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise InvalidInputError(f"camera scale must be positive, got {self.scale}")
        if not (np.isfinite(self.tx) and np.isfinite(self.ty)):
            raise InvalidInputError("camera translation must be finite")


def project_weak_perspective(points, cam, image_size):
    """Project (K, 3) points to (K, 2) pixel coordinates.

    Normalized coordinates u = s (X + tx), v = s (Y + ty) map to pixels as
    (u + 1) / 2 * W and (v + 1) / 2 * H.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise InvalidInputError(f"points must be (K, 3), got {points.shape}")
    w, h = int(image_size[0]), int(image_size[1])
    u = cam.scale * (points[:, 0] + cam.tx)
    v = cam.scale * (points[:, 1] + cam.ty)
    return np.stack([(u + 1.0) / 2.0 * w, (v + 1.0) / 2.0 * h], axis=1)


@dataclass(frozen=True)
class HeatmapStack:
    """H x W x J keypoint heatmaps in [0, 1] with the rasterization sigma."""

    maps: np.ndarray
    sigma: float


def rasterize_heatmaps(kps, image_size, sigma=2.0):
    """Rasterize (J, 3) keypoints (x, y, conf) to unit-peak Gaussian channels.

    Channels of keypoints with zero confidence are exactly all-zero, matching
    the 2D exclusion rule.
    """
    kps = np.asarray(kps, dtype=np.float64)
    if kps.ndim != 2 or kps.shape[1] != 3:
        raise InvalidInputError(f"keypoints must be (J, 3), got {kps.shape}")
    if not (np.isfinite(sigma) and sigma > 0):
        raise InvalidInputError(f"sigma must be positive, got {sigma}")
    w, h = int(image_size[0]), int(image_size[1])
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    maps = np.zeros((h, w, kps.shape[0]))
    for j, (x, y, conf) in enumerate(kps):
        if conf <= 0:
            continue
        gx = np.exp(-((xs - x) ** 2) / (2.0 * sigma**2))
        gy = np.exp(-((ys - y) ** 2) / (2.0 * sigma**2))
        maps[:, :, j] = gy[:, None] * gx[None, :]
    return HeatmapStack(maps=maps, sigma=float(sigma))


def inject_keypoint_noise(kps, ratio, sigma_px, seed, model="subset"):
    """Perturb visible keypoints with seeded isotropic Gaussian pixel noise.

    ``model="subset"`` perturbs exactly floor(ratio * #visible) keypoints with
    std ``sigma_px``; ``model="scale"`` perturbs every visible keypoint with
    std ``ratio * sigma_px``. Zero-confidence keypoints are never touched.
    """
    kps = np.asarray(kps, dtype=np.float64)
    if kps.ndim != 2 or kps.shape[1] != 3:
        raise InvalidInputError(f"keypoints must be (J, 3), got {kps.shape}")
    if not 0.0 <= ratio <= 1.0:
        raise InvalidInputError(f"ratio must be in [0, 1], got {ratio}")
    if sigma_px < 0:
        raise InvalidInputError(f"sigma_px must be >= 0, got {sigma_px}")
    if model not in ("subset", "scale"):
        raise InvalidInputError(f"noise model must be 'subset' or 'scale', got {model!r}")

    out = kps.copy()
    visible = np.where(kps[:, 2] > 0)[0]
    if visible.size == 0:
        return out
    rng = np.random.default_rng(seed)
    if model == "subset":
        n = int(np.floor(ratio * visible.size))
        if n == 0:
            return out
        chosen = rng.choice(visible, size=n, replace=False)
        out[chosen, :2] += rng.normal(0.0, sigma_px, size=(n, 2))
    else:
        out[visible, :2] += rng.normal(0.0, ratio * sigma_px, size=(visible.size, 2))
    return out


def _box_sums(img, window):
    """Sums over all fully-interior window x window patches via integral images."""
    padded = np.zeros((img.shape[0] + 1, img.shape[1] + 1))
    padded[1:, 1:] = np.cumsum(np.cumsum(img, axis=0), axis=1)
    w = window
    return (
        padded[w:, w:] - padded[:-w, w:] - padded[w:, :-w] + padded[:-w, :-w]
    )


def ssim(a, b, window=7):
    """Mean structural similarity with a uniform window on [0, 1] images.

    Local statistics use population normalization over each fully-interior
    window; the standard stabilizers C1 = 0.01^2 and C2 = 0.03^2 apply for
    the unit dynamic range.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise InvalidInputError(f"images must share a 2-D shape, got {a.shape} vs {b.shape}")
    if window % 2 == 0 or window < 3:
        raise InvalidInputError(f"window must be odd and >= 3, got {window}")
    if a.shape[0] < window or a.shape[1] < window:
        raise InvalidInputError("image smaller than the SSIM window")

    n = float(window * window)
    mu_a = _box_sums(a, window) / n
    mu_b = _box_sums(b, window) / n
    var_a = _box_sums(a * a, window) / n - mu_a**2
    var_b = _box_sums(b * b, window) / n - mu_b**2
    cov = _box_sums(a * b, window) / n - mu_a * mu_b

    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def ssim_gate(score, threshold=0.5):
    """Quality gate: scores below the threshold are rejected."""
    return bool(score >= threshold)


def composite_overlay(background, vertices, faces, cam, color=(0.7, 0.7, 0.75)):
    """Z-buffered flat-shaded triangle splat of a projected mesh over a background.

    Depth is the camera-space Z interpolated per pixel; smaller Z wins.
    Faces fully outside the frame leave the background untouched. The face
    loop order is fixed, so output is deterministic for fixed inputs.
    """
    background = np.asarray(background, dtype=np.float64)
    if background.ndim != 3 or background.shape[2] != 3:
        raise InvalidInputError(f"background must be (H, W, 3), got {background.shape}")
    h, w = background.shape[:2]
    out = background.copy()
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if faces.size == 0 or vertices.size == 0:
        return out

    px = project_weak_perspective(vertices, cam, (w, h))
    depth = vertices[:, 2]
    zbuf = np.full((h, w), np.inf)
    color = np.asarray(color, dtype=np.float64)

    def edge(px0, py0, px1, py1, qx, qy):
        return (px1 - px0) * (qy - py0) - (py1 - py0) * (qx - px0)

    for f in faces:
        tri = px[f]            # (3, 2) pixel coords
        tz = depth[f]
        x0 = int(np.floor(tri[:, 0].min()))
        x1 = int(np.ceil(tri[:, 0].max()))
        y0 = int(np.floor(tri[:, 1].min()))
        y1 = int(np.ceil(tri[:, 1].max()))
        x0, x1 = max(x0, 0), min(x1, w - 1)
        y0, y1 = max(y0, 0), min(y1, h - 1)
        if x0 > x1 or y0 > y1:
            continue
        area = edge(tri[0, 0], tri[0, 1], tri[1, 0], tri[1, 1], tri[2, 0], tri[2, 1])
        if area == 0.0:
            continue
        gx, gy = np.meshgrid(
            np.arange(x0, x1 + 1, dtype=np.float64) + 0.5,
            np.arange(y0, y1 + 1, dtype=np.float64) + 0.5,
        )
        # Half-plane coverage: a pixel center is inside when the three edge
        # functions do not straddle zero (edges count as covered).
        d1 = edge(tri[0, 0], tri[0, 1], tri[1, 0], tri[1, 1], gx, gy)
        d2 = edge(tri[1, 0], tri[1, 1], tri[2, 0], tri[2, 1], gx, gy)
        d3 = edge(tri[2, 0], tri[2, 1], tri[0, 0], tri[0, 1], gx, gy)
        has_neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
        has_pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
        inside = ~(has_neg & has_pos)
        if not np.any(inside):
            continue
        # The edge functions double as barycentric weights for depth.
        z = (d2 * tz[0] + d3 * tz[1] + d1 * tz[2]) / area
        patch_z = zbuf[y0 : y1 + 1, x0 : x1 + 1]
        win = inside & (z < patch_z)
        patch_z[win] = z[win]
        out[y0 : y1 + 1, x0 : x1 + 1][win] = color
    return out


# ---------------------------------------------------------------------------
# Image and heatmap file I/O
# ---------------------------------------------------------------------------

def save_png(image, path):
    """Write a [0, 1] gray (H, W) or RGB (H, W, 3) array as 8-bit PNG."""
    from PIL import Image

    image = np.asarray(image, dtype=np.float64)
    if image.ndim not in (2, 3):
        raise InvalidInputError(f"image must be 2-D or 3-D, got shape {image.shape}")
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    mode = "L" if image.ndim == 2 else "RGB"
    Image.fromarray(data, mode=mode).save(path, format="PNG")


def load_png(path):
    """Read a PNG as float array in [0, 1]; RGB stays (H, W, 3), gray (H, W)."""
    from PIL import Image

    with Image.open(path) as im:
        if im.mode in ("L", "I;16"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)
            return arr / 255.0
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
        return arr / 255.0


def save_heatmaps(stack, path):
    """Write a heatmap stack in the AMPHM01 binary format."""
    maps = np.asarray(stack.maps, dtype=np.float64)
    if maps.ndim != 3:
        raise InvalidInputError(f"heatmap maps must be (H, W, J), got {maps.shape}")
    h, w, j = maps.shape
    with open(path, "wb") as fh:
        fh.write(HEATMAP_MAGIC)
        fh.write(struct.pack("<IIId", h, w, j, float(stack.sigma)))
        fh.write(np.ascontiguousarray(maps, dtype="<f8").tobytes())


def load_heatmaps(path):
    with open(path, "rb") as fh:
        data = fh.read()
    hdr = len(HEATMAP_MAGIC)
    if len(data) < hdr + 20 or data[:hdr] != HEATMAP_MAGIC:
        raise SchemaError("not an AMPHM01 heatmap file (bad magic)")
    h, w, j, sigma = struct.unpack_from("<IIId", data, hdr)
    off = hdr + 20
    count = h * w * j
    if len(data) < off + count * 8:
        raise SchemaError("heatmap file truncated")
    maps = np.frombuffer(data, dtype="<f8", count=count, offset=off).copy().reshape(h, w, j)
    return HeatmapStack(maps=maps, sigma=sigma)
