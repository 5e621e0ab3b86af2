"""Sampled, invertible geometric + texture augmentations and mixup.

A draw is captured as an :class:`AugmentationRecord`; applying one to an
image performs rotate-about-centre, translate, additive Gaussian noise,
Gaussian blur, in that fixed order. Heatmaps receive only the geometric
part (translation rescaled to heatmap pixels) and can be inverted exactly
at the parameter level: the inverse applies -translation then -rotation.

Warps resample bilinearly with zero padding. The sampling grid is built in
float64 with snapped trigonometry for multiples of 90 degrees, so those
rotations (plus integer-pixel shifts) reduce to exact index permutations
and round-trip bit-exactly. The warp is a linear function of the pixel
values, so gradients pass through it when the input is a torch tensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from .geometry import HeatmapStack


@dataclass(frozen=True)
class AugmentationRecord:
    """Parameters of one augmentation draw.

    rotation is in degrees about the image centre; translation is an
    (dx, dy) pair in fractions of the image width/height; ``seed`` fixes
    the noise draw so applying the same record twice is deterministic.
    """

    rotation: float = 0.0
    translation: tuple = (0.0, 0.0)
    noise_sigma: float = 0.0
    blur_sigma: float = 0.0
    seed: int = 0

    @property
    def is_identity_warp(self):
        return self.rotation == 0.0 and self.translation[0] == 0.0 and self.translation[1] == 0.0


@dataclass(frozen=True)
class AugmentationPolicy:
    """Uniform sampling ranges for each augmentation component."""

    rotation_range: float = 0.0      # degrees, symmetric about 0
    translation_range: float = 0.0   # fraction of image size, symmetric
    noise_range: float = 0.0         # max additive-noise sigma
    blur_range: float = 0.0          # max blur sigma in pixels
    enable_rotation: bool = True
    enable_translation: bool = True
    enable_noise: bool = True
    enable_blur: bool = True

    def __post_init__(self):
        for name in ("rotation_range", "translation_range", "noise_range", "blur_range"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def sample_augmentation(policy: AugmentationPolicy, rng: np.random.Generator) -> AugmentationRecord:
    """Draw one record uniformly within the policy ranges."""
    rot = float(rng.uniform(-policy.rotation_range, policy.rotation_range)) \
        if policy.enable_rotation and policy.rotation_range > 0 else 0.0
    if policy.enable_translation and policy.translation_range > 0:
        dx, dy = rng.uniform(-policy.translation_range, policy.translation_range, size=2)
    else:
        dx, dy = 0.0, 0.0
    noise = float(rng.uniform(0.0, policy.noise_range)) \
        if policy.enable_noise and policy.noise_range > 0 else 0.0
    blur = float(rng.uniform(0.0, policy.blur_range)) \
        if policy.enable_blur and policy.blur_range > 0 else 0.0
    seed = int(rng.integers(0, 2**31 - 1))
    return AugmentationRecord(rotation=rot, translation=(float(dx), float(dy)),
                              noise_sigma=noise, blur_sigma=blur, seed=seed)


_EXACT_TRIG = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}


def _cos_sin(deg):
    d = float(deg) % 360.0
    if d in _EXACT_TRIG:
        return _EXACT_TRIG[d]
    r = math.radians(float(deg))
    return math.cos(r), math.sin(r)


@lru_cache(maxsize=32)
def _base_grid(h, w):
    ys, xs = torch.meshgrid(torch.arange(h, dtype=torch.float64),
                            torch.arange(w, dtype=torch.float64), indexing="ij")
    return ys, xs


def _bilinear(x, sx, sy):
    """Sample x (B, C, H, W) at float64 locations (sx, sy), zero outside."""
    b, c, h, w = x.shape
    x0 = torch.floor(sx)
    y0 = torch.floor(sy)
    fx = (sx - x0).to(x.dtype)
    fy = (sy - y0).to(x.dtype)
    x0 = x0.long()
    y0 = y0.long()
    flat = x.reshape(b, c, h * w)

    def tap(yi, xi, wgt):
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).reshape(b, 1, -1).expand(b, c, -1)
        vals = flat.gather(2, idx).reshape(b, c, *sx.shape[-2:])
        return vals * (wgt * valid.to(x.dtype)).unsqueeze(1)

    out = tap(y0, x0, (1 - fy) * (1 - fx))
    out = out + tap(y0, x0 + 1, (1 - fy) * fx)
    out = out + tap(y0 + 1, x0, fy * (1 - fx))
    out = out + tap(y0 + 1, x0 + 1, fy * fx)
    return out


def warp_batch(x, rotations, translations_px, inverse=False):
    """Rotate-then-translate a (B, C, H, W) tensor, one transform per sample.

    ``inverse=True`` applies the exact inverse map (-translation, then
    -rotation). Rotation is about the grid centre ((W-1)/2, (H-1)/2);
    translations are in pixels of this grid.
    """
    b, _, h, w = x.shape
    ys, xs = _base_grid(h, w)
    trig = torch.tensor([_cos_sin(r) for r in rotations], dtype=torch.float64)
    co = trig[:, 0].view(b, 1, 1)
    si = trig[:, 1].view(b, 1, 1)
    t = torch.as_tensor(np.asarray(translations_px, dtype=np.float64))
    tx = t[:, 0].view(b, 1, 1)
    ty = t[:, 1].view(b, 1, 1)
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    gx = xs.unsqueeze(0)
    gy = ys.unsqueeze(0)
    if inverse:
        # source location = forward point-map of the output location
        sx = co * (gx - cx) - si * (gy - cy) + cx + tx
        sy = si * (gx - cx) + co * (gy - cy) + cy + ty
    else:
        dx = gx - cx - tx
        dy = gy - cy - ty
        sx = co * dx + si * dy + cx
        sy = -si * dx + co * dy + cy
    return _bilinear(x, sx, sy)


def _translation_px(record, h, w):
    return (record.translation[0] * w, record.translation[1] * h)


def _gaussian_kernel1d(sigma, dtype):
    radius = max(1, int(math.ceil(3.0 * sigma)))
    xs = torch.arange(-radius, radius + 1, dtype=dtype)
    k = torch.exp(-(xs ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(x, sigma):
    """Separable Gaussian blur of (B, C, H, W) with reflect padding."""
    if sigma <= 0:
        return x
    b, c, h, w = x.shape
    k = _gaussian_kernel1d(sigma, x.dtype)
    r = (len(k) - 1) // 2
    kx = k.view(1, 1, 1, -1).expand(c, 1, 1, -1)
    ky = k.view(1, 1, -1, 1).expand(c, 1, -1, 1)
    x = torch.nn.functional.pad(x, (r, r, 0, 0), mode="reflect")
    x = torch.nn.functional.conv2d(x, kx, groups=c)
    x = torch.nn.functional.pad(x, (0, 0, r, r), mode="reflect")
    x = torch.nn.functional.conv2d(x, ky, groups=c)
    return x


def _noise_like(x, sigma, seed):
    g = torch.Generator().manual_seed(int(seed))
    return torch.randn(x.shape, generator=g, dtype=x.dtype) * sigma


def augment_images(records, images):
    """Apply one record per sample to an image batch (B, C, H, W)."""
    b, _, h, w = images.shape
    if len(records) != b:
        raise ValueError(f"got {len(records)} records for a batch of {b}")
    if all(r.is_identity_warp for r in records):
        out = images
    else:
        out = warp_batch(images,
                         [r.rotation for r in records],
                         [_translation_px(r, h, w) for r in records])
    parts = []
    for i, r in enumerate(records):
        xi = out[i:i + 1]
        if r.noise_sigma > 0:
            xi = xi + _noise_like(xi, r.noise_sigma, r.seed)
        if r.blur_sigma > 0:
            xi = gaussian_blur(xi, r.blur_sigma)
        parts.append(xi)
    return torch.cat(parts, dim=0) if len(parts) > 1 else parts[0]


def warp_heatmaps(records, stacks, inverse=False):
    """Geometric-only warp of heatmap batches (B, K, H', W').

    Fractional translations are rescaled to heatmap pixels; texture
    components of the records are ignored. Differentiable in ``stacks``.
    """
    b, _, h, w = stacks.shape
    if len(records) != b:
        raise ValueError(f"got {len(records)} records for a batch of {b}")
    if all(r.is_identity_warp for r in records):
        return stacks
    return warp_batch(stacks,
                      [(-r.rotation if inverse else r.rotation) if False else r.rotation for r in records] if not inverse else [r.rotation for r in records],
                      [_translation_px(r, h, w) for r in records],
                      inverse=inverse)


def _as_chw(image):
    """Normalise numpy/torch input to a (1, C, H, W) tensor plus restore info."""
    is_numpy = isinstance(image, np.ndarray)
    t = torch.as_tensor(image) if is_numpy else image
    squeeze_channel = t.ndim == 2
    if squeeze_channel:
        t = t.unsqueeze(0)
    if t.ndim != 3:
        raise ValueError(f"expected (H, W) or (C, H, W), got shape {tuple(t.shape)}")
    return t.unsqueeze(0), is_numpy, squeeze_channel


def _restore(t, is_numpy, squeeze_channel):
    t = t.squeeze(0)
    if squeeze_channel:
        t = t.squeeze(0)
    return t.numpy() if is_numpy else t


def apply_to_image(record: AugmentationRecord, image):
    """Rotate, translate, add noise, then blur a single image.

    Accepts (H, W) or (C, H, W) numpy arrays or torch tensors and returns
    the same kind. With zero noise/blur and an identity warp the input is
    returned unchanged bit-exactly.
    """
    t, is_numpy, sq = _as_chw(image)
    if t.numel() == 0:
        raise ValueError("image is empty")
    out = augment_images([record], t)
    return _restore(out, is_numpy, sq)


def _stack_values(stack):
    if isinstance(stack, HeatmapStack):
        return stack.values, "stack", stack.stride
    if isinstance(stack, np.ndarray):
        return stack, "numpy", None
    return stack, "torch", None


def _apply_heatmap(record, stack, inverse):
    values, kind, stride = _stack_values(stack)
    t = torch.as_tensor(values) if kind != "torch" else values
    batched = t.ndim == 4
    if not batched:
        t = t.unsqueeze(0)
    out = warp_heatmaps([record] * t.shape[0], t, inverse=inverse)
    if not batched:
        out = out.squeeze(0)
    if kind == "stack":
        return HeatmapStack(values=out.numpy(), stride=stride)
    return out.numpy() if kind == "numpy" else out


def apply_to_heatmap(record: AugmentationRecord, stack):
    """Apply the geometric part of a record to heatmaps (texture skipped)."""
    return _apply_heatmap(record, stack, inverse=False)


def invert_on_heatmap(record: AugmentationRecord, stack):
    """Undo the geometric part of a record: -translation, then -rotation."""
    return _apply_heatmap(record, stack, inverse=True)


def transform_keypoints(record: AugmentationRecord, keypoints, image_size):
    """Move keypoints the way apply_to_image moves pixels.

    image_size is (H, W). Keypoints pushed outside [0, W) x [0, H) are
    marked invisible. Returns a new KeypointSet.
    """
    from .geometry import KeypointSet

    h, w = image_size
    co, si = _cos_sin(record.rotation)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    tx, ty = _translation_px(record, h, w)
    pts = np.asarray(keypoints.coords, dtype=np.float64)
    dx = pts[:, 0] - cx
    dy = pts[:, 1] - cy
    nx = co * dx - si * dy + cx + tx
    ny = si * dx + co * dy + cy + ty
    coords = np.stack([nx, ny], axis=1)
    inside = (nx >= 0) & (nx < w) & (ny >= 0) & (ny < h)
    return KeypointSet(coords=coords, visible=keypoints.visible & inside)


def sample_mix_ratio(alpha, rng: np.random.Generator) -> float:
    """Draw a symmetric Beta(alpha, alpha) mixing ratio."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return float(rng.beta(alpha, alpha))


def mix_images(x_i, x_j, rho):
    """Elementwise convex combination rho * x_i + (1 - rho) * x_j."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    shape_i = x_i.shape
    if tuple(shape_i) != tuple(x_j.shape):
        raise ValueError(f"shape mismatch: {tuple(shape_i)} vs {tuple(x_j.shape)}")
    return rho * x_i + (1.0 - rho) * x_j
