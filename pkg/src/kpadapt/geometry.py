"""Heatmap encoding/decoding of keypoints and the PCK metric.

Conventions used across the package:

* Keypoint coordinates are (x, y) pairs in image pixels, x along columns,
  y along rows.
* A heatmap of stride ``s`` aligns pixel centres with the image so that
  heatmap coordinate ``u`` corresponds to image coordinate
  ``(u + 0.5) * s - 0.5``. Under this convention the image centre
  ``(W-1)/2`` maps exactly onto the heatmap centre ``(W/s-1)/2``, which the
  augmentation warps rely on.
* An ideal channel is an isotropic Gaussian bump rescaled so its grid
  maximum is exactly 1; invisible keypoints render as all-zero channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_STRIDE = 4.0


@dataclass
class KeypointSet:
    """K 2D keypoints in image pixels with per-keypoint visibility."""

    coords: np.ndarray
    visible: np.ndarray | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2 or len(self.coords) < 1:
            raise ValueError(f"coords must have shape (K, 2) with K >= 1, got {self.coords.shape}")
        if self.visible is None:
            self.visible = np.ones(len(self.coords), dtype=bool)
        else:
            self.visible = np.asarray(self.visible, dtype=bool)
            if self.visible.shape != (len(self.coords),):
                raise ValueError("visible must carry one flag per keypoint")

    def __len__(self):
        return len(self.coords)


@dataclass
class HeatmapStack:
    """K activation channels at heatmap resolution.

    ``values`` is (K, H', W'). Freshly rendered stacks are in [0, 1] with a
    per-channel maximum of exactly 1; model outputs may leave that range.
    """

    values: np.ndarray
    stride: float = DEFAULT_STRIDE

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3:
            raise ValueError(f"values must have shape (K, H, W), got {self.values.shape}")

    @property
    def resolution(self):
        return self.values.shape[-2:]


@dataclass
class PckReport:
    per_keypoint_group: dict = field(default_factory=dict)
    average: float = 0.0
    threshold_fraction: float = 0.05


def image_to_heatmap(coords, stride):
    """Map image-pixel coordinates to heatmap-grid coordinates."""
    return (np.asarray(coords, dtype=np.float64) + 0.5) / stride - 0.5


def heatmap_to_image(coords, stride):
    """Inverse of :func:`image_to_heatmap`."""
    return (np.asarray(coords, dtype=np.float64) + 0.5) * stride - 0.5


def render_array(coords, visible, resolution, sigma, stride=DEFAULT_STRIDE):
    """Render Gaussian heatmaps for image-space keypoints.

    coords: (..., K, 2) image-pixel locations; visible: (..., K) bools.
    Returns a float64 array of shape (..., K, H, W) where every visible
    channel is a peak-1 Gaussian with standard deviation ``sigma`` (in
    heatmap pixels) and invisible channels are zero.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    h, w = int(resolution[0]), int(resolution[1])
    if h <= 0 or w <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    coords = np.asarray(coords, dtype=np.float64)
    visible = np.asarray(visible, dtype=bool)
    centers = image_to_heatmap(coords, stride)
    cx = centers[..., 0][..., None, None]
    cy = centers[..., 1][..., None, None]
    dx2 = (np.arange(w, dtype=np.float64) - cx) ** 2          # (..., K, 1, W)
    dy2 = (np.arange(h, dtype=np.float64)[:, None] - cy) ** 2  # (..., K, H, 1)
    out = np.exp(-(dx2 + dy2) / (2.0 * sigma * sigma))
    peak = out.max(axis=(-2, -1), keepdims=True)
    np.divide(out, peak, out=out, where=peak > 0)
    out *= visible[..., None, None]
    return out


def render_heatmaps(keypoints: KeypointSet, resolution, sigma, stride=DEFAULT_STRIDE) -> HeatmapStack:
    """Encode a keypoint set as a stack of peak-1 Gaussian channels."""
    values = render_array(keypoints.coords, keypoints.visible, resolution, sigma, stride)
    return HeatmapStack(values=values, stride=float(stride))


def decode_array(values, stride=DEFAULT_STRIDE):
    """Decode channel argmaxes with quarter-offset refinement.

    values: (..., H, W). Returns (coords, conf) where coords is (..., 2) in
    image pixels and conf is the raw per-channel maximum. Argmax ties break
    toward the smallest row-major index; the refinement shifts 0.25 heatmap
    px toward the larger of the two in-bounds axis neighbours. An all-zero
    channel decodes to (0, 0) with confidence 0.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim < 2:
        raise ValueError("values must have at least 2 dimensions")
    h, w = v.shape[-2:]
    lead = v.shape[:-2]
    flat = v.reshape(-1, h * w)
    idx = flat.argmax(axis=1)
    conf = flat[np.arange(len(flat)), idx]
    iy, ix = np.divmod(idx, w)

    maps = v.reshape(-1, h, w)
    rows = np.arange(len(maps))
    dx = np.zeros(len(maps))
    dy = np.zeros(len(maps))
    mx = (ix > 0) & (ix < w - 1)
    if mx.any():
        right = maps[rows[mx], iy[mx], ix[mx] + 1]
        left = maps[rows[mx], iy[mx], ix[mx] - 1]
        dx[mx] = 0.25 * np.sign(right - left)
    my = (iy > 0) & (iy < h - 1)
    if my.any():
        below = maps[rows[my], iy[my] + 1, ix[my]]
        above = maps[rows[my], iy[my] - 1, ix[my]]
        dy[my] = 0.25 * np.sign(below - above)

    coords = heatmap_to_image(np.stack([ix + dx, iy + dy], axis=-1), stride)
    coords[conf == 0] = 0.0
    return coords.reshape(*lead, 2), conf.reshape(lead)


def decode_heatmaps(stack: HeatmapStack):
    """Decode a stack into a keypoint set plus per-channel confidences."""
    if stack.values.size == 0:
        raise ValueError("cannot decode an empty stack")
    coords, conf = decode_array(stack.values, stack.stride)
    return KeypointSet(coords=coords), conf


def _as_pairs(pred, gt):
    if isinstance(pred, KeypointSet):
        pred = [pred]
    if isinstance(gt, KeypointSet):
        gt = [gt]
    if len(pred) != len(gt):
        raise ValueError(f"got {len(pred)} predictions for {len(gt)} ground-truth sets")
    return list(pred), list(gt)


def pck(pred, gt, image_size, fraction=0.05, groups=None) -> PckReport:
    """Percentage of correct keypoints at ``fraction`` of the image size.

    ``pred``/``gt`` are KeypointSets or equal-length sequences of them. A
    keypoint counts as correct iff its Euclidean error is strictly below
    ``fraction * max(H, W)``; only gt-visible keypoints are evaluated. The
    average is taken over all evaluated keypoints, not over groups.
    """
    preds, gts = _as_pairs(pred, gt)
    if np.ndim(image_size) == 0:
        norm = float(image_size)
    else:
        norm = float(max(image_size))
    k = len(gts[0])
    correct = np.zeros(k)
    total = np.zeros(k)
    for p, g in zip(preds, gts):
        if len(p) != k or len(g) != k:
            raise ValueError("pred and gt must have the same number of keypoints")
        dist = np.linalg.norm(p.coords - g.coords, axis=1)
        hits = (dist < fraction * norm) & g.visible
        correct += hits
        total += g.visible

    if groups is None:
        groups = {"all": list(range(k))}
    per_group = {}
    for name, idxs in groups.items():
        idxs = list(idxs)
        n = total[idxs].sum()
        per_group[name] = float(correct[idxs].sum() / n) if n > 0 else 0.0
    n_all = total.sum()
    average = float(correct.sum() / n_all) if n_all > 0 else 0.0
    return PckReport(per_keypoint_group=per_group, average=average, threshold_fraction=float(fraction))
