"""Skeleton-map rendering: COCO-17 pose sequences to double-channel heatmaps.

Per frame: center the pose on the hip midpoint, scale the joint height range
to [0, H], render a Gaussian joint map and a limb map on an RxR canvas
(R = 2H by default), then crop, resize to 64x64 and double-side cut to the
final 2x64x44 map.

Conventions: keypoints follow the standard COCO-17 order; the hip joints are
entries 11 (left) and 12 (right) of that order.  Limb tables are written
with 1-based joint indices.  Maps are sampled at integer pixel coordinates
(i, j) in {0..R-1} with i horizontal and j vertical; arrays are stored
image-style as [row=j, col=i].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError

K = 17  # COCO-17 joint count
LEFT_HIP, RIGHT_HIP = 11, 12

COCO17_NAMES = [
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
]

# the standard 19-edge COCO-17 skeleton, 1-based joint indices
DEFAULT_LIMBS = [
    (16, 14), (14, 12), (17, 15), (15, 13), (12, 13), (6, 12), (7, 13),
    (6, 7), (6, 8), (7, 9), (8, 10), (9, 11), (2, 3), (1, 2), (1, 3),
    (2, 4), (3, 5), (4, 6), (5, 7),
]

CROP_THRESHOLD = 1e-3
FINAL_HEIGHT, FINAL_WIDTH = 64, 44
SIDE_CUT = 10  # columns removed from each side of the 64x64 resize


@dataclass
class RenderConfig:
    """Skeleton-map rendering parameters."""

    height: int = 64            # normalized body height H
    canvas: int | None = None   # canvas size R; defaults to 2H
    sigma: float = 8.0
    limbs: list = field(default_factory=lambda: list(DEFAULT_LIMBS))

    def __post_init__(self):
        if self.canvas is None:
            self.canvas = 2 * self.height
        if not (self.canvas >= self.height > 0):
            raise ContractError(f"need canvas >= height > 0, got {self.canvas}, {self.height}")
        if self.sigma <= 0:
            raise ContractError(f"sigma must be positive, got {self.sigma}")
        for a, b in self.limbs:
            if not (1 <= a <= K and 1 <= b <= K):
                raise ContractError(f"limb indices must lie in [1, {K}], got ({a}, {b})")


def _validate_frame(kps):
    kps = np.asarray(kps, dtype=np.float64)
    if kps.shape != (K, 3):
        raise DataError(f"a pose frame needs exactly {K} keypoints (x, y, c), got {kps.shape}")
    if not np.isfinite(kps[:, :2]).all():
        raise DataError("keypoint coordinates must be finite")
    if ((kps[:, 2] < 0) | (kps[:, 2] > 1)).any():
        raise DataError("confidences must lie in [0, 1]")
    return kps


def normalize_pose(frame, cfg):
    """Center a frame on the hip midpoint, then scale the joint y-range to [0, H].

    ``frame`` is a [17, 3] array of (x, y, confidence).  The translation moves
    the hip midpoint to (R/2, R/2); the scale step maps both coordinates
    through (v - y_min) / (y_max - y_min) * H using the translated y-range of
    the confident (c > 0) joints.  Confidences pass through unchanged.
    """
    kps = _validate_frame(frame)
    r_half = cfg.canvas / 2.0
    if kps[LEFT_HIP, 2] <= 0 or kps[RIGHT_HIP, 2] <= 0:
        raise DataError("cannot normalize: a hip keypoint is missing (confidence 0)")
    x_core = (kps[LEFT_HIP, 0] + kps[RIGHT_HIP, 0]) / 2.0
    y_core = (kps[LEFT_HIP, 1] + kps[RIGHT_HIP, 1]) / 2.0

    out = kps.copy()
    out[:, 0] = kps[:, 0] - x_core + r_half
    out[:, 1] = kps[:, 1] - y_core + r_half

    confident = out[:, 2] > 0
    ys = out[confident, 1]
    y_min, y_max = ys.min(), ys.max()
    if y_max <= y_min:
        raise DataError("degenerate pose: zero vertical extent after centering")
    scale = cfg.height / (y_max - y_min)
    out[:, 0] = (out[:, 0] - y_min) * scale
    out[:, 1] = (out[:, 1] - y_min) * scale
    return out


def _grid(r, dtype=np.float64):
    coords = np.arange(r, dtype=dtype)
    return coords[None, :], coords[:, None]  # xs along columns, ys along rows


def render_joint_map(frame, cfg):
    """Sum of per-joint Gaussians, weighted by confidence, on the RxR canvas."""
    kps = np.asarray(frame, dtype=np.float64)
    r = cfg.canvas
    xs, ys = _grid(r)
    out = np.zeros((r, r))
    inv = 1.0 / (2.0 * cfg.sigma ** 2)
    for x, y, c in kps:
        if c <= 0:
            continue
        out += np.exp(-((xs - x) ** 2 + (ys - y) ** 2) * inv) * c
    return out


def point_segment_distance(p, a, b):
    """Euclidean distance from point p to the closed segment [a, b]."""
    p, a, b = (np.asarray(v, dtype=np.float64) for v in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.hypot(*(p - a)))
    t = np.clip(float((p - a) @ ab) / denom, 0.0, 1.0)
    return float(np.hypot(*(p - (a + t * ab))))


def _segment_distance_grid(xs, ys, a, b):
    ab = b - a
    denom = ab[0] ** 2 + ab[1] ** 2
    if denom == 0.0:
        return np.hypot(xs - a[0], ys - a[1])
    t = ((xs - a[0]) * ab[0] + (ys - a[1]) * ab[1]) / denom
    np.clip(t, 0.0, 1.0, out=t)
    return np.hypot(xs - (a[0] + t * ab[0]), ys - (a[1] + t * ab[1]))


def render_limb_map(frame, cfg):
    """Sum of per-limb Gaussians of segment distance, weighted by min endpoint confidence."""
    kps = np.asarray(frame, dtype=np.float64)
    r = cfg.canvas
    xs, ys = _grid(r)
    out = np.zeros((r, r))
    inv = 1.0 / (2.0 * cfg.sigma ** 2)
    for ia, ib in cfg.limbs:
        a, b = kps[ia - 1], kps[ib - 1]
        c = min(a[2], b[2])
        if c <= 0:
            continue
        d = _segment_distance_grid(xs, ys, a[:2], b[:2])
        out += np.exp(-(d ** 2) * inv) * c
    return out


def _bilinear_resize(img, out_h, out_w):
    """Half-pixel-center bilinear resize (symmetric, identity at scale 1)."""
    in_h, in_w = img.shape
    if (in_h, in_w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, in_h - 1).astype(int)
    x0 = np.clip(np.floor(xs), 0, in_w - 1).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def finalize_map(joint_map, limb_map, cfg):
    """Crop, resize and cut the raw canvases into the final 2x64x44 map.

    Vertical crop keeps rows where either channel exceeds the crop threshold;
    horizontal crop keeps the fixed central span of H columns; both channels
    are then bilinearly resized to 64x64 and 10 columns are cut per side.
    """
    j = np.asarray(joint_map, dtype=np.float64)
    l = np.asarray(limb_map, dtype=np.float64)
    r, h = cfg.canvas, cfg.height
    if j.shape != (r, r) or l.shape != (r, r):
        raise ContractError(f"expected {r}x{r} canvases, got {j.shape} and {l.shape}")
    occupied = np.maximum(j, l) > CROP_THRESHOLD
    rows = np.nonzero(occupied.any(axis=1))[0]
    if rows.size == 0:
        raise DataError("all-zero skeleton map: nothing to crop")
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0 = (r - h) // 2
    c1 = (r + h) // 2
    out = np.empty((2, FINAL_HEIGHT, FINAL_WIDTH), dtype=np.float64)
    for ch, grid in enumerate((j, l)):
        resized = _bilinear_resize(grid[r0:r1, c0:c1], FINAL_HEIGHT, FINAL_HEIGHT)
        out[ch] = resized[:, SIDE_CUT : FINAL_HEIGHT - SIDE_CUT]
    return out


def render_frame(frame, cfg):
    norm = normalize_pose(frame, cfg)
    return finalize_map(render_joint_map(norm, cfg), render_limb_map(norm, cfg), cfg)


@dataclass
class RenderResult:
    maps: np.ndarray          # [T, 2, 64, 44]
    dropped: list             # (frame index, reason)


def render_sequence(frames, cfg):
    """Render every frame of a pose sequence; degenerate frames are dropped and counted."""
    maps, dropped = [], []
    for idx, frame in enumerate(frames):
        try:
            maps.append(render_frame(frame, cfg))
        except DataError as exc:
            dropped.append((idx, str(exc)))
    stacked = np.stack(maps) if maps else np.zeros((0, 2, FINAL_HEIGHT, FINAL_WIDTH))
    return RenderResult(stacked, dropped)


# -- pose JSONL --------------------------------------------------------------

def read_pose_jsonl(path):
    """Read one pose sequence: JSON Lines of {"frame": int, "keypoints": [[x,y,c] x 17]}."""
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from None
            if "keypoints" not in obj:
                raise DataError(f"{path}:{lineno}: missing 'keypoints'")
            frames.append((int(obj.get("frame", lineno - 1)), np.asarray(obj["keypoints"], dtype=np.float64)))
    frames.sort(key=lambda item: item[0])
    return [kps for _, kps in frames]


def write_pose_jsonl(path, frames):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for idx, kps in enumerate(frames):
            obj = {"frame": idx, "keypoints": np.asarray(kps, dtype=float).round(4).tolist()}
            fh.write(json.dumps(obj) + "\n")
