"""Silhouette alignment, clip sampling, identity-balanced batching and
sequence-consistent spatial augmentation.

Alignment recipe (the module contract): binarize at 128, crop to the
foreground's vertical span, recenter the horizontal center of mass on a
proportional-width canvas, downscale to height 64 with a mask-preserving
block reduction (a cell is foreground if any covered source pixel is), and
pad or crop symmetrically to width 44.  Outputs are strictly binary
{0, 255}; the whole map is idempotent and invariant to integer-pixel
horizontal translation of the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError

ALIGN_H, ALIGN_W = 64, 44
BIN_THRESHOLD = 128


# -- PGM (binary P5) ---------------------------------------------------------

def read_pgm(path):
    """Read an 8-bit binary (P5) PGM file."""
    blob = Path(path).read_bytes()
    try:
        if not blob.startswith(b"P5"):
            raise DataError(f"{path}: not a binary P5 PGM")
        pos, fields = 2, []
        while len(fields) < 3:
            while pos < len(blob) and blob[pos : pos + 1].isspace():
                pos += 1
            if blob[pos : pos + 1] == b"#":
                while pos < len(blob) and blob[pos] != 0x0A:
                    pos += 1
                continue
            start = pos
            while pos < len(blob) and not blob[pos : pos + 1].isspace():
                pos += 1
            fields.append(int(blob[start:pos]))
        pos += 1  # single whitespace after maxval
        w, h, maxval = fields
        if maxval != 255:
            raise DataError(f"{path}: only maxval 255 supported, got {maxval}")
        data = np.frombuffer(blob, dtype=np.uint8, offset=pos, count=w * h)
        if data.size != w * h:
            raise DataError(f"{path}: truncated pixel data")
        return data.reshape(h, w).copy()
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: corrupt PGM ({exc})") from None


def write_pgm(path, image):
    img = np.asarray(image)
    if img.dtype != np.uint8:
        img = np.clip(img, 0, 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


# -- alignment ----------------------------------------------------------------

def _block_edges(n_out, n_in):
    """Partition [0, n_in) into n_out covering blocks (floor boundaries)."""
    edges = (np.arange(n_out + 1) * n_in) // n_out
    starts = edges[:-1]
    stops = np.maximum(edges[1:], starts + 1)
    stops = np.minimum(stops, n_in)
    starts = np.minimum(starts, n_in - 1)
    return starts, stops


def _block_reduce_any(mask, out_h, out_w):
    """Mask-preserving resize: output cell is set if any covered input pixel is."""
    in_h, in_w = mask.shape
    rs, re = _block_edges(out_h, in_h)
    cs, ce = _block_edges(out_w, in_w)
    row_hit = np.zeros((out_h, in_w), dtype=bool)
    for r in range(out_h):
        row_hit[r] = mask[rs[r] : re[r]].any(axis=0)
    out = np.zeros((out_h, out_w), dtype=bool)
    for c in range(out_w):
        out[:, c] = row_hit[:, cs[c] : ce[c]].any(axis=1)
    return out


def _com(mask):
    """Horizontal center of mass of a boolean mask."""
    colsum = mask.sum(axis=0)
    total = colsum.sum()
    return float((colsum * np.arange(mask.shape[1])).sum()) / float(total)


def _shift_cols(mask, offset):
    """Shift mask columns by an integer offset, zero fill, no wrap."""
    if offset == 0:
        return mask.copy()
    out = np.zeros_like(mask)
    w = mask.shape[1]
    if offset > 0:
        out[:, offset:] = mask[:, : w - offset]
    else:
        out[:, : w + offset] = mask[:, -offset:]
    return out


def align_silhouette(raw):
    """Align one grayscale silhouette to the binary 64x44 training format."""
    img = np.asarray(raw)
    if img.ndim != 2:
        raise DataError(f"expected a 2-d grayscale image, got shape {img.shape}")
    mask = img >= BIN_THRESHOLD
    rows = np.nonzero(mask.any(axis=1))[0]
    if rows.size == 0:
        raise DataError("empty silhouette: no foreground above threshold")
    band = mask[rows[0] : rows[-1] + 1]
    h0, w0 = band.shape

    # recenter the center of mass on a canvas whose width scales with height
    canvas_w = max(1, round(h0 * ALIGN_W / ALIGN_H))
    canvas = np.zeros((h0, canvas_w), dtype=bool)
    offset = round((canvas_w - 1) / 2.0 - _com(band))
    src_lo = max(0, -offset)
    src_hi = min(w0, canvas_w - offset)
    if src_hi > src_lo:
        canvas[:, src_lo + offset : src_hi + offset] = band[:, src_lo:src_hi]

    resized = _block_reduce_any(canvas, ALIGN_H, max(1, round(canvas_w * ALIGN_H / h0)))
    out_w = resized.shape[1]
    if out_w < ALIGN_W:
        pad_l = (ALIGN_W - out_w) // 2
        out = np.zeros((ALIGN_H, ALIGN_W), dtype=bool)
        out[:, pad_l : pad_l + out_w] = resized
    elif out_w > ALIGN_W:
        cut_l = (out_w - ALIGN_W) // 2
        out = resized[:, cut_l : cut_l + ALIGN_W].copy()
    else:
        out = resized
    # the block reduction can drift the center of mass slightly; snap it back
    # on the final grid so alignment is an exact fixpoint of itself
    for _ in range(4):
        if not out.any():
            break
        shift = round((ALIGN_W - 1) / 2.0 - _com(out))
        if shift == 0:
            break
        out = _shift_cols(out, shift)
    return out.astype(np.uint8) * 255


# -- sampling -----------------------------------------------------------------

@dataclass
class SequenceEntry:
    subject: str
    condition: str
    view: str
    path: str
    frames: int


@dataclass
class DatasetIndex:
    """Flat index of sequences with a contiguous subject-label mapping."""

    entries: list = field(default_factory=list)

    @property
    def subjects(self):
        return sorted({e.subject for e in self.entries})

    def label_of(self, subject):
        return self.subjects.index(subject)

    def by_subject(self):
        groups = {}
        for e in self.entries:
            groups.setdefault(e.subject, []).append(e)
        return groups


def clip_indices(n_frames, clip_len, rng):
    """Frame indices of a random contiguous window; short sequences repeat cyclically."""
    if n_frames == 0:
        raise DataError("cannot sample a clip from an empty sequence")
    if n_frames >= clip_len:
        start = int(rng.integers(0, n_frames - clip_len + 1))
        return np.arange(start, start + clip_len)
    return np.arange(clip_len) % n_frames


def sample_clip(frames, clip_len, rng):
    """A contiguous random window of ``clip_len`` frames; short sequences repeat cyclically."""
    return frames[clip_indices(frames.shape[0], clip_len, rng)].copy()


def make_batch(index: DatasetIndex, p, k, rng):
    """Choose p distinct subjects and k sequences each (with replacement when short).

    Returns a list of (SequenceEntry, label) pairs, grouped by subject.
    """
    groups = index.by_subject()
    subjects = sorted(groups)
    if p > len(subjects):
        raise ContractError(f"batch needs {p} subjects but the index has {len(subjects)}")
    chosen = rng.choice(len(subjects), size=p, replace=False)
    out = []
    for si in sorted(int(i) for i in chosen):
        subject = subjects[si]
        seqs = groups[subject]
        replace = len(seqs) < k
        picks = rng.choice(len(seqs), size=k, replace=replace)
        label = index.label_of(subject)
        out.extend((seqs[int(j)], label) for j in picks)
    return out


# -- augmentation -------------------------------------------------------------

@dataclass
class AugmentConfig:
    flip_prob: float = 0.0
    max_rotate_deg: float = 0.0
    erase_prob: float = 0.0


def _rotate_frames(frames, angle_deg):
    """Rotate [T, C, H, W] frames about the image center, bilinear, zero fill."""
    if angle_deg == 0.0:
        return frames.copy()
    t, c, h, w = frames.shape
    theta = np.deg2rad(angle_deg)
    cos, sin = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    # inverse map: output pixel samples the input at the unrotated location
    sx = cos * (xs - cx) + sin * (ys - cy) + cx
    sy = -sin * (xs - cx) + cos * (ys - cy) + cy
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx, fy = sx - x0, sy - y0

    def tap(yy, xx):
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = frames[:, :, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return vals * valid

    out = (
        tap(y0, x0) * ((1 - fy) * (1 - fx))
        + tap(y0, x0 + 1) * ((1 - fy) * fx)
        + tap(y0 + 1, x0) * (fy * (1 - fx))
        + tap(y0 + 1, x0 + 1) * (fy * fx)
    )
    return out.astype(frames.dtype)


def augment(clip, cfg: AugmentConfig, rng):
    """Apply one drawn transform consistently to every frame of a [T, C, H, W] clip."""
    out = np.asarray(clip)
    t, c, h, w = out.shape
    if cfg.flip_prob > 0 and rng.random() < cfg.flip_prob:
        out = out[:, :, :, ::-1]
    if cfg.max_rotate_deg > 0:
        angle = float(rng.uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg))
        out = _rotate_frames(np.ascontiguousarray(out), angle)
    if cfg.erase_prob > 0 and rng.random() < cfg.erase_prob:
        eh = int(rng.integers(h // 8, h // 3))
        ew = int(rng.integers(w // 8, w // 3))
        ey = int(rng.integers(0, h - eh + 1))
        ex = int(rng.integers(0, w - ew + 1))
        out = out.copy()
        out[:, :, ey : ey + eh, ex : ex + ew] = 0
    return np.ascontiguousarray(out)
