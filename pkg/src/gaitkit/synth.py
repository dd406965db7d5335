"""Identity-separable synthetic gait data.

Each identity is a 2-D stick walker with its own limb lengths, swing
amplitudes and gait cycle; sequences of one identity differ only by gait
phase (plus optional keypoint jitter).  The generator emits frame-aligned
COCO-17 pose streams (JSONL) and rendered thick-limb silhouettes (PGM
trees), deterministic under a seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .prep import write_pgm
from .skelmap import _segment_distance_grid, write_pose_jsonl

CANVAS_H, CANVAS_W = 150, 110
# short cycles so a training clip always covers a whole stride, letting
# temporal pooling cancel gait phase within an identity
_CYCLE_CHOICES = (8, 12)


@dataclass
class SyntheticSpec:
    identities: int = 8
    sequences: int = 6
    frames: int = 48
    modality: str = "both"  # silhouette | pose | both
    noise: float = 0.25

    def __post_init__(self):
        if min(self.identities, self.sequences, self.frames) < 1:
            raise ConfigError("identities, sequences and frames must be positive")
        if self.modality not in ("silhouette", "pose", "both"):
            raise ConfigError(f"unknown modality {self.modality!r}")

    @classmethod
    def from_dict(cls, d):
        allowed = {"identities", "sequences", "frames", "modality", "noise"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown synthetic-spec keys: {sorted(unknown)}")
        return cls(**d)


def _levels(rng, lo, hi, n):
    """n well-separated values covering [lo, hi], in a random per-dataset order."""
    grid = np.linspace(lo, hi, n)
    return grid[rng.permutation(n)]


def identity_parameters(spec: SyntheticSpec, seed):
    """Deterministic per-identity walker parameters, pairwise distinct."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    n = spec.identities
    cycles = [c for c in _CYCLE_CHOICES if spec.frames % c == 0] or [spec.frames]
    params = []
    thigh = _levels(rng, 18.0, 32.0, n)
    shin = _levels(rng, 16.0, 28.0, n)
    torso = _levels(rng, 27.0, 45.0, n)
    arm_u = _levels(rng, 12.0, 20.0, n)
    arm_f = _levels(rng, 10.0, 18.0, n)
    leg_amp = _levels(rng, 0.25, 0.60, n)
    arm_amp = _levels(rng, 0.20, 0.55, n)
    knee_amp = _levels(rng, 0.30, 0.80, n)
    thick = _levels(rng, 0.75, 1.35, n)
    for i in range(n):
        params.append({
            "thigh": thigh[i], "shin": shin[i], "torso": torso[i],
            "arm_upper": arm_u[i], "arm_fore": arm_f[i],
            "neck": 7.0 + 4.0 * ((i * 5) % n) / max(1, n - 1),
            "head_r": 5.5 + 3.5 * ((i * 3) % n) / max(1, n - 1),
            "hip_w": 6.0 + 3.0 * ((i * 7) % n) / max(1, n - 1),
            "shoulder_w": 8.0 + 3.0 * ((i * 2 + 1) % n) / max(1, n - 1),
            "leg_amp": leg_amp[i], "arm_amp": arm_amp[i], "knee_amp": knee_amp[i],
            "cycle": int(cycles[i % len(cycles)]),
            "bounce": 1.5,
            "thickness": thick[i],
        })
    return params


def walker_pose(p, u):
    """COCO-17 keypoints [17, 3] of walker p at integer cycle position u."""
    theta = 2.0 * np.pi * (u % p["cycle"]) / p["cycle"]
    cx, cy = CANVAS_W / 2.0, CANVAS_H * 0.62
    cy = cy + p["bounce"] * np.sin(2.0 * theta)

    def polar(origin, length, ang):
        return (origin[0] + length * np.sin(ang), origin[1] + length * np.cos(ang))

    l_hip = (cx - p["hip_w"] / 2.0, cy)
    r_hip = (cx + p["hip_w"] / 2.0, cy)
    a_l = p["leg_amp"] * np.sin(theta)
    a_r = p["leg_amp"] * np.sin(theta + np.pi)
    b_l = p["knee_amp"] * (0.5 + 0.5 * np.sin(theta + 0.9))
    b_r = p["knee_amp"] * (0.5 + 0.5 * np.sin(theta + np.pi + 0.9))
    l_knee = polar(l_hip, p["thigh"], a_l)
    r_knee = polar(r_hip, p["thigh"], a_r)
    l_ank = polar(l_knee, p["shin"], a_l + b_l)
    r_ank = polar(r_knee, p["shin"], a_r + b_r)

    sy = cy - p["torso"]
    l_sho = (cx - p["shoulder_w"] / 2.0, sy)
    r_sho = (cx + p["shoulder_w"] / 2.0, sy)
    c_l = -p["arm_amp"] * np.sin(theta)
    c_r = -p["arm_amp"] * np.sin(theta + np.pi)
    e_l = 0.25 + 0.25 * np.sin(theta + 1.2)
    e_r = 0.25 + 0.25 * np.sin(theta + np.pi + 1.2)
    l_elb = polar(l_sho, p["arm_upper"], c_l)
    r_elb = polar(r_sho, p["arm_upper"], c_r)
    l_wri = polar(l_elb, p["arm_fore"], c_l + e_l)
    r_wri = polar(r_elb, p["arm_fore"], c_r + e_r)

    hy = sy - p["neck"]
    nose = (cx + 0.45 * p["head_r"], hy - 0.3 * p["head_r"])
    l_eye = (cx + 0.25 * p["head_r"], hy - 0.55 * p["head_r"])
    r_eye = (cx + 0.10 * p["head_r"], hy - 0.60 * p["head_r"])
    l_ear = (cx - 0.15 * p["head_r"], hy - 0.35 * p["head_r"])
    r_ear = (cx - 0.30 * p["head_r"], hy - 0.30 * p["head_r"])

    pts = [nose, l_eye, r_eye, l_ear, r_ear, l_sho, r_sho, l_elb, r_elb,
           l_wri, r_wri, l_hip, r_hip, l_knee, r_knee, l_ank, r_ank]
    out = np.ones((17, 3))
    out[:, 0] = [q[0] for q in pts]
    out[:, 1] = [q[1] for q in pts]
    return out


_SEGMENTS = [  # (joint a, joint b, thickness), 0-based COCO indices
    (11, 13, 5.5), (13, 15, 4.5), (12, 14, 5.5), (14, 16, 4.5),  # legs
    (5, 7, 4.0), (7, 9, 3.5), (6, 8, 4.0), (8, 10, 3.5),          # arms
]


def render_silhouette(kps, thickness=1.0):
    """Rasterize a pose into a binary silhouette (thick limbs, torso, head)."""
    ys = np.arange(CANVAS_H, dtype=np.float64)[:, None]
    xs = np.arange(CANVAS_W, dtype=np.float64)[None, :]
    mask = np.zeros((CANVAS_H, CANVAS_W), dtype=bool)
    for a, b, thick in _SEGMENTS:
        d = _segment_distance_grid(xs, ys, kps[a, :2], kps[b, :2])
        mask |= d <= thick * thickness
    hip_mid = (kps[11, :2] + kps[12, :2]) / 2.0
    sho_mid = (kps[5, :2] + kps[6, :2]) / 2.0
    mask |= _segment_distance_grid(xs, ys, hip_mid, sho_mid) <= 8.0 * thickness
    face = kps[:5, :2]
    head_c = face.mean(axis=0)
    head_r = float(np.sqrt(((face - head_c) ** 2).sum(axis=1)).max()) + 4.5
    mask |= _segment_distance_grid(xs, ys, sho_mid, head_c) <= 3.5  # neck
    mask |= np.hypot(xs - head_c[0], ys - head_c[1]) <= head_r
    return mask.astype(np.uint8) * 255


def generate(spec: SyntheticSpec, out_dir, seed=0):
    """Write the synthetic dataset tree; returns a small summary dict.

    Layout: poses/<subject>/<condition>/<view>.jsonl and
    sils/<subject>/<condition>/<view>/frame-NNNN.pgm, with condition labels
    seq-00..seq-NN and a single view 000.
    """
    out_dir = Path(out_dir)
    params = identity_parameters(spec, seed)
    n_pose = n_sil = 0
    meta = {"version": 1, "seed": seed, "spec": {
        "identities": spec.identities, "sequences": spec.sequences,
        "frames": spec.frames, "modality": spec.modality, "noise": spec.noise,
    }, "sequences": []}
    for i in range(spec.identities):
        subject = f"{i + 1:04d}"
        p = params[i]
        for s in range(spec.sequences):
            rng = np.random.default_rng(np.random.SeedSequence([seed, 7000 + i, s]))
            offset = int(rng.integers(0, p["cycle"]))
            condition, view = f"seq-{s:02d}", "000"
            frames = []
            for t in range(spec.frames):
                kps = walker_pose(p, t + offset)
                if spec.noise > 0:
                    jitter = rng.normal(0.0, spec.noise, size=(17, 2))
                    kps[:, :2] += jitter
                    kps[:, 2] = np.clip(1.0 - np.abs(jitter).sum(axis=1) / 10.0, 0.5, 1.0)
                frames.append(kps)
            if spec.modality in ("pose", "both"):
                write_pose_jsonl(out_dir / "poses" / subject / condition / f"{view}.jsonl", frames)
                n_pose += 1
            if spec.modality in ("silhouette", "both"):
                sil_dir = out_dir / "sils" / subject / condition / view
                for t, kps in enumerate(frames):
                    write_pgm(sil_dir / f"frame-{t:04d}.pgm",
                              render_silhouette(kps, p["thickness"]))
                n_sil += 1
            meta["sequences"].append({
                "subject": subject, "condition": condition, "view": view,
                "frames": spec.frames, "phase": offset, "cycle": p["cycle"],
            })
    with open(out_dir / "dataset.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"pose_sequences": n_pose, "silhouette_sequences": n_sil}
