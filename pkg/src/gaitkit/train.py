"""Toy training loop: identity-balanced batches, SGD with milestone decay,
JSONL metrics (including the non-zero triplet count convergence proxy),
milestone checkpoints and bit-exact resume.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import models
from .autodiff import Tensor, no_grad
from .errors import ConfigError, DataError
from .evalkit import EmbeddingSet
from .losses import combined_loss
from .models import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .optim import MilestoneSchedule, ParamSet, sgd_step
from .prep import AugmentConfig, DatasetIndex, SequenceEntry, augment, clip_indices, make_batch
from .tensorio import read_tensor, write_tensor

DTYPE_NAMES = {"f32": np.float32, "f64": np.float64}


# -- run configuration -----------------------------------------------------------

def _check_keys(doc, allowed, where):
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class OptimConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    milestones: tuple = ()
    total_steps: int = 100
    batch_p: int = 4
    batch_k: int = 2
    clip_len: int = 30
    dtype: str = "f32"
    lambda_triplet: float = 1.0
    lambda_ce: float = 1.0
    margin: float = 0.2
    label_smoothing: float = 0.1
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        ms = list(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])) or any(m >= self.total_steps for m in ms):
            raise ConfigError("milestones must be strictly increasing and below total_steps")
        if self.dtype not in DTYPE_NAMES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPE_NAMES)}")
        if min(self.batch_p, self.batch_k, self.clip_len, self.total_steps) < 1:
            raise ConfigError("batch and schedule sizes must be positive")

    @classmethod
    def from_dict(cls, d):
        _check_keys(d, {"lr", "momentum", "weight_decay", "milestones", "total_steps",
                        "batch_p", "batch_k", "clip_len", "dtype", "lambda_triplet",
                        "lambda_ce", "margin", "label_smoothing", "augment"}, "optim")
        d = dict(d)
        aug = d.pop("augment", {})
        _check_keys(aug, {"flip_prob", "max_rotate_deg", "erase_prob"}, "optim.augment")
        return cls(augment=AugmentConfig(**aug), **d)


@dataclass
class RunConfig:
    seed: int
    model: ModelConfig
    optim: OptimConfig
    data: dict
    out: str

    @classmethod
    def from_dict(cls, doc):
        _check_keys(doc, {"version", "seed", "model", "optim", "data", "out"}, "run config")
        if doc.get("version") != 1:
            raise ConfigError(f"unsupported config version {doc.get('version')!r}")
        data = dict(doc.get("data", {}))
        _check_keys(data, {"silhouettes", "skeleton_maps", "train_conditions"}, "data")
        return cls(
            seed=int(doc.get("seed", 0)),
            model=ModelConfig.from_dict(doc.get("model", {})),
            optim=OptimConfig.from_dict(doc.get("optim", {})),
            data=data,
            out=doc.get("out", "runs/out"),
        )

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        with open(path, "r", encoding="utf-8") as fh:
            cfg = cls.from_dict(json.load(fh))
        base = path.parent
        for key in ("silhouettes", "skeleton_maps"):
            if key in cfg.data:
                cfg.data[key] = str((base / cfg.data[key]).resolve())
        cfg.out = str((base / cfg.out).resolve())
        return cfg


# -- dataset indexes ------------------------------------------------------------

def write_index(entries, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"version": 1, "entries": [
        {"subject": e.subject, "condition": e.condition, "view": e.view,
         "path": e.path, "frames": e.frames} for e in entries]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_index(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing index file {path}")
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    entries = [
        SequenceEntry(e["subject"], e["condition"], e["view"],
                      str((path.parent / e["path"]).resolve()), int(e["frames"]))
        for e in doc["entries"]
    ]
    return DatasetIndex(entries)


def _pair_indexes(sil: DatasetIndex, ske: DatasetIndex):
    """Frame-aligned (silhouette, skeleton) pairs keyed by (subject, condition, view)."""
    ske_map = {(e.subject, e.condition, e.view): e for e in ske.entries}
    pairs = []
    for e in sil.entries:
        other = ske_map.get((e.subject, e.condition, e.view))
        if other is None:
            continue
        if other.frames != e.frames:
            continue  # not frame-aligned; unusable for the fused model
        pairs.append((e, other))
    if not pairs:
        raise DataError("no frame-aligned silhouette/skeleton sequence pairs")
    return pairs


class _SequenceCache:
    """Small in-memory cache of per-sequence GT01 tensors."""

    def __init__(self, dtype):
        self.dtype = dtype
        self._store = {}

    def get(self, path):
        arr = self._store.get(path)
        if arr is None:
            arr = read_tensor(path).astype(self.dtype, copy=False)
            self._store[path] = arr
        return arr


# -- training -------------------------------------------------------------------

@dataclass
class TrainResult:
    steps: int
    log: list
    checkpoint: str


def _filter_conditions(index: DatasetIndex, conditions):
    if not conditions:
        return index
    allowed = {str(c) for c in conditions}
    entries = [e for e in index.entries if e.condition in allowed]
    if not entries:
        raise DataError(f"no sequences left for conditions {sorted(allowed)}")
    return DatasetIndex(entries)


class Trainer:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dtype = DTYPE_NAMES[cfg.optim.dtype]
        self.mode = cfg.model.mode
        self.cache = _SequenceCache(self.dtype)
        self._load_data()
        if cfg.model.num_classes != len(self.subjects):
            raise ConfigError(
                f"model num_classes={cfg.model.num_classes} but the training split has "
                f"{len(self.subjects)} subjects")
        self.model = build_model(cfg.model, seed=cfg.seed, dtype=self.dtype)
        self.params = models.param_set(self.model)
        self.schedule = MilestoneSchedule(cfg.optim.lr, cfg.optim.milestones)
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
        self.step = 0
        self.log = []

    def _load_data(self):
        data = self.cfg.data
        conds = data.get("train_conditions")
        need_sil = self.mode in ("deepgaitv2", "skeletongait_pp")
        need_ske = self.mode in ("skeletongait", "skeletongait_pp")
        sil = ske = None
        if need_sil:
            if "silhouettes" not in data:
                raise ConfigError(f"mode {self.mode} needs data.silhouettes")
            sil = _filter_conditions(read_index(data["silhouettes"]), conds)
        if need_ske:
            if "skeleton_maps" not in data:
                raise ConfigError(f"mode {self.mode} needs data.skeleton_maps")
            ske = _filter_conditions(read_index(data["skeleton_maps"]), conds)
        if self.mode == "skeletongait_pp":
            pairs = _pair_indexes(sil, ske)
            self.pair_map = {(e.subject, e.condition, e.view): m for e, m in pairs}
            self.index = DatasetIndex([e for e, _ in pairs])
        else:
            self.index = sil if self.mode == "deepgaitv2" else ske
            self.pair_map = None
        self.subjects = self.index.subjects

    def _clip_pair(self, entry):
        frames = self.cache.get(entry.path)
        idx = clip_indices(frames.shape[0], self.cfg.optim.clip_len, self.rng)
        sil_clip = frames[idx]
        if self.pair_map is None:
            return (sil_clip,)
        mate = self.pair_map[(entry.subject, entry.condition, entry.view)]
        ske_frames = self.cache.get(mate.path)
        return sil_clip, ske_frames[idx]

    def _next_batch(self):
        picks = make_batch(self.index, self.cfg.optim.batch_p, self.cfg.optim.batch_k, self.rng)
        labels = np.asarray([label for _, label in picks])
        streams = [self._clip_pair(entry) for entry, _ in picks]
        aug = self.cfg.optim.augment
        clips = []
        for mod in range(len(streams[0])):
            stack = np.stack([s[mod] for s in streams])
            if aug.flip_prob > 0 or aug.max_rotate_deg > 0 or aug.erase_prob > 0:
                stack = np.stack([augment(c, aug, self.rng) for c in stack])
            clips.append(stack)
        return clips, labels

    def train_step(self):
        clips, labels = self._next_batch()
        lr = self.schedule.lr_at(self.step)
        inputs = tuple(Tensor(c) for c in clips)
        emb = self.model.forward(inputs if len(inputs) > 1 else inputs[0], training=True)
        opt = self.cfg.optim
        total, tri, ce = combined_loss(
            emb.features, emb.logits, labels, margin=opt.margin,
            epsilon=opt.label_smoothing, lambda_triplet=opt.lambda_triplet,
            lambda_ce=opt.lambda_ce)
        self.params.zero_grad()
        total.backward()
        grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for name, p in self.params.items()}
        sgd_step(self.params, grads, lr, momentum=opt.momentum, weight_decay=opt.weight_decay)
        self.step += 1
        row = {
            "step": self.step, "lr": lr, "loss": float(total.data),
            "triplet": float(tri.value.data), "ce": float(ce.data),
            "triplet_nonzero": int(tri.nonzero_count),
        }
        self.log.append(row)
        return row

    # -- persistence ------------------------------------------------------------

    def save(self, path):
        path = Path(path)
        save_checkpoint(self.model, path, extra={"step": self.step})
        (path / "momentum").mkdir(parents=True, exist_ok=True)
        for name, buf in self.params.momentum.items():
            write_tensor(path / "momentum" / f"{name}.gt01", buf)
        state = {
            "step": self.step,
            "rng_state": _encode_rng(self.rng),
            "log_tail": self.log[-1] if self.log else None,
        }
        with open(path / "train_state.json", "w", encoding="utf-8") as fh:
            json.dump(state, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def restore(self, path):
        path = Path(path)
        model, manifest = load_checkpoint(path)
        if manifest["model"] != self.cfg.model.to_dict():
            raise ConfigError("checkpoint model config does not match the run config")
        self.model = model
        self.params = models.param_set(self.model)
        for name in self.params.momentum:
            self.params.momentum[name][...] = read_tensor(path / "momentum" / f"{name}.gt01")
        with open(path / "train_state.json", "r", encoding="utf-8") as fh:
            state = json.load(fh)
        self.step = int(state["step"])
        self.rng = _decode_rng(state["rng_state"])

    def run(self, out_dir=None, log_every=1):
        out_dir = Path(out_dir if out_dir is not None else self.cfg.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.jsonl"
        mode = "a" if self.step > 0 else "w"
        with open(metrics_path, mode, encoding="utf-8") as fh:
            while self.step < self.cfg.optim.total_steps:
                row = self.train_step()
                if row["step"] % log_every == 0 or row["step"] == self.cfg.optim.total_steps:
                    fh.write(json.dumps(row, sort_keys=True) + "\n")
                if row["step"] in self.cfg.optim.milestones:
                    self.save(out_dir / f"ckpt-step-{row['step']:06d}")
        final = out_dir / "ckpt-final"
        self.save(final)
        return TrainResult(self.step, self.log, str(final))


def _encode_rng(rng):
    state = rng.bit_generator.state
    return json.loads(json.dumps(state, default=int))


def _decode_rng(state):
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


# -- embedding extraction ----------------------------------------------------------

def embed_sequences(model, index: DatasetIndex, pair_index: DatasetIndex = None,
                    dtype=np.float32):
    """Whole-sequence inference; returns the post-neck retrieval embeddings."""
    cache = _SequenceCache(dtype)
    subs, views, conds, ids, embs = [], [], [], [], []
    pair_map = None
    if pair_index is not None:
        pairs = _pair_indexes(index, pair_index)
        pair_map = {(e.subject, e.condition, e.view): m for e, m in pairs}
        entries = [e for e, _ in pairs]
    else:
        entries = index.entries
    for e in entries:
        frames = cache.get(e.path)
        x = frames[None, ...]
        if pair_map is not None:
            mate = pair_map[(e.subject, e.condition, e.view)]
            inputs = (x, cache.get(mate.path)[None, ...])
        else:
            inputs = x
        with no_grad():
            out = model.forward(inputs, training=False)
        subs.append(e.subject)
        views.append(e.view)
        conds.append(e.condition)
        ids.append(f"{e.subject}/{e.condition}/{e.view}")
        embs.append(np.asarray(out.embeddings.data[0], dtype=np.float64))
    return EmbeddingSet(
        subjects=np.asarray(subs), views=np.asarray(views),
        conditions=np.asarray(conds), seq_ids=np.asarray(ids),
        embeddings=np.stack(embs),
    )
