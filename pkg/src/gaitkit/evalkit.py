"""Probe/gallery retrieval evaluation.

Distances are means over per-part Euclidean distances.  Ranking metrics are
rank-k, mAP and mINP, plus per-condition breakdowns and a view-by-view
rank-1 matrix.  Ties break by stable gallery order; exclusion masks remove
probe/gallery pairs (self-match, optionally same view) from ranking.
Probes left with no possible match are excluded from the mAP/mINP means and
reported separately.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DataError

RANKS = (1, 5, 10, 20)


@dataclass
class EmbeddingSet:
    """Per-sequence retrieval embeddings with their labels."""

    subjects: np.ndarray   # [n] str or int labels
    views: np.ndarray      # [n]
    conditions: np.ndarray # [n]
    seq_ids: np.ndarray    # [n] unique sequence identifiers
    embeddings: np.ndarray # [n, parts, d]

    def __post_init__(self):
        n = len(self.subjects)
        for name in ("views", "conditions", "seq_ids"):
            if len(getattr(self, name)) != n:
                raise ContractError(f"{name} length != {n}")
        if self.embeddings.ndim != 3 or self.embeddings.shape[0] != n:
            raise ContractError(f"embeddings must be [n, parts, d], got {self.embeddings.shape}")

    def __len__(self):
        return len(self.subjects)


def pairwise_distance(a, b):
    """Mean over parts of the per-part Euclidean distance between two [parts, d] embeddings."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum(axis=1)).mean())


def distance_matrix(probe_embs, gallery_embs):
    """[np_, parts, d] x [ng, parts, d] -> [np_, ng] part-averaged distances."""
    p = np.asarray(probe_embs, dtype=np.float64)
    g = np.asarray(gallery_embs, dtype=np.float64)
    if p.shape[1:] != g.shape[1:]:
        raise ContractError(f"embedding shapes differ: {p.shape[1:]} vs {g.shape[1:]}")
    parts = p.shape[1]
    out = np.zeros((p.shape[0], g.shape[0]))
    for k in range(parts):
        pk, gk = p[:, k, :], g[:, k, :]
        sq = (pk ** 2).sum(1)[:, None] - 2.0 * (pk @ gk.T) + (gk ** 2).sum(1)[None, :]
        out += np.sqrt(np.maximum(sq, 0.0))
    return out / parts


def _ranked_matches(distances, probe_labels, gallery_labels, exclusions):
    """Per probe: boolean match vector over its admitted gallery, in rank order."""
    distances = np.asarray(distances, dtype=np.float64)
    n_probe, n_gallery = distances.shape
    if exclusions is None:
        exclusions = np.zeros((n_probe, n_gallery), dtype=bool)
    rows = []
    for i in range(n_probe):
        keep = ~exclusions[i]
        order = np.argsort(distances[i][keep], kind="stable")
        rows.append(np.asarray(gallery_labels)[keep][order] == np.asarray(probe_labels)[i])
    return rows


def rank_k(distances, probe_labels, gallery_labels, exclusions=None, k=1):
    """Fraction of probes with a matching subject among the k nearest admitted entries."""
    rows = _ranked_matches(distances, probe_labels, gallery_labels, exclusions)
    rows = [r for r in rows if r.size > 0]
    if not rows:
        raise DataError("no probes have admissible gallery entries")
    hits = sum(1 for r in rows if r[:k].any())
    return hits / len(rows)


def mean_ap(distances, probe_labels, gallery_labels, exclusions=None):
    """Mean average precision over probes that have at least one match."""
    rows = _ranked_matches(distances, probe_labels, gallery_labels, exclusions)
    aps = []
    unmatched = 0
    for r in rows:
        total = int(r.sum())
        if total == 0:
            unmatched += 1
            continue
        ranks = np.nonzero(r)[0] + 1
        precisions = np.arange(1, total + 1) / ranks
        aps.append(precisions.mean())
    if not aps:
        raise DataError("no probe has a gallery match")
    return float(np.mean(aps)), unmatched


def m_inp(distances, probe_labels, gallery_labels, exclusions=None):
    """Mean inverse negative penalty: matches over the rank of the hardest match."""
    rows = _ranked_matches(distances, probe_labels, gallery_labels, exclusions)
    inps = []
    unmatched = 0
    for r in rows:
        total = int(r.sum())
        if total == 0:
            unmatched += 1
            continue
        hardest = int(np.nonzero(r)[0][-1]) + 1
        inps.append(total / hardest)
    if not inps:
        raise DataError("no probe has a gallery match")
    return float(np.mean(inps)), unmatched


def cross_view_matrix(emb_set: EmbeddingSet, views=None, exclude_same_seq=True):
    """Rank-1 for every (probe view, gallery view) pair; None where undefined."""
    if views is None:
        views = sorted({str(v) for v in emb_set.views})
    v = len(views)
    out = [[None] * v for _ in range(v)]
    all_views = np.asarray([str(x) for x in emb_set.views])
    for i, pv in enumerate(views):
        p_idx = np.nonzero(all_views == pv)[0]
        if p_idx.size == 0:
            continue
        for j, gv in enumerate(views):
            g_idx = np.nonzero(all_views == gv)[0]
            if g_idx.size == 0:
                continue
            dist = distance_matrix(emb_set.embeddings[p_idx], emb_set.embeddings[g_idx])
            excl = np.zeros(dist.shape, dtype=bool)
            if exclude_same_seq:
                excl = emb_set.seq_ids[p_idx][:, None] == emb_set.seq_ids[g_idx][None, :]
            keepable = (~excl).any(axis=1)
            if not keepable.any():
                continue
            out[i][j] = rank_k(dist[keepable], emb_set.subjects[p_idx][keepable],
                               emb_set.subjects[g_idx], excl[keepable], k=1)
    return views, out


@dataclass
class EvalProtocol:
    """Probe/gallery predicates plus pair-exclusion rules.

    Predicates are {"field": [allowed values]} conjunctions over subject,
    view, condition and seq_id; an empty predicate admits everything.
    """

    gallery: dict = field(default_factory=dict)
    probe: dict = field(default_factory=dict)
    exclude_same_seq: bool = True
    exclude_same_view: bool = False
    view_matrix: bool = False

    _FIELDS = ("subject", "view", "condition", "seq_id")

    @classmethod
    def from_dict(cls, d):
        allowed = {"gallery", "probe", "exclude_same_seq", "exclude_same_view", "view_matrix"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown protocol keys: {sorted(unknown)}")
        proto = cls(**{k: d[k] for k in d})
        for pred in (proto.gallery, proto.probe):
            bad = set(pred) - set(cls._FIELDS)
            if bad:
                raise ConfigError(f"unknown predicate fields: {sorted(bad)}")
        return proto

    def _select(self, emb_set, pred):
        mask = np.ones(len(emb_set), dtype=bool)
        arrays = {"subject": emb_set.subjects, "view": emb_set.views,
                  "condition": emb_set.conditions, "seq_id": emb_set.seq_ids}
        for fieldname, allowed in pred.items():
            allowed = {str(a) for a in (allowed if isinstance(allowed, (list, tuple)) else [allowed])}
            mask &= np.asarray([str(v) in allowed for v in arrays[fieldname]])
        return np.nonzero(mask)[0]


@dataclass
class EvalReport:
    rank: dict          # {k: accuracy}
    map: float
    minp: float
    view_names: list | None
    view_matrix: list | None
    conditions: dict
    unmatched_probes: int

    def to_dict(self):
        return {
            "rank1": self.rank[1], "rank5": self.rank[5],
            "rank10": self.rank[10], "rank20": self.rank[20],
            "map": self.map, "minp": self.minp,
            "view_matrix": ({"views": self.view_names, "rank1": self.view_matrix}
                            if self.view_matrix is not None else None),
            "conditions": self.conditions,
            "unmatched_probes": self.unmatched_probes,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        vm = d.get("view_matrix")
        return cls(
            rank={1: d["rank1"], 5: d["rank5"], 10: d["rank10"], 20: d["rank20"]},
            map=d["map"], minp=d["minp"],
            view_names=vm["views"] if vm else None,
            view_matrix=vm["rank1"] if vm else None,
            conditions=d["conditions"],
            unmatched_probes=d["unmatched_probes"],
        )


def evaluate(protocol: EvalProtocol, gallery_set: EmbeddingSet, probe_set: EmbeddingSet = None):
    """Assemble all metrics for one probe/gallery run (deterministic)."""
    if probe_set is None:
        g_idx = protocol._select(gallery_set, protocol.gallery)
        p_idx = protocol._select(gallery_set, protocol.probe)
        probe_set = _subset(gallery_set, p_idx)
        gallery_set = _subset(gallery_set, g_idx)
    else:
        gallery_set = _subset(gallery_set, protocol._select(gallery_set, protocol.gallery))
        probe_set = _subset(probe_set, protocol._select(probe_set, protocol.probe))
    if len(gallery_set) == 0 or len(probe_set) == 0:
        raise DataError("probe or gallery set is empty after filtering")

    dist = distance_matrix(probe_set.embeddings, gallery_set.embeddings)
    excl = probe_set.seq_ids[:, None] == gallery_set.seq_ids[None, :] if protocol.exclude_same_seq \
        else np.zeros(dist.shape, dtype=bool)
    if protocol.exclude_same_view:
        excl = excl | (
            (probe_set.views[:, None] == gallery_set.views[None, :])
            & (probe_set.subjects[:, None] == gallery_set.subjects[None, :])
        )

    ranks = {k: rank_k(dist, probe_set.subjects, gallery_set.subjects, excl, k=k) for k in RANKS}
    ap, unmatched = mean_ap(dist, probe_set.subjects, gallery_set.subjects, excl)
    inp, _ = m_inp(dist, probe_set.subjects, gallery_set.subjects, excl)

    conditions = {}
    for cond in sorted({str(c) for c in probe_set.conditions}):
        rows = np.asarray([str(c) for c in probe_set.conditions]) == cond
        conditions[cond] = {
            "rank1": rank_k(dist[rows], probe_set.subjects[rows], gallery_set.subjects,
                            excl[rows], k=1),
            "probes": int(rows.sum()),
        }

    view_names = view_grid = None
    if protocol.view_matrix:
        merged = _merge(gallery_set, probe_set)
        view_names, view_grid = cross_view_matrix(
            merged, exclude_same_seq=protocol.exclude_same_seq)

    return EvalReport(rank=ranks, map=ap, minp=inp, view_names=view_names,
                      view_matrix=view_grid, conditions=conditions, unmatched_probes=unmatched)


def _subset(emb_set, idx):
    return EmbeddingSet(
        subjects=emb_set.subjects[idx], views=emb_set.views[idx],
        conditions=emb_set.conditions[idx], seq_ids=emb_set.seq_ids[idx],
        embeddings=emb_set.embeddings[idx],
    )


def _merge(a, b):
    return EmbeddingSet(
        subjects=np.concatenate([a.subjects, b.subjects]),
        views=np.concatenate([a.views, b.views]),
        conditions=np.concatenate([a.conditions, b.conditions]),
        seq_ids=np.concatenate([a.seq_ids, b.seq_ids]),
        embeddings=np.concatenate([a.embeddings, b.embeddings]),
    )


# -- embedding directories -----------------------------------------------------

def save_embedding_set(emb_set: EmbeddingSet, path):
    """One GT01 per sequence plus a labels manifest."""
    from .tensorio import write_tensor

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(len(emb_set)):
        fname = f"emb-{i:05d}.gt01"
        write_tensor(path / fname, emb_set.embeddings[i])
        entries.append({
            "subject": str(emb_set.subjects[i]), "view": str(emb_set.views[i]),
            "condition": str(emb_set.conditions[i]), "seq_id": str(emb_set.seq_ids[i]),
            "file": fname,
        })
    with open(path / "embeddings.json", "w", encoding="utf-8") as fh:
        json.dump({"version": 1, "entries": entries}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_embedding_set(path):
    from .tensorio import read_tensor

    path = Path(path)
    manifest = path / "embeddings.json"
    if not manifest.exists():
        raise DataError(f"{path}: missing embeddings.json")
    with open(manifest, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    entries = doc["entries"]
    if not entries:
        raise DataError(f"{path}: empty embedding set")
    embs = np.stack([read_tensor(path / e["file"]) for e in entries])
    return EmbeddingSet(
        subjects=np.asarray([e["subject"] for e in entries]),
        views=np.asarray([e["view"] for e in entries]),
        conditions=np.asarray([e["condition"] for e in entries]),
        seq_ids=np.asarray([e["seq_id"] for e in entries]),
        embeddings=embs,
    )
