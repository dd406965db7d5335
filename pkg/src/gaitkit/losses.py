"""Metric-learning objectives: batch-all triplet loss and smoothed one-vs-rest
cross-entropy, both computed per horizontal part and averaged.

Each loss is a single tape node with an analytic backward rule; both are
covered by the central-finite-difference suite in the gradient checker.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _accum, _node, softmax
from .errors import ContractError, DataError

LOG_FLOOR = 1e-12


@dataclass
class LossValue:
    """A nonnegative loss plus the number of active (non-zero) triplet terms."""

    value: Tensor
    nonzero_count: int


def _part_view(x):
    """Accept [N, d] or [N, parts, d]; return [N, parts, d]."""
    if x.ndim == 2:
        return x[:, None, :]
    if x.ndim == 3:
        return x
    raise ContractError(f"expected [N, d] or [N, parts, d] embeddings, got shape {x.shape}")


def _pair_indices(labels):
    labels = np.asarray(labels)
    n = labels.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    pos = (iu[same], ju[same])
    neg = (iu[~same], ju[~same])
    return pos, neg


def triplet_loss(embeddings, labels, margin=0.2):
    """Batch-all triplet loss over every (positive-pair, negative-pair) combination.

    Per part: sum of relu(d_pos - d_neg + margin) over all combinations,
    divided by the count of strictly positive terms (0 when none fire);
    part losses are averaged.  Distances are Euclidean norms of embedding
    differences.

    Returns a LossValue whose ``nonzero_count`` is summed over parts; it is
    the usual convergence proxy for this objective.
    """
    labels = np.asarray(labels)
    E = _part_view(embeddings.data)
    n, parts, _ = E.shape
    if labels.shape != (n,):
        raise ContractError(f"labels shape {labels.shape} does not match batch size {n}")
    (pi, pj), (ni, nj) = _pair_indices(labels)
    if ni.size == 0:
        raise DataError("no negative pairs: batch contains a single identity")

    dt = E.dtype
    m = dt.type(margin)
    total = dt.type(0)
    nonzero_total = 0
    # per-part pair weights, accumulated for the backward pass
    coeff = np.zeros((parts, n, n), dtype=dt)
    dists = np.zeros((parts, n, n), dtype=dt)
    for p in range(parts):
        Ep = E[:, p, :]
        sq = (Ep * Ep).sum(axis=1)
        D2 = sq[:, None] - 2.0 * (Ep @ Ep.T) + sq[None, :]
        np.maximum(D2, 0, out=D2)
        D = np.sqrt(D2)
        dists[p] = D
        dp = D[pi, pj]
        dn = D[ni, nj]
        if dp.size == 0:
            continue
        terms = dp[:, None] - dn[None, :] + m
        active = terms > 0
        cnt = int(active.sum())
        nonzero_total += cnt
        if cnt == 0:
            continue
        total += terms[active].sum() / cnt
        # d(loss_p)/d(d_pos_k) = row_count/cnt, d/d(d_neg_l) = -col_count/cnt
        wpos = active.sum(axis=1).astype(dt) / cnt
        wneg = -active.sum(axis=0).astype(dt) / cnt
        np.add.at(coeff[p], (pi, pj), wpos)
        np.add.at(coeff[p], (ni, nj), wneg)

    value = np.asarray(total / parts, dtype=dt).reshape(())

    def bw(g):
        if not embeddings.requires_grad:
            return
        scale = float(g.reshape(())) / parts
        dE = np.zeros_like(E)
        for p in range(parts):
            W = np.where(dists[p] > 1e-12, coeff[p] / np.maximum(dists[p], 1e-12), 0.0)
            W = W + W.T  # pair (a,b) pulls both endpoints
            Ep = E[:, p, :]
            dE[:, p, :] = scale * (W.sum(axis=1)[:, None] * Ep - W @ Ep)
        _accum(embeddings, dE.reshape(embeddings.data.shape))

    return LossValue(_node(value, (embeddings,), bw, "triplet_loss"), nonzero_total)


def smoothed_ce(probabilities, labels, epsilon=0.1, conventional=False):
    """Cross-entropy on class probabilities with label smoothing.

    Default form evaluates every class one-vs-rest: the target assigns
    ``1-eps+eps/Y`` to the true class and ``eps/Y`` elsewhere, and each class
    contributes ``t*log(p) + (1-t)*log(1-p)``, averaged over classes, parts
    and batch.  ``conventional=True`` switches to the standard smoothed
    cross-entropy ``-sum_y t_y log p_y`` averaged over parts and batch.
    Logs are clamped at 1e-12.
    """
    P = _part_view(probabilities.data)
    n, parts, y = P.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ContractError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.min() < 0 or labels.max() >= y:
        raise DataError(f"labels must lie in [0, {y})")

    dt = P.dtype
    onehot = np.zeros((n, y), dtype=dt)
    onehot[np.arange(n), labels] = 1
    t = (1.0 - epsilon) * onehot + epsilon / y
    t = t[:, None, :]  # broadcast over parts

    pc = np.clip(P, LOG_FLOOR, None)
    if conventional:
        value = -(t * np.log(pc)).sum() / (n * parts)
    else:
        qc = np.clip(1.0 - P, LOG_FLOOR, None)
        value = -(t * np.log(pc) + (1.0 - t) * np.log(qc)).sum() / (n * parts * y)
    value = np.asarray(value, dtype=dt).reshape(())

    def bw(g):
        if not probabilities.requires_grad:
            return
        scale = float(g.reshape(()))
        if conventional:
            dP = -scale * np.where(P > LOG_FLOOR, t / pc, 0.0) / (n * parts)
        else:
            dpos = np.where(P > LOG_FLOOR, t / pc, 0.0)
            dneg = np.where(1.0 - P > LOG_FLOOR, (1.0 - t) / qc, 0.0)
            dP = -scale * (dpos - dneg) / (n * parts * y)
        _accum(probabilities, dP.reshape(probabilities.data.shape))

    return _node(value, (probabilities,), bw, "smoothed_ce")


def combined_loss(embeddings, logits, labels, margin=0.2, epsilon=0.1,
                  lambda_triplet=1.0, lambda_ce=1.0, conventional_ce=False):
    """lambda_tri * triplet(embeddings) + lambda_ce * smoothed_ce(softmax(logits)).

    Returns (scalar Tensor, LossValue of the triplet term, ce Tensor).
    """
    tri = triplet_loss(embeddings, labels, margin=margin)
    probs = softmax(logits, axis=logits.data.ndim - 1)
    ce = smoothed_ce(probs, labels, epsilon=epsilon, conventional=conventional_ce)
    total = tri.value * lambda_triplet + ce * lambda_ce
    return total, tri, ce
