"""Central finite-difference verification of every differentiable primitive.

Each case builds a scalar probe ``L = sum(V * op(inputs))`` with a fixed
random projection V, computes analytic input gradients through the tape,
and compares them against central differences (f64, step 1e-5).  Kinked
ops (relu, max, triplet hinge) are sampled away from their kinks.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import losses
from .autodiff import Tensor

FD_STEP = 1e-5
REL_TOL = 1e-4


def _rel_err(analytic, numeric):
    denom = max(abs(analytic), abs(numeric), 1e-3)
    return abs(analytic - numeric) / denom


def fd_check(fn, arrays, step=FD_STEP):
    """Max relative error between tape gradients of fn(*tensors) and central FD.

    ``fn`` maps Tensors to a scalar Tensor; ``arrays`` are f64 ndarrays.
    """
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    out.backward()
    grads = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def eval_at(mod_arrays):
        with ad.no_grad():
            return fn(*[Tensor(a) for a in mod_arrays]).item()

    worst = 0.0
    for k, a in enumerate(arrays):
        work = [arr.copy() for arr in arrays]
        flat = work[k].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = eval_at(work)
            flat[idx] = orig - step
            down = eval_at(work)
            flat[idx] = orig
            numeric = (up - down) / (2 * step)
            worst = max(worst, _rel_err(float(grads[k].reshape(-1)[idx]), numeric))
    return worst


def _proj(rng, shape, dtype):
    # one projection per case; regenerated each call site via rng
    return rng.uniform(-1.0, 1.0, size=shape).astype(dtype)


def _away_from(values, threshold=1e-3):
    """True when no entry of |values| is within threshold of zero."""
    return bool((np.abs(values) > threshold).all())


def _sample_distinct(rng, shape, axis, gap=1e-3):
    """Random tensor whose top-2 values per slice along axis differ by > gap."""
    while True:
        x = rng.uniform(-5, 5, size=shape)
        s = np.sort(x, axis=axis)
        if shape[axis] < 2 or ((s.take(-1, axis=axis) - s.take(-2, axis=axis)) > gap).all():
            return x


def check_primitive(name, rng, cases=200):
    """Run `cases` random FD checks for one primitive; return the worst error."""
    worst = 0.0
    for _ in range(cases):
        worst = max(worst, _one_case(name, rng))
    return worst


def _one_case(name, rng):
    if name == "add":
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        return fd_check(_wrap(ad.add, rng), [a, b])
    if name == "sub":
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        return fd_check(_wrap(ad.sub, rng), [a, b])
    if name == "mul":
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        return fd_check(_wrap(ad.mul, rng), [a, b])
    if name == "relu":
        x = rng.uniform(-2, 2, size=(4, 5))
        x = np.where(np.abs(x) < 2e-3, x + np.sign(x) * 5e-3 + 1e-3, x)
        return fd_check(_wrap(ad.relu, rng), [x])
    if name == "linear":
        x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((2, 4)), rng.standard_normal(2)
        return fd_check(_wrap(lambda x_, w_, b_: ad.linear(x_, w_, b_), rng), [x, w, b])
    if name == "matmul":
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
        return fd_check(_wrap(ad.matmul, rng), [a, b])
    if name == "softmax":
        x = rng.uniform(-3, 3, size=(3, 5))
        return fd_check(_wrap(lambda t: ad.softmax(t, axis=1), rng), [x])
    if name == "reduce_mean":
        x = rng.standard_normal((3, 4, 2))
        ax = int(rng.integers(0, 3))
        return fd_check(_wrap(lambda t: ad.reduce_mean(t, axis=ax), rng), [x])
    if name == "reduce_sum":
        x = rng.standard_normal((3, 4))
        return fd_check(_wrap(lambda t: ad.reduce_sum(t, axis=1), rng), [x])
    if name == "reduce_max":
        x = _sample_distinct(rng, (3, 5, 2), axis=1)
        return fd_check(_wrap(lambda t: ad.reduce_max(t, axis=1), rng), [x])
    if name == "reshape":
        x = rng.standard_normal((3, 4))
        return fd_check(_wrap(lambda t: ad.reshape(t, (2, 6)), rng), [x])
    if name == "transpose":
        x = rng.standard_normal((2, 3, 4))
        return fd_check(_wrap(lambda t: ad.transpose(t, (2, 0, 1)), rng), [x])
    if name == "concat":
        a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 2))
        return fd_check(_wrap(lambda x_, y_: ad.concat([x_, y_], axis=1), rng), [a, b])
    if name == "slice":
        x = rng.standard_normal((3, 6))
        return fd_check(_wrap(lambda t: ad.slice_axis(t, 1, 1, 4), rng), [x])
    if name == "conv2d":
        x = rng.standard_normal((2, 2, 5, 4))
        w = rng.standard_normal((3, 2, 3, 2))
        b = rng.standard_normal(3)
        return fd_check(
            _wrap(lambda x_, w_, b_: ad.conv2d(x_, w_, b_, stride=(2, 1), pad=(1, 1)), rng), [x, w, b]
        )
    if name == "conv3d":
        x = rng.standard_normal((1, 2, 3, 4, 3))
        w = rng.standard_normal((2, 2, 2, 2, 2))
        b = rng.standard_normal(2)
        return fd_check(
            _wrap(lambda x_, w_, b_: ad.conv3d(x_, w_, b_, stride=(1, 2, 1), pad=(1, 0, 1)), rng), [x, w, b]
        )
    if name == "batch_norm_train":
        x = rng.standard_normal((4, 3, 2, 2))
        gamma = rng.uniform(0.5, 1.5, size=3)
        beta = rng.standard_normal(3)

        def op(x_, g_, b_):
            rm, rv = np.zeros(3), np.ones(3)
            return ad.batch_norm(x_, g_, b_, rm, rv, training=True)

        return fd_check(_wrap(op, rng), [x, gamma, beta])
    if name == "batch_norm_eval":
        x = rng.standard_normal((4, 3, 2))
        gamma = rng.uniform(0.5, 1.5, size=3)
        beta = rng.standard_normal(3)
        rm = rng.standard_normal(3)
        rv = rng.uniform(0.5, 2.0, size=3)

        def op(x_, g_, b_):
            return ad.batch_norm(x_, g_, b_, rm.copy(), rv.copy(), training=False)

        return fd_check(_wrap(op, rng), [x, gamma, beta])
    if name == "triplet_loss":
        labels = np.array([0, 0, 1, 1, 2, 2])
        while True:
            e = rng.standard_normal((6, 2, 3))
            lv = losses.triplet_loss(Tensor(e), labels, margin=0.2)
            terms = _triplet_terms(e, labels, 0.2)
            if _away_from(terms) and lv.nonzero_count > 0:
                break
        return fd_check(lambda t: losses.triplet_loss(t, labels, margin=0.2).value, [e])
    if name == "smoothed_ce":
        labels = np.array([0, 2, 1, 3])
        p = rng.uniform(0.05, 0.95, size=(4, 2, 4))
        return fd_check(lambda t: losses.smoothed_ce(t, labels, epsilon=0.1), [p])
    if name == "smoothed_ce_logits":
        labels = np.array([1, 0, 2])
        z = rng.uniform(-2, 2, size=(3, 2, 3))
        return fd_check(
            lambda t: losses.smoothed_ce(ad.softmax(t, axis=2), labels, epsilon=0.1), [z]
        )
    raise KeyError(f"unknown primitive {name!r}")


def _triplet_terms(e, labels, margin):
    """All hinge arguments d_pos - d_neg + margin, every part, for kink screening."""
    out = []
    n, parts, _ = e.shape
    for p in range(parts):
        d = np.sqrt(((e[:, p, None, :] - e[None, :, p, :].reshape(1, n, -1)) ** 2).sum(-1))
        pos, neg = [], []
        for i in range(n):
            for j in range(i + 1, n):
                (pos if labels[i] == labels[j] else neg).append(d[i, j])
        for dp in pos:
            for dn in neg:
                out.append(dp - dn + margin)
        # also keep distances away from the sqrt kink at zero
        out.extend(x for x in pos + neg)
    return np.asarray(out)


def _wrap(op, rng):
    proj = {}  # drawn once per case so every FD evaluation probes the same scalar

    def build(*tensors):
        out = op(*tensors)
        if "v" not in proj:
            proj["v"] = Tensor(_proj(rng, out.shape, out.data.dtype))
        return ad.reduce_sum(ad.mul(out, proj["v"]))

    return build


PRIMITIVES = [
    "add", "sub", "mul", "relu", "linear", "matmul", "softmax",
    "reduce_mean", "reduce_sum", "reduce_max", "reshape", "transpose",
    "concat", "slice", "conv2d", "conv3d", "batch_norm_train",
    "batch_norm_eval", "triplet_loss", "smoothed_ce", "smoothed_ce_logits",
]


def _corrupted(op_fn):
    """An op variant whose backward rule is wrong by 1% (self-test hook)."""

    def bad(*args, **kwargs):
        out = op_fn(*args, **kwargs)
        orig = out._backward
        if orig is not None:
            out._backward = lambda g: orig(g * 1.01)
        return out

    return bad


def run_suite(seed=0, cases=200, loss_cases=100, report=None, perturb=None):
    """Run the whole FD suite; returns {op: max relative error}.

    ``perturb`` (testing hook) names an autodiff op whose backward rule is
    deliberately corrupted for the run, to prove the suite catches a wrong
    gradient.
    """
    saved = None
    if perturb is not None:
        if not hasattr(ad, perturb):
            raise KeyError(f"cannot perturb unknown op {perturb!r}")
        saved = getattr(ad, perturb)
        setattr(ad, perturb, _corrupted(saved))
    try:
        results = {}
        for name in PRIMITIVES:
            seq = np.random.SeedSequence([seed, PRIMITIVES.index(name)])
            rng = np.random.default_rng(seq)
            n = loss_cases if name.startswith(("triplet", "smoothed")) else cases
            err = check_primitive(name, rng, cases=n)
            results[name] = err
            if report is not None:
                status = "ok" if err <= REL_TOL else "FAIL"
                report(f"{name:<20s} max rel err {err:.3e}  [{status}]")
        return results
    finally:
        if saved is not None:
            setattr(ad, perturb, saved)
