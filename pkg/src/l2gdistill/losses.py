"""Training objectives and their gradients w.r.t. the student embeddings.

All batch losses are means over the B queries of the batch, and every
returned gradient is d(loss)/d(queries) with shape (B, D).  Hardest-example
selections are constants within a call: the argmin/argmax choice itself
receives no gradient.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NoClustersError, SamplerContractViolation
from .numerics import log_softmax, softmax

log = logging.getLogger(__name__)


@dataclass
class BatchContext:
    queries: np.ndarray          # student embeddings of the strong views, (B, D)
    teacher: np.ndarray          # teacher embeddings of the weak views, (B, D)
    labels: np.ndarray           # pseudo-labels, (B,)
    indices: np.ndarray          # memory slots, (B,)


@dataclass
class LossBundle:
    value: float
    grad: np.ndarray
    terms: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def __add__(self, other):
        return LossBundle(self.value + other.value, self.grad + other.grad,
                          {**self.terms, **other.terms}, {**self.flags, **other.flags})

    def scaled(self, w):
        return LossBundle(w * self.value, w * self.grad, dict(self.terms), dict(self.flags))


def _contrast(q, cands, tau):
    """-log softmax at candidate 0 and its gradient in q (candidates fixed)."""
    logits = cands @ q
    logp = log_softmax(logits, tau)
    p = np.exp(logp)
    p[0] -= 1.0
    return -logp[0], (p @ cands) / tau


def global_memory_loss(ctx, bank, tau, mining=True):
    """Contrast each query against the memory bank.

    Candidates for a clustered query: one hardest positive from its own
    cluster, the hardest negative of every other cluster, and every outlier
    slot.  For an outlier query the positive is its own slot and every
    cluster contributes a hardest negative.  With ``mining=False`` cluster
    candidates are unit centroids instead of mined members.
    """
    q = np.asarray(ctx.queries, dtype=np.float64)
    b = q.shape[0]
    k = bank.num_clusters
    feats = bank.features
    outl = bank.outlier_indices
    grad = np.zeros_like(q)
    total = 0.0
    degenerate = 0
    if k:
        sim = q @ feats.T
        hard_neg = np.empty((b, k), dtype=np.int64)
        hard_pos = np.empty((b, k), dtype=np.int64)
        for c, idx in enumerate(bank.cluster_members):
            hard_neg[:, c] = idx[np.argmax(sim[:, idx], axis=1)]
            hard_pos[:, c] = idx[np.argmin(sim[:, idx], axis=1)]
        if not mining:
            centroids = bank.compute_centroids().unit
    for i in range(b):
        y = int(ctx.labels[i])
        slot = int(ctx.indices[i])
        clusters = [c for c in range(k) if c != y]
        if y < k:
            pos = feats[hard_pos[i, y]] if mining else centroids[y]
            others = outl
        else:
            pos = feats[slot]
            others = outl[outl != slot]
        if mining:
            neg = feats[hard_neg[i, clusters]] if clusters else np.empty((0, q.shape[1]))
        else:
            neg = centroids[clusters] if clusters else np.empty((0, q.shape[1]))
        cands = np.vstack([pos[None, :], neg, feats[others]])
        if len(cands) == 1:
            degenerate += 1
            continue
        li, gi = _contrast(q[i], cands, tau)
        total += li
        grad[i] = gi
    return LossBundle(total / b, grad / b, {"global": total / b}, {"degenerate_global": degenerate})


def local_batch_loss(ctx, tau):
    """In-batch contrast with the hardest same-label positive and all
    different-label negatives; gradients reach every live embedding involved."""
    q = np.asarray(ctx.queries, dtype=np.float64)
    labels = np.asarray(ctx.labels)
    b = q.shape[0]
    sim = q @ q.T
    grad = np.zeros_like(q)
    total = 0.0
    for i in range(b):
        same = np.flatnonzero(labels == labels[i])
        same = same[same != i]
        if same.size == 0:
            raise SamplerContractViolation(
                f"query {i} (label {labels[i]}) has no same-label partner in the batch")
        neg = np.flatnonzero(labels != labels[i])
        if neg.size == 0:
            continue
        pos = same[np.argmin(sim[i, same])]
        cand = np.concatenate([[pos], neg])
        logp = log_softmax(sim[i, cand], tau)
        total -= logp[0]
        w = np.exp(logp)
        w[0] -= 1.0
        w /= tau
        grad[i] += w @ q[cand]
        np.add.at(grad, cand, w[:, None] * q[i])
    return LossBundle(total / b, grad / b, {"local": total / b})


def l2g_loss(ctx, bank, tau, mining=True, local=True):
    out = global_memory_loss(ctx, bank, tau, mining=mining)
    if local:
        out = out + local_batch_loss(ctx, tau)
    return out


def class_probabilities(embedding, centroids, tau):
    """Softmax over ``<q, c_k> / tau`` for unit centroids ``c_k``; rows sum to 1."""
    centroids = np.atleast_2d(centroids)
    if centroids.shape[0] == 0:
        raise NoClustersError("class probabilities need at least one centroid")
    return softmax(np.asarray(embedding) @ centroids.T, tau)


def distillation_loss(student_prob, teacher_prob):
    """Squared distance between probability rows, summed over classes and
    averaged over rows.  ``grad`` is with respect to ``student_prob``."""
    ps = np.atleast_2d(student_prob)
    pt = np.atleast_2d(teacher_prob)
    if ps.shape != pt.shape:
        raise DimensionError(f"probability shapes differ: {ps.shape} vs {pt.shape}")
    diff = ps - pt
    n = ps.shape[0]
    return LossBundle(float(np.sum(diff * diff)) / n, 2.0 * diff / n)


def distillation_term(q_student, q_teacher, centroids, tau_s, tau_t, rows=None):
    """Distillation loss and its gradient w.r.t. the student embeddings.

    ``rows`` optionally restricts the term to a subset of queries (used to
    leave outliers out); the mean is then over that subset.
    """
    qs = np.atleast_2d(q_student)
    grad = np.zeros_like(qs)
    sel = np.arange(len(qs)) if rows is None else np.asarray(rows)
    if sel.size == 0:
        return LossBundle(0.0, grad, {"distill": 0.0})
    ps = class_probabilities(qs[sel], centroids, tau_s)
    pt = class_probabilities(np.atleast_2d(q_teacher)[sel], centroids, tau_t)
    d = distillation_loss(ps, pt)
    # softmax Jacobian transpose: p * (g - <p, g>)
    g_logits = ps * (d.grad - np.sum(ps * d.grad, axis=1, keepdims=True))
    grad[sel] = (g_logits @ centroids) / tau_s
    return LossBundle(d.value, grad, {"distill": d.value})


def total_loss(ctx, bank, centroids, gamma=0.2, tau=0.05, tau_s=1.0, tau_t=0.5,
               local=True, mining=True, distill=True, distill_outliers=True):
    """L2G contrast plus ``gamma`` times distillation.

    ``centroids`` may be None (no clusters), in which case distillation is
    skipped with a warning.
    """
    out = l2g_loss(ctx, bank, tau, mining=mining, local=local)
    out.terms.setdefault("local", 0.0)
    out.terms["distill"] = 0.0
    if distill and gamma != 0:
        if centroids is None or len(centroids) == 0:
            log.debug("no clusters; distillation term skipped")
            out.flags["distill_skipped"] = True
        else:
            rows = None
            if not distill_outliers:
                rows = np.flatnonzero(np.asarray(ctx.labels) < bank.num_clusters)
            d = distillation_term(ctx.queries, ctx.teacher, centroids.unit, tau_s, tau_t, rows)
            out = LossBundle(out.value + gamma * d.value, out.grad + gamma * d.grad,
                             {**out.terms, "distill": d.value}, out.flags)
    out.terms["total"] = out.value
    return out
