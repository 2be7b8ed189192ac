"""Cross-camera retrieval metrics: mAP and CMC.

For each query the gallery is ranked by descending inner product (ties go
to the lower gallery index).  Gallery entries sharing both identity and
camera with the query are dropped before scoring, as in the usual re-id
protocol; the remaining same-identity entries are the relevant ones.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .encoder import embed
from .errors import SplitError

log = logging.getLogger(__name__)

CMC_RANKS = (1, 5, 10)


@dataclass
class RetrievalSplit:
    query: np.ndarray       # instance indices
    gallery: np.ndarray
    true_id: np.ndarray     # per instance, full dataset
    camera: np.ndarray


@dataclass
class EvalReport:
    mAP: float
    cmc: dict
    ap: list = field(default_factory=list)
    skipped_queries: int = 0

    def as_dict(self):
        out = {"mAP": self.mAP, "skipped_queries": self.skipped_queries}
        out.update({f"cmc@{k}": v for k, v in self.cmc.items()})
        return out


def make_split(dataset, rng):
    """One random query per identity; everything else is gallery."""
    true_id = np.asarray(dataset.true_id)
    camera = np.asarray(dataset.camera)
    query = []
    for pid in np.unique(true_id):
        members = np.flatnonzero(true_id == pid)
        if np.unique(camera[members]).size < 2:
            raise SplitError(f"identity {pid} is seen by a single camera")
        query.append(int(rng.choice(members)))
    query = np.asarray(query, dtype=np.int64)
    gallery = np.setdiff1d(np.arange(len(true_id)), query)
    return RetrievalSplit(query, gallery, true_id, camera)


def average_precision(relevant):
    """AP of a ranked 0/1 relevance vector: mean precision at the relevant ranks."""
    relevant = np.asarray(relevant, dtype=bool)
    hits = np.flatnonzero(relevant)
    if hits.size == 0:
        return float("nan")
    return float(np.mean(np.arange(1, hits.size + 1) / (hits + 1)))


def ranked_relevance(sim, q_id, q_cam, g_id, g_cam):
    """Relevance vectors after ranking, with same-id same-camera entries removed."""
    out = []
    for i in range(sim.shape[0]):
        keep = ~((g_id == q_id[i]) & (g_cam == q_cam[i]))
        s = sim[i, keep]
        order = np.argsort(-s, kind="stable")
        out.append(g_id[keep][order] == q_id[i])
    return out


def retrieval_metrics(relevance, ranks=CMC_RANKS):
    aps, cmc_hits, skipped = [], {k: 0 for k in ranks}, 0
    for rel in relevance:
        if not rel.any():
            skipped += 1
            continue
        aps.append(average_precision(rel))
        first = int(np.argmax(rel))
        for k in ranks:
            cmc_hits[k] += first < k
    if skipped:
        log.warning("%d queries without a valid match were left out", skipped)
    n = len(aps)
    if n == 0:
        return EvalReport(float("nan"), {k: float("nan") for k in ranks}, [], skipped)
    return EvalReport(float(np.mean(aps)), {k: cmc_hits[k] / n for k in ranks}, aps, skipped)


def evaluate_embeddings(emb, split):
    q, g = split.query, split.gallery
    sim = emb[q] @ emb[g].T
    rel = ranked_relevance(sim, split.true_id[q], split.camera[q],
                           split.true_id[g], split.camera[g])
    return retrieval_metrics(rel)


def evaluate(split, encoder_state, raw):
    """Embed unaugmented ``raw`` with ``encoder_state`` (inference mode) and score."""
    return evaluate_embeddings(embed(encoder_state, raw), split)


def random_baseline(split, n_perm=10_000, rng=None):
    """Monte-Carlo mAP under uniformly random gallery rankings.

    Returns ``(mean, std)`` of the per-permutation mAP.  Only relevance
    counts matter, so each query is simulated by shuffling its 0/1 vector.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    vecs = []
    for qi in split.query:
        g = split.gallery
        keep = ~((split.true_id[g] == split.true_id[qi]) & (split.camera[g] == split.camera[qi]))
        rel = split.true_id[g][keep] == split.true_id[qi]
        if rel.any():
            vecs.append(rel)
    total = np.zeros(n_perm)
    for v in vecs:
        n, r = v.size, int(v.sum())
        # random rank positions of the r relevant items, sorted ascending
        pos = np.sort(np.argpartition(rng.random((n_perm, n)), r - 1, axis=1)[:, :r], axis=1)
        total += np.mean(np.arange(1, r + 1) / (pos + 1), axis=1)
    maps = total / len(vecs)
    return float(maps.mean()), float(maps.std(ddof=1))
