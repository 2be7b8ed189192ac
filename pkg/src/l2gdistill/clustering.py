"""DBSCAN over cosine distance, producing clusters plus singleton outliers.

Conventions fixed for reproducibility:

* a point is core when at least ``min_samples`` points (itself included)
  lie within ``eps``;
* a border point reachable from several clusters joins the cluster of the
  lowest-index core point within ``eps`` of it;
* labels are renumbered by first appearance in index order.  Noise points
  get labels ``K, K+1, ...`` in index order.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import EmptyInput, ParameterError


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 0.5
    min_samples: int = 5

    def validate(self):
        if not 0 < self.eps < 2:
            raise ParameterError(f"eps must lie in (0, 2), got {self.eps}")
        if self.min_samples < 1:
            raise ParameterError(f"min_samples must be >= 1, got {self.min_samples}")
        return self


@dataclass
class PseudoLabeling:
    """``labels[i]`` is a cluster id in ``[0, num_clusters)`` or a unique outlier id."""

    labels: np.ndarray
    num_clusters: int
    core: np.ndarray = None

    def __len__(self):
        return len(self.labels)

    @property
    def outliers(self):
        return np.flatnonzero(self.labels >= self.num_clusters)

    @property
    def num_outliers(self):
        return int(np.sum(self.labels >= self.num_clusters))

    @property
    def num_classes(self):
        return self.num_clusters + self.num_outliers

    def is_outlier(self, i):
        return self.labels[i] >= self.num_clusters

    def members(self, k):
        return np.flatnonzero(self.labels == k)


def cosine_distance_matrix(features):
    f = np.asarray(features, dtype=np.float64)
    d = 1.0 - f @ f.T
    np.clip(d, 0.0, 2.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def canonicalize(raw_labels, noise=-1):
    """Renumber cluster labels by first appearance, then give each noise point
    its own label after the clusters."""
    raw_labels = np.asarray(raw_labels)
    mapping = {}
    for lab in raw_labels:
        if lab != noise and lab not in mapping:
            mapping[lab] = len(mapping)
    k = len(mapping)
    out = np.empty(len(raw_labels), dtype=np.int64)
    nxt = k
    for i, lab in enumerate(raw_labels):
        if lab == noise:
            out[i] = nxt
            nxt += 1
        else:
            out[i] = mapping[lab]
    return out, k


def dbscan(features, params=DbscanParams()):
    params.validate()
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = features.shape[0]
    if n == 0 or features.size == 0:
        raise EmptyInput("dbscan needs at least one point")
    adj = cosine_distance_matrix(features) <= params.eps
    core = adj.sum(axis=1) >= params.min_samples
    core_idx = np.flatnonzero(core)
    raw = np.full(n, -1, dtype=np.int64)
    if core_idx.size:
        sub = adj[np.ix_(core_idx, core_idx)]
        _, comp = connected_components(csr_matrix(sub), directed=False)
        raw[core_idx] = comp
        border = np.flatnonzero(~core & adj[:, core].any(axis=1))
        for i in border:
            # lowest-index core neighbour decides
            j = core_idx[np.argmax(adj[i, core_idx])]
            raw[i] = raw[j]
    labels, k = canonicalize(raw)
    return PseudoLabeling(labels=labels, num_clusters=k, core=core)


def dbscan_reference(features, eps=0.5, min_samples=5):
    """Textbook DBSCAN (Ester et al. expand-cluster), O(N^2) with plain loops.

    Independent of :func:`dbscan`; kept as the test oracle.  Border points
    are resolved afterwards with the same lowest-index-core rule.
    """
    x = [list(map(float, row)) for row in np.atleast_2d(features)]
    n = len(x)
    if n == 0:
        raise EmptyInput("dbscan needs at least one point")

    def dist(a, b):
        return 1.0 - sum(p * q for p, q in zip(x[a], x[b]))

    neigh = [[j for j in range(n) if j == i or dist(i, j) <= eps] for i in range(n)]
    is_core = [len(nb) >= min_samples for nb in neigh]
    label = [None] * n
    cluster = 0
    for i in range(n):
        if label[i] is not None or not is_core[i]:
            continue
        label[i] = cluster
        queue = deque(neigh[i])
        while queue:
            j = queue.popleft()
            if is_core[j] and label[j] is None:
                label[j] = cluster
                queue.extend(neigh[j])
        cluster += 1
    raw = []
    for i in range(n):
        if is_core[i]:
            raw.append(label[i])
            continue
        owners = [j for j in neigh[i] if is_core[j]]
        raw.append(label[min(owners)] if owners else -1)
    labels, k = canonicalize(raw)
    return PseudoLabeling(labels=labels, num_clusters=k, core=np.array(is_core))


def same_partition(a, b):
    """True when two labelings induce the same partition of the indices."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        return False
    return bool(np.array_equal(a[:, None] == a[None, :], b[:, None] == b[None, :]))


def labeling_stats(labeling, true_id):
    """Pairwise precision/recall/F1 of same-cluster vs same-identity.

    Pairs are counted over clustered (non-outlier) instances only.  When no
    clustered pair exists the scores are reported as 0 with ``defined`` False.
    """
    labels = np.asarray(labeling.labels)
    true_id = np.asarray(true_id)
    mask = labels < labeling.num_clusters
    lab = labels[mask]
    tid = true_id[mask]
    n = lab.size
    iu = np.triu_indices(n, k=1)
    pred_same = (lab[:, None] == lab[None, :])[iu]
    true_same = (tid[:, None] == tid[None, :])[iu]
    tp = int(np.sum(pred_same & true_same))
    fp = int(np.sum(pred_same & ~true_same))
    fn = int(np.sum(~pred_same & true_same))
    defined = pred_same.size > 0 and (tp + fp) > 0 and (tp + fn) > 0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "num_clusters": int(labeling.num_clusters),
        "num_outliers": int(labeling.num_outliers),
        "pairs": int(pred_same.size),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "defined": bool(defined),
    }
