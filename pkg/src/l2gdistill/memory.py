"""Per-instance feature memory with momentum updates and hardest-example mining."""

from dataclasses import dataclass

import numpy as np

from .encoder import embed
from .errors import NoClustersError
from .numerics import l2_normalize


@dataclass
class Centroids:
    raw: np.ndarray
    unit: np.ndarray

    def __len__(self):
        return len(self.raw)


class MemoryBank:
    """One unit-norm slot per training instance plus the current pseudo-labels."""

    def __init__(self, features, labeling=None):
        self.features = l2_normalize(np.array(features, dtype=np.float64))
        self.labeling = None
        if labeling is not None:
            self.set_labeling(labeling)

    def __len__(self):
        return len(self.features)

    @classmethod
    def initialize(cls, encoder, raw):
        return cls(embed(encoder, raw))

    def set_labeling(self, labeling):
        if len(labeling) != len(self.features):
            raise ValueError("labeling size does not match the bank")
        self.labeling = labeling
        k = labeling.num_clusters
        self._members = [np.flatnonzero(labeling.labels == c) for c in range(k)]
        self._outliers = labeling.outliers

    @property
    def labels(self):
        return self.labeling.labels

    @property
    def num_clusters(self):
        return self.labeling.num_clusters

    @property
    def cluster_members(self):
        return self._members

    @property
    def outlier_indices(self):
        return self._outliers

    def momentum_update(self, index, q, m):
        """slot <- normalize(m * slot + (1 - m) * q)."""
        if not 0 <= index < len(self.features):
            raise IndexError(f"slot {index} out of range for bank of size {len(self.features)}")
        if m == 1.0:
            return self.features[index]
        if m == 0.0:
            # q is already unit length; copying avoids a renormalization ulp
            self.features[index] = np.asarray(q, dtype=np.float64)
            return self.features[index]
        blended = m * self.features[index] + (1.0 - m) * np.asarray(q, dtype=np.float64)
        self.features[index] = l2_normalize(blended)
        return self.features[index]

    def compute_centroids(self):
        if self.labeling is None or self.num_clusters == 0:
            raise NoClustersError("no clusters in the current labeling")
        raw = np.vstack([self.features[idx].mean(axis=0) for idx in self._members])
        return Centroids(raw=raw, unit=l2_normalize(raw))

    def hardest_positive(self, query, k):
        """Member of cluster ``k`` least similar to ``query`` (lowest index on ties)."""
        if not 0 <= k < self.num_clusters:
            raise IndexError(f"cluster {k} does not exist")
        idx = self._members[k]
        if idx.size == 0:
            raise IndexError(f"cluster {k} is empty")
        j = idx[np.argmin(self.features[idx] @ query)]
        return int(j), self.features[j]

    def hardest_negatives(self, query, exclude=None):
        """Most similar member of every cluster other than ``exclude``.

        Returns ``(indices, features)``; both empty when no such cluster exists.
        """
        if self.labeling is None or self.num_clusters == 0:
            raise NoClustersError("no clusters in the current labeling")
        picks = []
        for c, idx in enumerate(self._members):
            if c == exclude:
                continue
            picks.append(idx[np.argmax(self.features[idx] @ query)])
        picks = np.asarray(picks, dtype=np.int64)
        return picks, self.features[picks]
