"""Feature binning shared by the tree learners and the EBM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class BinMapper:
    """Per-feature split thresholds.

    Thresholds are midpoints between adjacent sorted unique training values.
    When a feature has more unique values than ``max_bins``, only the
    midpoints closest to equal-frequency quantiles are kept.  A value ``x``
    goes to bin ``j`` where ``j`` is the number of thresholds strictly below
    ``x``, so ``x <= thresholds[j]`` is exactly "bin <= j".
    """

    thresholds: tuple
    max_bins: int

    @classmethod
    def fit(cls, X: np.ndarray, max_bins: int = 255) -> "BinMapper":
        X = np.asarray(X, dtype=np.float64)
        out = []
        for j in range(X.shape[1]):
            col = X[:, j]
            u = np.unique(col[~np.isnan(col)])
            if len(u) <= 1:
                out.append(np.zeros(0))
                continue
            mids = (u[:-1] + u[1:]) / 2.0
            if len(u) > max_bins:
                srt = np.sort(col)
                qs = srt[np.floor(np.arange(1, max_bins) * len(srt) / max_bins).astype(np.int64)]
                # index of the first unique value above each quantile value
                idx = np.unique(np.clip(np.searchsorted(u, qs, side="right"), 1, len(u) - 1))
                mids = mids[idx - 1]
            out.append(mids)
        return cls(tuple(out), max_bins)

    @property
    def n_features(self) -> int:
        return len(self.thresholds)

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([len(t) + 1 for t in self.thresholds], dtype=np.int64)

    def transform(self, X: np.ndarray) -> np.ndarray:
        """(d, n) uint16 bin codes, feature-major for cache-friendly scans."""
        X = np.asarray(X, dtype=np.float64)
        out = np.empty((X.shape[1], X.shape[0]), dtype=np.uint16)
        for j, thr in enumerate(self.thresholds):
            out[j] = np.searchsorted(thr, X[:, j], side="left")
        return out

    def threshold(self, feature: int, bin_: int) -> float:
        return float(self.thresholds[feature][bin_])

    def to_dict(self):
        return {"max_bins": self.max_bins, "thresholds": [t.tolist() for t in self.thresholds]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(np.asarray(t, dtype=np.float64) for t in d["thresholds"]), d["max_bins"])
