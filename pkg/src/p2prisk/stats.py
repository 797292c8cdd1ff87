"""Exact small-sample comparison statistics.

* Wilcoxon signed-rank with an exact null distribution obtained by counting
  all ``2^n`` sign assignments of the (mid)ranks.
* Holm step-down adjustment.
* Cliff's delta with the usual magnitude thresholds (0.147, 0.33, 0.474).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError

CLIFF_THRESHOLDS = ((0.147, "negligible"), (0.33, "small"), (0.474, "medium"))


@dataclass(frozen=True)
class WilcoxonResult:
    w: float
    p_one_sided: float
    p_two_sided: float
    n_effective: int
    n_zero: int

    def to_dict(self):
        return asdict(self)


def _sign_flip_counts(twice_ranks: np.ndarray) -> dict:
    """Number of sign assignments reaching each positive-rank sum (in half units)."""
    dist = {0: 1}
    for r in twice_ranks:
        nxt = dict(dist)
        for s, c in dist.items():
            nxt[s + r] = nxt.get(s + r, 0) + c
        dist = nxt
    return dist


def wilcoxon_signed_rank(diffs) -> WilcoxonResult:
    """Exact Wilcoxon signed-rank test for paired differences.

    Zero differences are dropped before ranking.  ``W`` is the sum of ranks of
    positive differences; ``p_one_sided = P(W' >= W)`` under the sign-flip
    null (alternative: differences tend to be positive) and the two-sided
    p-value is ``min(1, 2 * min(P(W' >= W), P(W' <= W)))``.
    """
    d = np.asarray(diffs, dtype=np.float64)
    if d.ndim != 1 or len(d) < 1 or not np.all(np.isfinite(d)):
        raise ValidationError("differences must be a nonempty finite vector")
    nz = d[d != 0]
    n_zero = len(d) - len(nz)
    if len(nz) == 0:
        raise ValidationError("all differences are zero: the test is undefined")
    if len(nz) > 25:
        raise ValidationError("exact enumeration supports at most 25 nonzero differences")
    ranks = rankdata(np.abs(nz))
    twice = np.rint(2 * ranks).astype(np.int64)  # midranks are multiples of 1/2
    w2 = int(twice[nz > 0].sum())
    dist = _sign_flip_counts(twice)
    total = 2 ** len(nz)
    upper = sum(c for s, c in dist.items() if s >= w2) / total
    lower = sum(c for s, c in dist.items() if s <= w2) / total
    return WilcoxonResult(w2 / 2.0, upper, min(1.0, 2 * min(upper, lower)), len(nz), n_zero)


def holm_correct(p_values, m: int | None = None) -> list:
    """Holm step-down adjusted p-values, returned in input order."""
    p = np.asarray(p_values, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValidationError("p-values must lie in [0, 1]")
    m = len(p) if m is None else int(m)
    if m < len(p):
        raise ValidationError("m must be at least the number of p-values")
    order = np.argsort(p, kind="stable")
    adj = np.empty(len(p))
    running = 0.0
    for j, i in enumerate(order):
        running = max(running, min(1.0, (m - j) * p[i]))
        adj[i] = running
    return adj.tolist()


@dataclass(frozen=True)
class EffectSize:
    delta: float
    magnitude: str

    def to_dict(self):
        return asdict(self)


def magnitude(delta: float) -> str:
    a = abs(delta)
    for bound, label in CLIFF_THRESHOLDS:
        if a < bound:
            return label
    return "large"


def cliffs_delta(a, b) -> EffectSize:
    """Dominance-based effect size by brute force over all pairs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValidationError("both samples must be nonempty")
    diff = a[:, None] - b[None, :]
    delta = float((np.sum(diff > 0) - np.sum(diff < 0)) / diff.size)
    return EffectSize(delta, magnitude(delta))


def compare_models(scores: dict, pairs=None, metric: str = "mcc") -> list:
    """Pairwise comparison rows over per-fold scores.

    Args:
        scores: ``{model_name: [fold scores]}`` with aligned folds.
        pairs: list of ``(a, b)`` names; defaults to all ordered-by-input pairs.

    Returns:
        list of dicts with Wilcoxon, Holm-adjusted p and Cliff's delta.
    """
    names = list(scores)
    if pairs is None:
        pairs = [(names[i], names[j]) for i in range(len(names)) for j in range(i + 1, len(names))]
    rows = []
    for a, b in pairs:
        da = np.asarray(scores[a], dtype=np.float64)
        db = np.asarray(scores[b], dtype=np.float64)
        if da.shape != db.shape:
            raise ValidationError(f"fold scores of {a} and {b} are not paired")
        row = {"model_a": a, "model_b": b, "metric": metric}
        try:
            w = wilcoxon_signed_rank(da - db)
            row.update(w=w.w, p_one_sided=w.p_one_sided, p_two_sided=w.p_two_sided, n_zero=w.n_zero)
        except ValidationError:
            row.update(w=None, p_one_sided=1.0, p_two_sided=1.0, n_zero=len(da))
        es = cliffs_delta(da, db)
        row.update(cliffs_delta=es.delta, magnitude=es.magnitude)
        rows.append(row)
    adj = holm_correct([r["p_one_sided"] for r in rows]) if rows else []
    for r, a in zip(rows, adj):
        r["p_holm"] = a
    return rows
