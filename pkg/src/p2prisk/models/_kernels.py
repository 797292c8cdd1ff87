"""Numba kernels for histogram tree growth and prediction.

Both split criteria work from per-bin sums of ``(g, h, c)``:

* Gini (criterion 0): ``g = w * y``, ``h = w``; weighted impurity of a node is
  ``2 G (H - G) / H`` and leaves predict ``G / H``.
* Newton (criterion 1): ``g``/``h`` are logistic-loss gradients/hessians;
  gain is ``0.5 (G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam))`` and
  leaves predict ``-G / (H + lam)``.

``c`` carries sample multiplicities (bootstrap counts) and drives both
``min_samples_leaf`` and the node cover used for explanations.
"""

import numba as nb
import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@nb.njit(cache=True)
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def _uniform(key, counter):
    z = _mix(key + np.uint64(counter + 1) * _GAMMA)
    return np.float64(z >> np.uint64(11)) * 2.0**-53


@nb.njit(cache=True)
def _gini(G, H):
    if H <= 0.0:
        return 0.0
    return 2.0 * G * (H - G) / H


@nb.njit(cache=True)
def _node_sums(g, h, c, rows, start, end):
    G = 0.0
    H = 0.0
    C = 0.0
    for i in range(start, end):
        r = rows[i]
        G += g[r]
        H += h[r]
        C += c[r]
    return G, H, C


@nb.njit(cache=True)
def _fill_hist(Xb, g, h, c, rows, start, end, feats, n_feats, offs, hist, gbuf, hbuf, cbuf):
    """Per-bin (g, h, c) sums of the selected features into the flat ``hist``."""
    m = end - start
    for i in range(m):
        r = rows[start + i]
        gbuf[i] = g[r]
        hbuf[i] = h[r]
        cbuf[i] = c[r]
    for fi in range(n_feats):
        f = feats[fi]
        o = offs[f]
        for b in range(offs[f + 1] - o):
            hist[o + b, 0] = 0.0
            hist[o + b, 1] = 0.0
            hist[o + b, 2] = 0.0
        if offs[f + 1] - o < 2:
            continue
        for i in range(m):
            b = o + Xb[f, rows[start + i]]
            hist[b, 0] += gbuf[i]
            hist[b, 1] += hbuf[i]
            hist[b, 2] += cbuf[i]


@nb.njit(cache=True)
def _scan(hist, offs, feats, n_feats, G, H, C, criterion, lam, min_leaf, mcw, min_gain):
    """Best (feature, bin) from a filled histogram; ties keep the first found."""
    if criterion == 0:
        parent = _gini(G, H)
    else:
        parent = G * G / (H + lam)
    best_gain = min_gain
    best_f = -1
    best_b = -1
    for fi in range(n_feats):
        f = feats[fi]
        o = offs[f]
        nbf = offs[f + 1] - o
        if nbf < 2:
            continue
        GL = 0.0
        HL = 0.0
        CL = 0.0
        for b in range(nbf - 1):
            GL += hist[o + b, 0]
            HL += hist[o + b, 1]
            CL += hist[o + b, 2]
            if hist[o + b, 2] == 0.0 and b > 0:
                # empty bin: same partition as the previous threshold
                continue
            CR = C - CL
            if CR < min_leaf:
                break
            if CL < min_leaf:
                continue
            GR = G - GL
            HR = H - HL
            if criterion == 0:
                if HL <= 0.0 or HR <= 0.0:
                    continue
                gain = parent - _gini(GL, HL) - _gini(GR, HR)
            else:
                if HL < mcw or HR < mcw:
                    continue
                gain = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent)
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_b = b
    return best_f, best_b, best_gain


# histogram memory budget (float64 cells) for the per-node subtraction trick
_HIST_BUDGET = 24_000_000


@nb.njit(cache=True)
def build_tree(Xb, g, h, c, rows_in, n_bins, criterion, lam, max_depth, max_leaves, min_leaf, mcw, min_gain, max_features, key):
    """Grow one tree best-first.

    When every node examines all features, the larger child's histogram is
    the parent's minus the smaller child's, so only the smaller child is
    scanned over its rows.

    Args:
        Xb: (d, n) uint16 bin codes.
        rows_in: rows taking part (nonzero multiplicity).
        max_leaves: leaf cap; a large value gives plain depth-limited growth.
        max_features: features examined per node (``>= d`` means all).
        key: uint64 stream key for per-node feature subsampling.

    Returns:
        feature, bin, left, right, value, cover, gain arrays (node 0 = root).
    """
    d = Xb.shape[0]
    m = rows_in.shape[0]
    if max_leaves > m:
        max_leaves = max(m, 1)
    if max_depth < 30 and max_leaves > (1 << max_depth):
        max_leaves = 1 << max_depth
    cap = 2 * max_leaves + 1
    feature = np.full(cap, -1, np.int32)
    split_bin = np.full(cap, -1, np.int32)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros(cap)
    cover = np.zeros(cap)
    gain = np.zeros(cap)
    depth = np.zeros(cap, np.int32)
    nstart = np.zeros(cap, np.int64)
    nend = np.zeros(cap, np.int64)
    cand_gain = np.full(cap, -1.0)
    cand_f = np.full(cap, -1, np.int32)
    cand_b = np.full(cap, -1, np.int32)
    parent_of = np.full(cap, -1, np.int64)
    hist_slot = np.full(cap, -1, np.int64)

    rows = rows_in.copy()
    buf = np.empty(m, np.int64)
    gbuf = np.empty(m)
    hbuf = np.empty(m)
    cbuf = np.empty(m)
    offs = np.zeros(d + 1, np.int64)
    for f in range(d):
        offs[f + 1] = offs[f] + n_bins[f]
    total = offs[d]
    perm = np.arange(d)
    feats = np.arange(d)
    k_feat = d if max_features >= d or max_features <= 0 else max_features
    splittable_nodes = min(cap, 2 * (max_leaves - 1) + 1)
    use_sub = k_feat == d and splittable_nodes * total * 3 <= _HIST_BUDGET
    n_slots = splittable_nodes if use_sub else 1
    hists = np.empty((n_slots, max(total, 1), 3))
    n_used = 0

    n_nodes = 1
    n_leaves = 1
    nstart[0] = 0
    nend[0] = m
    pending = np.zeros(2, np.int64)
    n_pending = 1
    pending[0] = 0
    while True:
        # children are processed smaller-first so the sibling can subtract
        if n_pending == 2 and (nend[pending[1]] - nstart[pending[1]]) < (nend[pending[0]] - nstart[pending[0]]):
            tmp = pending[0]
            pending[0] = pending[1]
            pending[1] = tmp
        for pi in range(n_pending):
            node = pending[pi]
            G, H, C = _node_sums(g, h, c, rows, nstart[node], nend[node])
            cover[node] = C
            if criterion == 0:
                value[node] = G / H if H > 0 else 0.0
            else:
                value[node] = -G / (H + lam)
            if depth[node] >= max_depth or C < 2 * min_leaf:
                continue
            if k_feat < d:
                for j in range(d):
                    perm[j] = j
                nkey = _mix(key ^ _mix(np.uint64(node + 1)))
                for j in range(k_feat):
                    u = _uniform(nkey, j)
                    s = j + int(u * (d - j))
                    if s >= d:
                        s = d - 1
                    tmp = perm[j]
                    perm[j] = perm[s]
                    perm[s] = tmp
                sel = np.sort(perm[:k_feat])
                for j in range(k_feat):
                    feats[j] = sel[j]
            if use_sub:
                slot = n_used
                n_used += 1
                hist_slot[node] = slot
                hist = hists[slot]
                par = parent_of[node]
                sib = -1
                if pi == 1 and par >= 0:
                    sib = pending[0]
                if sib >= 0 and hist_slot[par] >= 0 and hist_slot[sib] >= 0:
                    hp = hists[hist_slot[par]]
                    hs = hists[hist_slot[sib]]
                    for b in range(total):
                        hist[b, 0] = hp[b, 0] - hs[b, 0]
                        hist[b, 1] = hp[b, 1] - hs[b, 1]
                        hist[b, 2] = hp[b, 2] - hs[b, 2]
                else:
                    _fill_hist(Xb, g, h, c, rows, nstart[node], nend[node], feats, k_feat, offs, hist, gbuf, hbuf, cbuf)
            else:
                hist = hists[0]
                _fill_hist(Xb, g, h, c, rows, nstart[node], nend[node], feats, k_feat, offs, hist, gbuf, hbuf, cbuf)
            bf, bb, bg = _scan(hist, offs, feats, k_feat, G, H, C, criterion, lam, min_leaf, mcw, min_gain)
            if bf >= 0:
                cand_gain[node] = bg
                cand_f[node] = bf
                cand_b[node] = bb
        n_pending = 0
        if n_leaves >= max_leaves:
            break
        best = -1
        bestg = -1.0
        for j in range(n_nodes):
            if left[j] == -1 and cand_gain[j] > bestg:
                bestg = cand_gain[j]
                best = j
        if best < 0 or bestg <= min_gain:
            break
        f = cand_f[best]
        b = cand_b[best]
        s0 = nstart[best]
        s1 = nend[best]
        nl = 0
        for i in range(s0, s1):
            r = rows[i]
            if Xb[f, r] <= b:
                rows[s0 + nl] = r
                nl += 1
            else:
                buf[i - s0 - nl] = r
        for i in range(s1 - s0 - nl):
            rows[s0 + nl + i] = buf[i]
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        n_leaves += 1
        feature[best] = f
        split_bin[best] = b
        gain[best] = bestg
        left[best] = lc
        right[best] = rc
        cand_gain[best] = -1.0
        nstart[lc] = s0
        nend[lc] = s0 + nl
        nstart[rc] = s0 + nl
        nend[rc] = s1
        depth[lc] = depth[best] + 1
        depth[rc] = depth[best] + 1
        parent_of[lc] = best
        parent_of[rc] = best
        pending[0] = lc
        pending[1] = rc
        n_pending = 2
    return (
        feature[:n_nodes],
        split_bin[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        value[:n_nodes],
        cover[:n_nodes],
        gain[:n_nodes],
    )


@nb.njit(cache=True)
def predict_forest(X, feature, threshold, left, right, value, offsets, weights):
    """Weighted sum of tree outputs; trees are concatenated with ``offsets``."""
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            j = 0
            while left[base + j] != -1:
                if X[i, feature[base + j]] <= threshold[base + j]:
                    j = left[base + j]
                else:
                    j = right[base + j]
            acc += weights[t] * value[base + j]
        out[i] = acc
    return out


@nb.njit(cache=True)
def bin_stump_update(Xb_f, n_bins, g, h, min_leaf, lam):
    """Best single split of one binned feature under a Newton criterion.

    Returns:
        (split_bin, left_value, right_value, gain); ``split_bin = -1`` when no
        admissible split exists, in which case a constant Newton step is
        returned in ``left_value``.
    """
    hist = np.zeros((n_bins, 3))
    for i in range(Xb_f.shape[0]):
        b = Xb_f[i]
        hist[b, 0] += g[i]
        hist[b, 1] += h[i]
        hist[b, 2] += 1.0
    G = hist[:, 0].sum()
    H = hist[:, 1].sum()
    C = hist[:, 2].sum()
    parent = G * G / (H + lam)
    best = -1
    bestg = 1e-12
    GL = 0.0
    HL = 0.0
    CL = 0.0
    bl = 0.0
    br = 0.0
    for b in range(n_bins - 1):
        GL += hist[b, 0]
        HL += hist[b, 1]
        CL += hist[b, 2]
        if CL < min_leaf:
            continue
        if C - CL < min_leaf:
            break
        GR = G - GL
        HR = H - HL
        gn = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent)
        if gn > bestg:
            bestg = gn
            best = b
            bl = -GL / (HL + lam)
            br = -GR / (HR + lam)
    if best < 0:
        return -1, -G / (H + lam), 0.0, 0.0
    return best, bl, br, bestg


@nb.njit(cache=True)
def bin_sums(Xb_f, n_bins, g, h):
    out = np.zeros((n_bins, 2))
    for i in range(Xb_f.shape[0]):
        out[Xb_f[i], 0] += g[i]
        out[Xb_f[i], 1] += h[i]
    return out
