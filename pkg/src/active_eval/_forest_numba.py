"""Compiled kernels for the random forest.

The forest is stored as flat per-tree node arrays (structure of arrays) so
that fitting and prediction run as tight numba loops; a retrain-every-step
surrogate schedule refits the forest hundreds of times per run, which rules
out Python-level tree building.

Determinism: every random choice comes from a splitmix64 stream seeded by
(forest seed, tree index), so identical data and seed reproduce the node
arrays bit for bit, independent of process or call order.

Bootstrap resampling is represented by per-sample multiplicities used as
integer weights; class counts, impurities and leaf votes over the weighted
unique samples match the expanded multiset exactly while touching each
distinct sample once. Tree construction keeps, per node, a slice of one index
array per feature holding the node's samples in ascending feature order;
splitting scans the chosen feature's slice once and stable-partitions every
feature's slice, so nothing is re-sorted after the single argsort per fit.
Class counts are computed during the parent's partition and passed down the
explicit node stack.

Split candidates sit at midpoints of adjacent distinct values and are ranked
by a per-criterion score that orders identically to impurity gain (the parent
term is shared by all candidates); entropy terms come from a precomputed
n*log(n) table. A candidate whose two adjacent value blocks are pure in the
same class lies strictly inside a single-class run, and for strictly concave
impurities such candidates are strictly beaten by the run's edge candidates,
so the scan skips scoring them without changing which split wins.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Node array encoding: feature[i] >= 0 marks an internal node with its split
# feature and threshold; feature[i] == -1 marks a leaf whose class is vote[i].

_U64_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_U64_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_U64_MIX2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, inline="always")
def _next_u64(state):
    state = state + _U64_GOLDEN
    z = state
    z = (z ^ (z >> np.uint64(30))) * _U64_MIX1
    z = (z ^ (z >> np.uint64(27))) * _U64_MIX2
    return state, z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def _rand_below(state, k):
    # Multiply-shift on the top 31 bits: no integer division on the hot path,
    # and the rounding bias is immaterial at these ranges.
    state, z = _next_u64(state)
    r = z >> np.uint64(33)
    return state, np.int64((r * np.uint64(k)) >> np.uint64(31))


@njit(cache=True)
def _scan_feature(
    X, y, w, sorted_idx, f, s, e, n_classes, cnt, use_entropy, nlogn,
    left_cnt, block_cnt,
):
    """Best split of one feature's (non-constant) sorted slice.

    Returns (score, threshold); higher score means lower weighted child
    impurity, and within the feature equal scores keep the lowest threshold
    because only strictly better candidates replace the incumbent.
    """
    nw = 0
    for c in range(n_classes):
        nw += cnt[c]
    best_score = -np.inf
    best_thr = 0.0

    if n_classes == 2:
        total0 = cnt[0]
        wl = 0
        wl0 = 0
        prev_mark = -2
        v_prev = 0.0
        first = True
        j = s
        while j < e:
            i = sorted_idx[f, j]
            v = X[i, f]
            b0 = 0
            bw = 0
            bclass = y[i]
            bpure = True
            while j < e:
                i = sorted_idx[f, j]
                if X[i, f] != v:
                    break
                wi = w[i]
                bw += wi
                if y[i] == 0:
                    b0 += wi
                if y[i] != bclass:
                    bpure = False
                j += 1
            bmark = bclass if bpure else -1
            if not first and not (prev_mark >= 0 and prev_mark == bmark):
                nl = wl
                nr = nw - wl
                cl0 = wl0
                cl1 = nl - cl0
                cr0 = total0 - cl0
                cr1 = nr - cr0
                if use_entropy:
                    score = (
                        nlogn[cl0] + nlogn[cl1] + nlogn[cr0] + nlogn[cr1]
                        - nlogn[nl] - nlogn[nr]
                    )
                else:
                    score = (
                        (cl0 * cl0 + cl1 * cl1) / nl
                        + (cr0 * cr0 + cr1 * cr1) / nr
                    )
                if score > best_score:
                    best_score = score
                    thr = 0.5 * (v_prev + v)
                    if not (v_prev < thr and thr < v):
                        thr = v_prev  # midpoint rounded onto a sample value
                    best_thr = thr
            wl += bw
            wl0 += b0
            prev_mark = bmark
            v_prev = v
            first = False
    else:
        for c in range(n_classes):
            left_cnt[c] = 0
        prev_mark = -2
        v_prev = 0.0
        first = True
        j = s
        while j < e:
            i = sorted_idx[f, j]
            v = X[i, f]
            for c in range(n_classes):
                block_cnt[c] = 0
            bclass = y[i]
            bpure = True
            while j < e:
                i = sorted_idx[f, j]
                if X[i, f] != v:
                    break
                block_cnt[y[i]] += w[i]
                if y[i] != bclass:
                    bpure = False
                j += 1
            bmark = bclass if bpure else -1
            if not first and not (prev_mark >= 0 and prev_mark == bmark):
                nl = 0
                for c in range(n_classes):
                    nl += left_cnt[c]
                nr = nw - nl
                if use_entropy:
                    score = -nlogn[nl] - nlogn[nr]
                    for c in range(n_classes):
                        cl = left_cnt[c]
                        score += nlogn[cl] + nlogn[cnt[c] - cl]
                else:
                    sl = 0.0
                    sr = 0.0
                    for c in range(n_classes):
                        cl = left_cnt[c]
                        cr = cnt[c] - cl
                        sl += cl * cl
                        sr += cr * cr
                    score = sl / nl + sr / nr
                if score > best_score:
                    best_score = score
                    thr = 0.5 * (v_prev + v)
                    if not (v_prev < thr and thr < v):
                        thr = v_prev
                    best_thr = thr
            for c in range(n_classes):
                left_cnt[c] += block_cnt[c]
            prev_mark = bmark
            v_prev = v
            first = False
    return best_score, best_thr


@njit(cache=True)
def _fit_tree(
    X, y, w, n_classes, sorted_idx, ns_u,
    max_features, use_entropy, nlogn, state,
    feature, threshold, left, right, vote,
    scratch, cnt, left_cnt, block_cnt, feat_order,
    stack_s, stack_e, stack_p, stack_l, stack_cnt,
):
    """Grow one tree over pre-sorted per-feature index lists; returns (nodes, rng state)."""
    d = X.shape[1]
    top = 0
    stack_s[0] = 0
    stack_e[0] = ns_u
    stack_p[0] = -1
    stack_l[0] = 0
    # stack_cnt[0] holds the root's weighted class counts (set by the caller).
    n_nodes = 0

    while top >= 0:
        s = stack_s[top]
        e = stack_e[top]
        parent = stack_p[top]
        is_left = stack_l[top]
        nw = 0
        for c in range(n_classes):
            cnt[c] = stack_cnt[top, c]
            nw += cnt[c]
        top -= 1
        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if is_left == 1:
                left[parent] = node
            else:
                right[parent] = node
        majority = 0
        for c in range(1, n_classes):
            if cnt[c] > cnt[majority]:
                majority = c
        if e - s <= 1 or cnt[majority] == nw:
            feature[node] = -1
            vote[node] = majority
            continue

        # Random inspection order; determinism comes from the seeded stream,
        # and equal-score ties resolve by (feature index, threshold) below.
        for f in range(d):
            feat_order[f] = f
        for f in range(d - 1, 0, -1):
            state, j = _rand_below(state, f + 1)
            tmp = feat_order[f]
            feat_order[f] = feat_order[j]
            feat_order[j] = tmp

        best_score = -np.inf
        best_f = -1
        best_thr = 0.0
        inspected_useful = 0
        for fi in range(d):
            if inspected_useful >= max_features and best_f >= 0:
                break
            f = feat_order[fi]
            if X[sorted_idx[f, s], f] == X[sorted_idx[f, e - 1], f]:
                continue  # constant feature: no candidate, does not count
            inspected_useful += 1
            score, thr = _scan_feature(
                X, y, w, sorted_idx, f, s, e, n_classes, cnt,
                use_entropy, nlogn, left_cnt, block_cnt,
            )
            better = False
            if score > best_score:
                better = True
            elif score == best_score and best_f >= 0:
                if f < best_f or (f == best_f and thr < best_thr):
                    better = True
            if better:
                best_score = score
                best_f = f
                best_thr = thr
        if best_f < 0:
            # Duplicated inputs with mixed labels: nothing separates them.
            feature[node] = -1
            vote[node] = majority
            continue

        feature[node] = best_f
        threshold[node] = best_thr
        # Stable partition of every feature's slice by the split predicate;
        # the first pass also tallies the left child's weighted class counts.
        for c in range(n_classes):
            left_cnt[c] = 0
        n_left = 0
        for f in range(d):
            pl = 0
            pr = 0
            if f == 0:
                for j in range(s, e):
                    i = sorted_idx[f, j]
                    if X[i, best_f] <= best_thr:
                        sorted_idx[f, s + pl] = i
                        pl += 1
                        left_cnt[y[i]] += w[i]
                    else:
                        scratch[pr] = i
                        pr += 1
            else:
                for j in range(s, e):
                    i = sorted_idx[f, j]
                    if X[i, best_f] <= best_thr:
                        sorted_idx[f, s + pl] = i
                        pl += 1
                    else:
                        scratch[pr] = i
                        pr += 1
            for j in range(pr):
                sorted_idx[f, s + pl + j] = scratch[j]
            n_left = pl
        # Right child pushed first so the left child is processed (and
        # numbered) next, keeping node numbering stack-order independent.
        top += 1
        stack_s[top] = s + n_left
        stack_e[top] = e
        stack_p[top] = node
        stack_l[top] = 0
        for c in range(n_classes):
            stack_cnt[top, c] = cnt[c] - left_cnt[c]
        top += 1
        stack_s[top] = s
        stack_e[top] = s + n_left
        stack_p[top] = node
        stack_l[top] = 1
        for c in range(n_classes):
            stack_cnt[top, c] = left_cnt[c]
    return n_nodes, state


@njit(cache=True)
def fit_forest(X, y, n_classes, order, n_trees, max_features, use_entropy, seed):
    """Fit all trees; returns flat node arrays plus per-tree node counts.

    ``order`` holds one argsort of X per feature (shape (d, n)), computed once
    by the caller; the per-tree bootstrap keeps it valid because multiplicity
    weights leave the sample order untouched.
    """
    n = X.shape[0]
    d = X.shape[1]
    max_nodes = 2 * n + 1
    feature = np.full((n_trees, max_nodes), -1, dtype=np.int32)
    threshold = np.zeros((n_trees, max_nodes), dtype=np.float64)
    left = np.full((n_trees, max_nodes), -1, dtype=np.int32)
    right = np.full((n_trees, max_nodes), -1, dtype=np.int32)
    vote = np.zeros((n_trees, max_nodes), dtype=np.int32)
    n_nodes = np.zeros(n_trees, dtype=np.int64)

    # Workspaces shared across trees.
    w = np.empty(n, dtype=np.int64)
    sorted_idx = np.empty((d, n), dtype=np.int32)
    scratch = np.empty(n, dtype=np.int32)
    cnt = np.empty(n_classes, dtype=np.int64)
    left_cnt = np.empty(n_classes, dtype=np.int64)
    block_cnt = np.empty(n_classes, dtype=np.int64)
    feat_order = np.empty(d, dtype=np.int64)
    stack_s = np.empty(max_nodes + 1, dtype=np.int64)
    stack_e = np.empty(max_nodes + 1, dtype=np.int64)
    stack_p = np.empty(max_nodes + 1, dtype=np.int64)
    stack_l = np.empty(max_nodes + 1, dtype=np.int64)
    stack_cnt = np.empty((max_nodes + 1, n_classes), dtype=np.int64)
    nlogn = np.zeros(n + 1, dtype=np.float64)
    if use_entropy:
        for k in range(2, n + 1):
            nlogn[k] = k * np.log(k)

    for t in range(n_trees):
        state = np.uint64(seed) + np.uint64(0x100000001) * np.uint64(t + 1)
        for i in range(n):
            w[i] = 0
        for _ in range(n):
            state, j = _rand_below(state, n)
            w[j] += 1
        # Per-feature lists of the distinct bootstrapped samples, sorted.
        for c in range(n_classes):
            cnt[c] = 0
        pos = 0
        for j in range(n):
            i = order[0, j]
            if w[i] > 0:
                sorted_idx[0, pos] = i
                cnt[y[i]] += w[i]
                pos += 1
        ns_u = pos
        for f in range(1, d):
            pos = 0
            for j in range(n):
                i = order[f, j]
                if w[i] > 0:
                    sorted_idx[f, pos] = i
                    pos += 1
        for c in range(n_classes):
            stack_cnt[0, c] = cnt[c]
        nn, state = _fit_tree(
            X, y, w, n_classes, sorted_idx, ns_u,
            max_features, use_entropy, nlogn, state,
            feature[t], threshold[t], left[t], right[t], vote[t],
            scratch, cnt, left_cnt, block_cnt, feat_order,
            stack_s, stack_e, stack_p, stack_l, stack_cnt,
        )
        n_nodes[t] = nn
    return feature, threshold, left, right, vote, n_nodes


@njit(cache=True)
def forest_votes(feature, threshold, left, right, vote, X, n_classes):
    """Class-vote counts per point, summed over trees."""
    n_trees = feature.shape[0]
    n = X.shape[0]
    counts = np.zeros((n, n_classes), dtype=np.int64)
    for t in range(n_trees):
        for i in range(n):
            node = 0
            while feature[t, node] >= 0:
                if X[i, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            counts[i, vote[t, node]] += 1
    return counts


@njit(cache=True)
def forest_member_votes(feature, threshold, left, right, vote, X):
    """Per-tree predicted class for each point, shape (n_trees, n)."""
    n_trees = feature.shape[0]
    n = X.shape[0]
    out = np.empty((n_trees, n), dtype=np.int32)
    for t in range(n_trees):
        for i in range(n):
            node = 0
            while feature[t, node] >= 0:
                if X[i, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            out[t, i] = vote[t, node]
    return out
