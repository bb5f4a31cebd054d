"""Integer vote-counting kernels.

Two implementations of each kernel live here: a numba ``@njit`` loop and a
vectorised numpy fallback. Set ``NGC_DISABLE_NUMBA=1`` (or run without numba
installed) to force the numpy path. Both paths consume the same pre-drawn
random numbers, so their outputs are bit-identical.
"""

import os

import numpy as np

_DISABLE = os.environ.get("NGC_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLE:
        raise ImportError("numba disabled by NGC_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

# rows x classes budget for one dense count matrix in the numpy path
_COUNT_BUDGET = 4_000_000


def plurality_hits_numpy(votes, tie_u, n_classes):
    """For each trial, pick the plurality class and report whether it is class 0.

    ``votes`` is (trials, N) int; ``tie_u`` holds one uniform per trial used to
    pick among tied classes (the floor(u*k)-th tied class in ascending order).
    """
    votes = np.ascontiguousarray(votes, dtype=np.int64)
    trials = votes.shape[0]
    out = np.empty(trials, dtype=np.bool_)
    step = max(1, _COUNT_BUDGET // max(n_classes, 1))
    for lo in range(0, trials, step):
        hi = min(trials, lo + step)
        v = votes[lo:hi]
        m = hi - lo
        flat = (np.arange(m)[:, None] * n_classes + v).ravel()
        counts = np.bincount(flat, minlength=m * n_classes).reshape(m, n_classes)
        best = counts.max(axis=1)
        tied = counts == best[:, None]
        n_tied = tied.sum(axis=1)
        pick = np.minimum((tie_u[lo:hi] * n_tied).astype(np.int64), n_tied - 1)
        # class 0 is chosen iff it is tied for the top and is the pick-th tied class;
        # class 0 is always first in ascending order among tied classes
        out[lo:hi] = tied[:, 0] & (pick == 0)
    return out


def vote_consensus_numpy(votes, n_classes):
    """Per-element plurality over rows of ``votes`` (paths x elements).

    Rows must already be sorted best rank first. Ties go to the tied class
    voted for by the earliest row. Returns (labels, winning_count).
    """
    votes = np.ascontiguousarray(votes, dtype=np.int64)
    n_paths, n_el = votes.shape
    labels = np.empty(n_el, dtype=np.int64)
    win = np.empty(n_el, dtype=np.int64)
    step = max(1, _COUNT_BUDGET // max(n_classes, 1))
    for lo in range(0, n_el, step):
        hi = min(n_el, lo + step)
        v = votes[:, lo:hi]
        m = hi - lo
        flat = (v + np.arange(m)[None, :] * n_classes).ravel()
        counts = np.bincount(flat, minlength=m * n_classes).reshape(m, n_classes)
        best = counts.max(axis=1)
        lab = np.full(m, -1, dtype=np.int64)
        idx = np.arange(m)
        for r in range(n_paths):
            open_ = lab < 0
            if not open_.any():
                break
            hit = open_ & (counts[idx, v[r]] == best)
            lab[hit] = v[r][hit]
        labels[lo:hi] = lab
        win[lo:hi] = best
    return labels, win


if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def plurality_hits_numba(votes, tie_u, n_classes):
        trials, n = votes.shape
        out = np.empty(trials, dtype=np.bool_)
        counts = np.zeros(n_classes, dtype=np.int64)
        for t in range(trials):
            best = 0
            for j in range(n):
                c = votes[t, j]
                counts[c] += 1
                if counts[c] > best:
                    best = counts[c]
            n_tied = 0
            for j in range(n):
                c = votes[t, j]
                if counts[c] == best:
                    n_tied += 1
                    counts[c] = -counts[c]  # mark as seen
            pick = int(tie_u[t] * n_tied)
            if pick > n_tied - 1:
                pick = n_tied - 1
            zero_top = counts[0] == -best
            out[t] = zero_top and pick == 0
            for j in range(n):
                counts[votes[t, j]] = 0
        return out

    @njit(cache=True, nogil=True)
    def vote_consensus_numba(votes, n_classes):
        n_paths, n_el = votes.shape
        labels = np.empty(n_el, dtype=np.int64)
        win = np.empty(n_el, dtype=np.int64)
        counts = np.zeros(n_classes, dtype=np.int64)
        for e in range(n_el):
            best = 0
            for r in range(n_paths):
                c = votes[r, e]
                counts[c] += 1
                if counts[c] > best:
                    best = counts[c]
            lab = -1
            for r in range(n_paths):
                c = votes[r, e]
                if counts[c] == best:
                    lab = c
                    break
            labels[e] = lab
            win[e] = best
            for r in range(n_paths):
                counts[votes[r, e]] = 0
        return labels, win


def plurality_hits(votes, tie_u, n_classes, use_numba=None):
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba:
        return plurality_hits_numba(
            np.ascontiguousarray(votes, dtype=np.int64),
            np.ascontiguousarray(tie_u, dtype=np.float64),
            int(n_classes),
        )
    return plurality_hits_numpy(votes, tie_u, n_classes)


def vote_consensus(votes, n_classes, use_numba=None):
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba:
        return vote_consensus_numba(np.ascontiguousarray(votes, dtype=np.int64), int(n_classes))
    return vote_consensus_numpy(votes, n_classes)
