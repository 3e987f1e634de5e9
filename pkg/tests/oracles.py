"""Independent reference implementations used to cross-check the package.

Everything here is written the slow, obvious way on purpose: enumeration
instead of dynamic programming, explicit loops instead of numpy reductions.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from functools import lru_cache


def midranks_by_counting(values):
    """Rank of v = (#smaller) + (#equal + 1) / 2."""
    out = []
    for v in values:
        smaller = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        out.append(smaller + (equal + 1) / 2)
    return out


@lru_cache(maxsize=None)
def _null_sums(ranks: tuple[float, ...]) -> tuple[float, ...]:
    """W+ for every one of the 2^n sign patterns."""
    return tuple(
        sum(r for r, s in zip(ranks, signs) if s)
        for signs in itertools.product((0, 1), repeat=len(ranks))
    )


def wilcoxon_brute(diffs):
    """(w_plus, exact two-sided p) by enumerating every sign pattern.

    Zero differences are dropped. Returns (None, None) when nothing is left.
    """
    d = [x for x in diffs if x != 0]
    if not d:
        return None, None
    ranks = midranks_by_counting([abs(x) for x in d])
    w_obs = sum(r for r, x in zip(ranks, d) if x > 0)
    sums = _null_sums(tuple(sorted(ranks)))
    # ranks are multiples of 1/2, so these comparisons are exact in binary floating point
    ge = sum(1 for w in sums if w >= w_obs)
    le = sum(1 for w in sums if w <= w_obs)
    p = min(Fraction(1), 2 * Fraction(min(ge, le), len(sums)))
    return w_obs, float(p)


def cronbach_direct(matrix):
    """alpha = k/(k-1) * (1 - sum of item variances / variance of row totals), with n-1 variances."""
    rows = [list(map(float, r)) for r in matrix]
    n, k = len(rows), len(rows[0])

    def var(xs):
        m = sum(xs) / len(xs)
        return sum((x - m) ** 2 for x in xs) / (len(xs) - 1)

    item_vars = [var([rows[i][j] for i in range(n)]) for j in range(k)]
    total_var = var([sum(r) for r in rows])
    if total_var == 0:
        return None
    return k / (k - 1) * (1 - sum(item_vars) / total_var)


def run_detection_brute(q, required=2):
    """P(some run of ``required`` successes) and first-completion pmf, by enumerating outcomes."""
    n = len(q)
    first = [0.0] * n
    for outcome in itertools.product((0, 1), repeat=n):
        p = 1.0
        for qi, o in zip(q, outcome):
            p *= qi if o else 1 - qi
        run = 0
        for i, o in enumerate(outcome):
            run = run + 1 if o else 0
            if run >= required:
                first[i] += p
                break
    return sum(first), first


def release_safety_violations(trace, required=2):
    """Releases from the trigger not preceded by ``required`` consecutive grasp predictions.

    Walks the raw event list: the ``required`` action predictions right
    before each trigger release must all read human_grasp and cover
    consecutive frames.
    """
    bad = []
    preds = []
    for ev in trace.events:
        kind = ev.kind.value
        if kind == "action_predicted":
            preds.append((ev.payload["frame"], ev.payload["label"]))
        elif kind == "release" and ev.payload["source"] == "trigger":
            last = preds[-required:]
            ok = (
                len(last) == required
                and all(label == "human_grasp" for _, label in last)
                and all(b[0] == a[0] + 1 for a, b in zip(last, last[1:]))
            )
            if not ok:
                bad.append((ev.time_us, last))
    return bad
