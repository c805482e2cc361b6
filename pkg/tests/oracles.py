"""Independent, deliberately plain re-implementations used as test oracles."""

import numpy as np


def max_matching(est, ref, window):
    """Maximum bipartite matching within the window (augmenting paths)."""
    adj = [[j for j, r in enumerate(ref) if abs(e - r) <= window] for e in est]
    owner = [-1] * len(ref)

    def augment(i, seen):
        for j in adj[i]:
            if j in seen:
                continue
            seen.add(j)
            if owner[j] == -1 or augment(owner[j], seen):
                owner[j] = i
                return True
        return False

    return sum(augment(i, set()) for i in range(len(est)))


def naive_f(est, ref, window=0.07, skip=5.0):
    est = [t for t in est if t >= skip]
    ref = [t for t in ref if t >= skip]
    if not ref:
        return float("nan")
    if not est:
        return 0.0
    h = max_matching(est, ref, window)
    return 0.0 if h == 0 else 2 * h / (len(est) + len(ref))


def variations(ref):
    ref = list(ref)
    mids = [(a + b) / 2 for a, b in zip(ref[:-1], ref[1:])]
    double = sorted(ref + mids)
    return [ref, mids, double, ref[0::2], ref[1::2]]


def naive_continuity_one(est, ref, tol):
    n = len(ref)
    used = set()
    flags = []
    for m, e in enumerate(est):
        j = min(range(n), key=lambda k: (abs(e - ref[k]), k))
        ok = False
        if j not in used:
            if m == 0 or j == 0:
                r_iv = ref[j + 1] - ref[j] if j + 1 < n else ref[j] - ref[j - 1]
                if len(est) >= 2:
                    e_iv = est[m + 1] - est[m] if m + 1 < len(est) else est[m] - est[m - 1]
                    ok = abs(e - ref[j]) / r_iv < tol and abs(1 - e_iv / r_iv) < tol
            else:
                r_iv = ref[j] - ref[j - 1]
                e_iv = est[m] - est[m - 1]
                ok = abs(e - ref[j]) / r_iv < tol and abs(1 - e_iv / r_iv) < tol
        if ok:
            used.add(j)
        flags.append(ok)
    longest = run = 0
    for f in flags:
        run = run + 1 if f else 0
        longest = max(longest, run)
    return longest / n, sum(flags) / n


def naive_continuity(est, ref, tol=0.175, skip=5.0):
    est = [t for t in est if t >= skip]
    ref = [t for t in ref if t >= skip]
    if len(ref) < 2:
        return (float("nan"),) * 4
    if not est:
        return (0.0,) * 4
    scores = [naive_continuity_one(est, v, tol) for v in variations(ref)]
    return scores[0][0], scores[0][1], max(s[0] for s in scores), max(s[1] for s in scores)


def plain_iou(a, b):
    inter = max(0.0, min(a.right, b.right) - max(a.left, b.left))
    return inter / (a.right - a.left + b.right - b.left - inter)


def brute_force_nms(dets, thr):
    """Textbook O(n^2) greedy NMS over a list kept in priority order."""
    remaining = sorted(dets, key=lambda d: (-d.score, d.left, d.source_index, d.source_level))
    keep = []
    while remaining:
        best = remaining.pop(0)
        keep.append(best)
        remaining = [d for d in remaining if plain_iou(best, d) <= thr]
    return sorted(keep, key=lambda d: (d.left, -d.score, d.source_index, d.source_level))
