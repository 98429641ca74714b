"""Reference implementations used only by the tests.

Each one is written from the plain definition, shares no code with the
package, and favours obviousness over speed.
"""

from __future__ import annotations

import math
from datetime import date, timedelta


def sigmoid_dot(values: dict, coefficients: dict) -> float:
    eta = math.fsum(coefficients[k] * values[k] for k in coefficients)
    if eta >= 0:
        return 1.0 / (1.0 + math.exp(-eta))
    e = math.exp(eta)
    return e / (1.0 + e)


def pairwise_auc(scores, labels) -> float:
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def pairwise_gini(xs) -> float:
    n = len(xs)
    if n == 0 or sum(xs) == 0:
        return 0.0
    diff = math.fsum(abs(a - b) for a in xs for b in xs)
    return diff / (2 * n * n * (sum(xs) / n))


def union_find_merge(spells):
    """Merge (start, end) date pairs by connected components.

    Two spells are linked when they start in the same year and the gap
    between them is at most one day; components are the transitive closure.
    """
    spells = list(spells)
    parent = list(range(len(spells)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, (s1, e1) in enumerate(spells):
        for j, (s2, e2) in enumerate(spells):
            if j <= i or s1.year != s2.year:
                continue
            if s2 <= e1 + timedelta(days=1) and s1 <= e2 + timedelta(days=1):
                parent[find(i)] = find(j)
    groups = {}
    for i, (s, e) in enumerate(spells):
        r = find(i)
        lo, hi = groups.get(r, (s, e))
        groups[r] = (min(lo, s), max(hi, e))
    return sorted(groups.values())


def exhaustive_threshold(days, flags, max_days=365):
    """Best t in 1..max_days by direct recount at every t; None when all objectives are 0."""
    best = None
    for t in range(1, max_days + 1):
        crossing = [f for d, f in zip(days, flags) if d >= t]
        if not crossing:
            continue
        hit = sum(1 for f in crossing if f)
        obj = hit * hit / len(crossing)
        if obj > 0 and (best is None or obj > best[1]):
            best = (t, obj, len(crossing), hit)
    return best


def to_date(day_number: int) -> date:
    return date(2015, 1, 1) + timedelta(days=day_number)


def sweep_merge(spells):
    """Sort by (initiation year, start) and extend the open spell while the next one touches it."""
    out = []
    for s, e in sorted(spells, key=lambda p: (p[0].year, p[0], p[1])):
        if out and out[-1][0].year == s.year and s <= out[-1][1] + timedelta(days=1):
            out[-1] = (out[-1][0], max(out[-1][1], e))
        else:
            out.append((s, e))
    return sorted(out)
