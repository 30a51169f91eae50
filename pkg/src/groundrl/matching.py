"""Per-image maximum-IoU bipartite matching.

Assignment decisions are made on exact rational IoUs so that equal-total
matchings are recognised as ties and broken the same way every time: the
chosen matching has the lexicographically smallest ``(pred, gt)`` pair
sequence among all optima. Reported IoUs are plain floats from
:func:`groundrl.geometry.iou`.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from groundrl.geometry import BoundingBox, GroundedInstance, iou

BRUTE_FORCE_LIMIT = 7


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int, float], ...]
    unmatched_preds: tuple[int, ...]
    unmatched_gts: tuple[int, ...]

    @property
    def total_iou(self) -> float:
        return math.fsum(p[2] for p in self.pairs)

    @property
    def ious(self) -> list[float]:
        return [p[2] for p in self.pairs]


def exact_iou(a: BoundingBox, b: BoundingBox) -> Fraction:
    w = min(Fraction(a.x2), Fraction(b.x2)) - max(Fraction(a.x1), Fraction(b.x1))
    h = min(Fraction(a.y2), Fraction(b.y2)) - max(Fraction(a.y1), Fraction(b.y1))
    if w <= 0 or h <= 0:
        return Fraction(0)
    inter = w * h
    area_a = (Fraction(a.x2) - Fraction(a.x1)) * (Fraction(a.y2) - Fraction(a.y1))
    area_b = (Fraction(b.x2) - Fraction(b.x1)) * (Fraction(b.y2) - Fraction(b.y1))
    return inter / (area_a + area_b - inter)


def hungarian(cost: list[list]) -> tuple[list[int], list, list]:
    """Minimum-cost perfect assignment on a square matrix.

    Shortest augmenting path form with row/column potentials; works with any
    exact ordered numeric type. Returns ``(row_to_col, u, v)`` where ``u`` and
    ``v`` are optimal duals, so ``cost[i][j] - u[i] - v[j] >= 0`` with
    equality on every edge of every optimal assignment.
    """
    n = len(cost)
    if n == 0:
        return [], [], []
    inf = math.inf
    zero = cost[0][0] - cost[0][0]
    # 1-based arrays; column 0 is the virtual start.
    u = [zero] * (n + 1)
    v = [zero] * (n + 1)
    p = [0] * (n + 1)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1][j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    row_to_col = [0] * n
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _optimum(w: list[list[Fraction]], rows: list[int], cols: list[int]):
    """Max-weight matching restricted to ``rows`` x ``cols``.

    Returns ``(total, {row: col}, tight)`` where only positive-weight pairs
    are kept and ``tight`` holds the (row, col) edges with zero reduced cost.
    """
    n = max(len(rows), len(cols))
    if n == 0 or not rows or not cols:
        return Fraction(0), {}, set()
    cost = [[Fraction(0)] * n for _ in range(n)]
    for a, r in enumerate(rows):
        for b, c in enumerate(cols):
            cost[a][b] = -w[r][c]
    assign, u, v = hungarian(cost)
    pairs = {}
    total = Fraction(0)
    for a, b in enumerate(assign):
        if a < len(rows) and b < len(cols) and w[rows[a]][cols[b]] > 0:
            pairs[rows[a]] = cols[b]
            total += w[rows[a]][cols[b]]
    tight = {
        (rows[a], cols[b])
        for a in range(len(rows))
        for b in range(len(cols))
        if w[rows[a]][cols[b]] > 0 and cost[a][b] - u[a] - v[b] == 0
    }
    return total, pairs, tight


def max_weight_assignment(w: Sequence[Sequence]) -> dict[int, int]:
    """Row-to-column matching of maximum total weight over positive entries.

    ``w`` should hold exact numbers (ints or Fractions). Among optimal
    matchings the one with the lexicographically smallest ``(row, col)``
    sequence is returned.
    """
    w = [[Fraction(x) for x in row] for row in w]
    n_rows = len(w)
    n_cols = len(w[0]) if w else 0
    best, pairs, tight = _optimum(w, list(range(n_rows)), list(range(n_cols)))
    fixed: dict[int, int] = {}
    free_cols = list(range(n_cols))
    remaining = best
    for r in range(n_rows):
        rest_rows = list(range(r + 1, n_rows))
        chosen = None
        for c in free_cols:
            if w[r][c] <= 0 or (r, c) not in tight:
                continue
            if pairs.get(r) == c:
                chosen = c
                break
            cols = [x for x in free_cols if x != c]
            sub_total, sub_pairs, _ = _optimum(w, rest_rows, cols)
            if w[r][c] + sub_total == remaining:
                chosen = c
                pairs = {r: c, **sub_pairs}
                break
        # Every edge of an optimum is tight, so when nothing was chosen the
        # current optimum already leaves r unmatched.
        if chosen is not None:
            fixed[r] = chosen
            free_cols.remove(chosen)
            remaining -= w[r][chosen]
    return fixed


def _split_by_image(instances: Sequence[GroundedInstance]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = defaultdict(list)
    for k, inst in enumerate(instances):
        groups[inst.image_index].append(k)
    return groups


def _assemble(preds, gts, matched: list[tuple[int, int]]) -> MatchResult:
    pairs = []
    for pi, gi in sorted(matched):
        value = iou(preds[pi].box, gts[gi].box)
        if value > 0:
            pairs.append((pi, gi, value))
    used_p = {p[0] for p in pairs}
    used_g = {p[1] for p in pairs}
    return MatchResult(
        pairs=tuple(pairs),
        unmatched_preds=tuple(k for k in range(len(preds)) if k not in used_p),
        unmatched_gts=tuple(k for k in range(len(gts)) if k not in used_g),
    )


def match_instances(
    preds: Sequence[GroundedInstance], gts: Sequence[GroundedInstance]
) -> MatchResult:
    """Match predictions to ground truth maximising summed IoU within each image.

    Pairs with zero IoU are reported as unmatched.
    """
    pred_groups = _split_by_image(preds)
    gt_groups = _split_by_image(gts)
    matched: list[tuple[int, int]] = []
    for image in sorted(set(pred_groups) & set(gt_groups)):
        p_idx, g_idx = pred_groups[image], gt_groups[image]
        w = [[exact_iou(preds[a].box, gts[b].box) for b in g_idx] for a in p_idx]
        for a, b in max_weight_assignment(w).items():
            matched.append((p_idx[a], g_idx[b]))
    return _assemble(preds, gts, matched)


def brute_force_match(
    preds: Sequence[GroundedInstance], gts: Sequence[GroundedInstance]
) -> MatchResult:
    """Exhaustive matching oracle for small inputs (at most 7 per side per image)."""
    pred_groups = _split_by_image(preds)
    gt_groups = _split_by_image(gts)
    for groups, side in ((pred_groups, "predictions"), (gt_groups, "ground truths")):
        for image, members in groups.items():
            if len(members) > BRUTE_FORCE_LIMIT:
                raise ValueError(
                    f"brute_force_match: {len(members)} {side} on image {image} "
                    f"exceeds limit {BRUTE_FORCE_LIMIT}"
                )
    matched: list[tuple[int, int]] = []
    for image in sorted(set(pred_groups) & set(gt_groups)):
        p_idx, g_idx = pred_groups[image], gt_groups[image]
        fw = [[iou(preds[a].box, gts[b].box) for b in g_idx] for a in p_idx]
        n = max(len(p_idx), len(g_idx))
        # Float pre-screen, then exact comparison among near-optimal candidates.
        scored = []
        for perm in itertools.permutations(range(n)):
            seq = tuple(
                (a, perm[a])
                for a in range(len(p_idx))
                if perm[a] < len(g_idx) and fw[a][perm[a]] > 0
            )
            scored.append((math.fsum(fw[a][b] for a, b in seq), seq))
        top = max(s for s, _ in scored)
        candidates = {seq for s, seq in scored if s >= top - 1e-9}
        best_seq = None
        best_total = None
        for seq in sorted(candidates):
            total = sum(
                (exact_iou(preds[p_idx[a]].box, gts[g_idx[b]].box) for a, b in seq),
                Fraction(0),
            )
            if best_total is None or total > best_total:
                best_total, best_seq = total, seq
        for a, b in best_seq or ():
            matched.append((p_idx[a], g_idx[b]))
    return _assemble(preds, gts, matched)
