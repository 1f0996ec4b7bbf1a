"""Independent brute-force reference implementations used to verify the
package. Everything here favors obviousness over speed: explicit loops,
exact rational arithmetic where ties matter, no shared code with the
package beyond numpy inputs."""

import math
from fractions import Fraction

import numpy as np


def voronoi_regions_ref(points, dims):
    """Nearest-point id per pixel from a stacked distance tensor."""
    h, w = dims
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = np.stack([(xx - px) ** 2 + (yy - py) ** 2 for px, py in points])
    return np.argmin(d2, axis=0).astype(np.int32)


def voronoi_regions_loop(points, dims):
    """Same thing with per-pixel python loops (used on tiny cases)."""
    h, w = dims
    out = np.zeros((h, w), dtype=np.int32)
    for r in range(h):
        for c in range(w):
            best, best_d = 0, math.inf
            for i, (px, py) in enumerate(points):
                d = (c - px) ** 2 + (r - py) ** 2
                if d < best_d:
                    best, best_d = i, d
            out[r, c] = best
    return out


def line_mask_ref(region_id):
    """Pixels whose right or down neighbor has a different region id."""
    h, w = region_id.shape
    out = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            if c + 1 < w and region_id[r, c + 1] != region_id[r, c]:
                out[r, c] = True
            if r + 1 < h and region_id[r + 1, c] != region_id[r, c]:
                out[r, c] = True
    return out


EPS = 1e-7


def _bce_term(t, o):
    o = min(max(o, EPS), 1.0 - EPS)
    return -(t * math.log(o) + (1.0 - t) * math.log(1.0 - o))


def cluster_loss_ref(fg_mask, nuclei):
    h, w = nuclei.shape
    total = 0.0
    for r in range(h):
        for c in range(w):
            total += _bce_term(1.0 if fg_mask[r, c] else 0.0, float(nuclei[r, c]))
    return total / (h * w)


def voronoi_loss_ref(labels, nuclei, fg_code=1, bg_code=0):
    h, w = nuclei.shape
    total, count = 0.0, 0
    for r in range(h):
        for c in range(w):
            if labels[r, c] == fg_code:
                total += _bce_term(1.0, float(nuclei[r, c]))
                count += 1
            elif labels[r, c] == bg_code:
                total += _bce_term(0.0, float(nuclei[r, c]))
                count += 1
    return total / count


def repel_loss_ref(target, nuclei):
    h, w = nuclei.shape
    total = 0.0
    for r in range(h):
        for c in range(w):
            total += (float(target[r, c]) - float(nuclei[r, c])) ** 2
    return total / (h * w)


def components_bfs(mask):
    """4-connected components, ids 1..K in raster order of first pixel."""
    h, w = mask.shape
    out = np.zeros((h, w), dtype=np.int32)
    next_id = 0
    for r in range(h):
        for c in range(w):
            if mask[r, c] and out[r, c] == 0:
                next_id += 1
                queue = [(r, c)]
                out[r, c] = next_id
                while queue:
                    qr, qc = queue.pop()
                    for nr, nc in ((qr - 1, qc), (qr + 1, qc), (qr, qc - 1), (qr, qc + 1)):
                        if 0 <= nr < h and 0 <= nc < w and mask[nr, nc] and out[nr, nc] == 0:
                            out[nr, nc] = next_id
                            queue.append((nr, nc))
    return out


def peaks_ref(values, min_distance, threshold):
    """Exhaustive windowed-max scan plus greedy suppression."""
    h, w = values.shape
    half = math.ceil(min_distance)
    candidates = []
    for r in range(h):
        for c in range(w):
            v = values[r, c]
            if v < threshold:
                continue
            winmax = -math.inf
            for rr in range(max(0, r - half), min(h, r + half + 1)):
                for cc in range(max(0, c - half), min(w, c + half + 1)):
                    winmax = max(winmax, values[rr, cc])
            if v == winmax:
                candidates.append((-v, r, c))
    candidates.sort()
    kept = []
    for nv, r, c in candidates:
        if all((c - kx) ** 2 + (r - ky) ** 2 >= min_distance**2 for kx, ky in kept):
            kept.append((float(c), float(r)))
    return kept


def _instance_sets(labels):
    sets = {}
    h, w = labels.shape
    for r in range(h):
        for c in range(w):
            v = int(labels[r, c])
            if v:
                sets.setdefault(v, set()).add((r, c))
    return [sets[k] for k in sorted(sets)]


def aji_ref(pred_labels, truth_labels):
    """Greedy ground-truth-order matching over explicit pixel sets with
    exact rational IoU comparisons."""
    truths = _instance_sets(truth_labels)
    preds = _instance_sets(pred_labels)
    if not truths and not preds:
        return 1.0
    used = [False] * len(preds)
    inter_total, union_total = 0, 0
    for g in truths:
        best_j, best_iou = None, Fraction(0)
        for j, s in enumerate(preds):
            if used[j]:
                continue
            inter = len(g & s)
            if inter == 0:
                continue
            iou = Fraction(inter, len(g | s))
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j is None:
            union_total += len(g)
        else:
            used[best_j] = True
            inter_total += len(g & preds[best_j])
            union_total += len(g | preds[best_j])
    for j, s in enumerate(preds):
        if not used[j]:
            union_total += len(s)
    return inter_total / union_total


def object_dice_ref(pred_labels, truth_labels):
    truths = _instance_sets(truth_labels)
    preds = _instance_sets(pred_labels)
    if not truths and not preds:
        return 1.0
    if not truths or not preds:
        return 0.0

    def directional(sources, targets):
        total_px = sum(len(s) for s in sources)
        acc = Fraction(0)
        for s in sources:
            overlaps = [len(s & t) for t in targets]
            best = max(range(len(targets)), key=lambda i: (overlaps[i], -i))
            if overlaps[best] == 0:
                continue
            dice = Fraction(2 * overlaps[best], len(s) + len(targets[best]))
            acc += Fraction(len(s), total_px) * dice
        return acc

    return float(
        Fraction(1, 2) * (directional(truths, preds) + directional(preds, truths))
    )


def best_assignment_ref(pred_points, truth_points, radius):
    """Exhaustive one-to-one assignment: max matches, then min total
    distance. Returns (tp, total_distance)."""
    preds = [tuple(p) for p in pred_points]
    truths = [tuple(t) for t in truth_points]

    best = (0, 0.0)

    def recurse(i, used, matches, dist):
        nonlocal best
        if i == len(preds):
            if (matches, -dist) > (best[0], -best[1]):
                best = (matches, dist)
            return
        recurse(i + 1, used, matches, dist)
        px, py = preds[i]
        for j, (tx, ty) in enumerate(truths):
            if j in used:
                continue
            d = math.hypot(px - tx, py - ty)
            if d <= radius:
                recurse(i + 1, used | {j}, matches + 1, dist + d)

    recurse(0, frozenset(), 0, 0.0)
    return best


def ccc_ref(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    vx = sum((v - mx) ** 2 for v in x) / n
    vy = sum((v - my) ** 2 for v in y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    denom = vx + vy + (mx - my) ** 2
    if denom == 0:
        return 1.0
    return 2.0 * cov / denom


def repel_value_ref(x, y, points, alpha, r):
    """Direct per-pixel evaluation of the center-coding function."""
    dists = sorted(math.hypot(px - x, py - y) for px, py in points)
    d1 = dists[0]
    base = max(0.0, 1.0 - d1 / r) ** 2
    if len(dists) == 1:
        return min(1.0, max(0.0, base))
    d2 = dists[1]
    return min(1.0, max(0.0, base * (d2 - d1) / (d2 + d1 + alpha * r)))
