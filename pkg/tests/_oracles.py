"""Brute-force reference implementations used by the metrics tests."""

from __future__ import annotations

import math

import numpy as np

NEIGHBOURS_8 = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if dy or dx]


def flood_fill_components(mask):
    """Raster-order flood fill; returns (labels, [(area, (row, col) centroid), ...])."""
    mask = np.asarray(mask).astype(bool)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int64)
    comps = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c] or labels[r, c]:
                continue
            lab = len(comps) + 1
            stack, pixels = [(r, c)], []
            labels[r, c] = lab
            while stack:
                y, x = stack.pop()
                pixels.append((y, x))
                for dy, dx in NEIGHBOURS_8:
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w and mask[yy, xx] and not labels[yy, xx]:
                        labels[yy, xx] = lab
                        stack.append((yy, xx))
            n = len(pixels)
            comps.append((n, (sum(p[0] for p in pixels) / n, sum(p[1] for p in pixels) / n)))
    return labels, comps


def oracle_counts(pred_bin, gt, radius=3.0):
    pred_bin = np.asarray(pred_bin).astype(bool)
    gt = np.asarray(gt).astype(bool)
    tp = fp = fn = 0
    for p, g in zip(pred_bin.ravel().tolist(), gt.ravel().tolist()):
        tp += p and g
        fp += p and not g
        fn += g and not p
    _, pc = flood_fill_components(pred_bin)
    _, gc = flood_fill_components(gt)
    free_g, free_p = set(range(len(gc))), set(range(len(pc)))
    hits = 0
    while True:
        best = None
        for gi in sorted(free_g):
            for pi in sorted(free_p):
                d = math.dist(gc[gi][1], pc[pi][1])
                if d <= radius and (best is None or d < best[0]):
                    best = (d, gi, pi)
        if best is None:
            break
        free_g.discard(best[1])
        free_p.discard(best[2])
        hits += 1
    fa_px = sum(pc[i][0] for i in free_p)
    return dict(tp_px=tp, fp_px=fp, fn_px=fn, fa_px=fa_px, total_px=gt.size,
                targets_total=len(gc), targets_hit=hits)


def oracle_report(preds, gts, threshold=0.5, radius=3.0):
    total = None
    for p, g in zip(preds, gts):
        c = oracle_counts(np.asarray(p) > threshold, np.asarray(g) > 0, radius)
        total = c if total is None else {k: total[k] + c[k] for k in c}
    denom = total["tp_px"] + total["fp_px"] + total["fn_px"]
    iou = total["tp_px"] / denom if denom else 1.0
    pd = total["targets_hit"] / total["targets_total"] if total["targets_total"] else 1.0
    return iou, pd, total["fp_px"] / total["total_px"], total


def all_3x3_masks():
    for code in range(512):
        yield np.array([(code >> i) & 1 for i in range(9)], dtype=bool).reshape(3, 3)


def random_pairs(count=200, size=16, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        gt = rng.random((size, size)) < rng.uniform(0.02, 0.3)
        noise = rng.random((size, size))
        pred = np.where(gt, 0.3 + 0.7 * noise, 0.7 * noise)
        pred[rng.random((size, size)) < 0.03] = 0.5  # exactly at threshold: background
        yield pred, gt
