"""Pixel IoU, target-level detection probability (Pd) and false-alarm rate (Fa).

Targets are connected components of the binary masks. A ground-truth target
is detected when a predicted component's centroid lies within
``match_radius`` pixels of its own centroid; pairs are matched greedily,
nearest first, each prediction used at most once. Fa is the fraction of
all pixels that are predicted target but lie outside the ground truth;
pixels of unmatched predicted components are also counted (``fa_px``) as a
diagnostic.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError

_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


@dataclass(frozen=True)
class Component:
    label: int
    area: int
    centroid: tuple[float, float]  # (row, col)


def connected_components(mask: np.ndarray, connectivity: int = 8):
    """Label a binary 2-D mask; returns (labels, components) with labels starting at 1."""
    mask = np.asarray(mask).astype(bool)
    labels, count = ndimage.label(mask, structure=_STRUCTURE[connectivity])
    comps = []
    for lab in range(1, count + 1):
        rows, cols = np.nonzero(labels == lab)
        comps.append(Component(lab, int(rows.size), (float(rows.mean()), float(cols.mean()))))
    return labels, comps


@dataclass
class ImageCounts:
    tp_px: int = 0
    fp_px: int = 0
    fn_px: int = 0
    fa_px: int = 0
    total_px: int = 0
    targets_total: int = 0
    targets_hit: int = 0

    def __add__(self, other: "ImageCounts") -> "ImageCounts":
        return ImageCounts(*(a + b for a, b in zip(asdict(self).values(), asdict(other).values())))


def match_targets(pred_comps: list[Component], gt_comps: list[Component],
                  radius: float) -> list[tuple[int, int]]:
    """Greedy nearest-first one-to-one matching; returns (gt index, pred index) pairs."""
    pairs = []
    for gi, g in enumerate(gt_comps):
        for pi, p in enumerate(pred_comps):
            d = float(np.hypot(g.centroid[0] - p.centroid[0], g.centroid[1] - p.centroid[1]))
            if d <= radius:
                pairs.append((d, gi, pi))
    pairs.sort()
    used_g, used_p, matches = set(), set(), []
    for _, gi, pi in pairs:
        if gi in used_g or pi in used_p:
            continue
        used_g.add(gi)
        used_p.add(pi)
        matches.append((gi, pi))
    return matches


def score_image(pred_bin: np.ndarray, gt: np.ndarray, match_radius: float = 3.0,
                connectivity: int = 8) -> ImageCounts:
    pred_bin = np.asarray(pred_bin).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred_bin.shape != gt.shape:
        raise DataError(f"prediction shape {pred_bin.shape} != ground truth shape {gt.shape}")
    pred_labels, pred_comps = connected_components(pred_bin, connectivity)
    _, gt_comps = connected_components(gt, connectivity)
    matches = match_targets(pred_comps, gt_comps, match_radius)
    matched_pred = {pi for _, pi in matches}
    fa_px = sum(c.area for i, c in enumerate(pred_comps) if i not in matched_pred)
    return ImageCounts(
        tp_px=int(np.count_nonzero(pred_bin & gt)),
        fp_px=int(np.count_nonzero(pred_bin & ~gt)),
        fn_px=int(np.count_nonzero(~pred_bin & gt)),
        fa_px=int(fa_px),
        total_px=int(gt.size),
        targets_total=len(gt_comps),
        targets_hit=len(matches),
    )


@dataclass
class EvalReport:
    iou: float
    pd: float
    fa: float
    counts: ImageCounts
    per_image: list[dict] = field(default_factory=list)

    @classmethod
    def from_counts(cls, counts: ImageCounts, per_image: list[dict] | None = None) -> "EvalReport":
        denom = counts.tp_px + counts.fp_px + counts.fn_px
        iou = counts.tp_px / denom if denom else 1.0
        pd = counts.targets_hit / counts.targets_total if counts.targets_total else 1.0
        fa = counts.fp_px / counts.total_px if counts.total_px else 0.0
        return cls(iou, pd, fa, counts, per_image or [])

    def table_row(self) -> str:
        """IoU and Pd in units of 1e-2, Fa in units of 1e-6."""
        return f"iou={self.iou * 1e2:.2f} pd={self.pd * 1e2:.2f} fa={self.fa * 1e6:.3f}"

    def to_dict(self) -> dict:
        return {"iou": self.iou, "pd": self.pd, "fa": self.fa,
                "counts": asdict(self.counts), "per_image": self.per_image}

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def evaluate_dataset(preds, gts, threshold: float = 0.5, match_radius: float = 3.0,
                     connectivity: int = 8, ids: list[str] | None = None) -> EvalReport:
    """Binarize probability maps at ``threshold`` (strictly greater) and accumulate counts."""
    preds = list(preds)
    gts = list(gts)
    if len(preds) != len(gts):
        raise DataError(f"{len(preds)} predictions vs {len(gts)} ground-truth masks")
    total = ImageCounts()
    rows = []
    for i, (p, g) in enumerate(zip(preds, gts)):
        c = score_image(np.asarray(p) > threshold, np.asarray(g) > 0, match_radius, connectivity)
        total = total + c
        rows.append({"id": ids[i] if ids else str(i), **asdict(c)})
    return EvalReport.from_counts(total, rows)
