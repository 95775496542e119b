"""Loss terms for both training phases."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import EmptyBatchError, LossShapeError

EPS_CLAMP = 1e-7
EPS_IOU = 1e-9


@dataclass
class LossValue:
    total: torch.Tensor
    components: dict[str, torch.Tensor] = field(default_factory=dict)
    weights: dict[str, float] = field(default_factory=dict)

    def as_floats(self) -> dict[str, float]:
        out = {k: float(v) for k, v in self.components.items()}
        out["total"] = float(self.total.detach())
        return out


def _check_shapes(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise LossShapeError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def bce(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy on probabilities clamped to [1e-7, 1 - 1e-7]."""
    _check_shapes(pred, target, "bce")
    p = pred.clamp(EPS_CLAMP, 1 - EPS_CLAMP)
    y = target.to(p.dtype)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()


def soft_iou(pred: torch.Tensor, target: torch.Tensor, eps: float = EPS_IOU) -> torch.Tensor:
    """1 - soft IoU, computed per batch element then averaged."""
    _check_shapes(pred, target, "soft_iou")
    p = pred.flatten(1)
    y = target.to(p.dtype).flatten(1)
    inter = (p * y).sum(1)
    union = y.sum(1) + p.sum(1) - inter
    return (1 - (inter + eps) / (union + eps)).mean()


def mse(recon: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
    _check_shapes(recon, image, "mse")
    return ((recon - image) ** 2).mean()


def contrastive(f5: torch.Tensor, eot: torch.Tensor, proj: nn.Module | None = None,
                tau: float = 0.07) -> torch.Tensor:
    """Symmetric InfoNCE between pooled, stop-gradient f5 and the eot text vectors.

    ``proj`` maps encoder width to text width; it may be omitted when the two
    already agree.
    """
    n = f5.shape[0]
    if n == 0 or eot.shape[0] == 0:
        raise EmptyBatchError("contrastive loss needs at least one pair")
    if eot.shape[0] != n:
        raise LossShapeError(f"contrastive: {n} images vs {eot.shape[0]} text vectors")
    z_img = f5.detach().mean(dim=(2, 3))
    if proj is not None:
        z_img = proj(z_img)
    z_img = F.normalize(z_img, dim=1)
    z_txt = F.normalize(eot, dim=1)
    logits = z_img @ z_txt.t() / tau
    labels = torch.arange(n, device=logits.device)
    return 0.5 * (F.cross_entropy(logits, labels) + F.cross_entropy(logits.t(), labels))


def _combine(components: dict[str, torch.Tensor], weights: dict[str, float]) -> LossValue:
    # Zero-weighted terms stay out of the graph so they cannot push gradients
    # (or weight decay) onto parameters they would otherwise touch.
    terms = [weights[k] * v for k, v in components.items() if weights[k] != 0]
    total = torch.stack(terms).sum() if terms else next(iter(components.values())).detach() * 0
    return LossValue(total, {k: v.detach() for k, v in components.items()}, dict(weights))


def pretrain_loss(recon, image, f5, eot, proj=None, tau: float = 0.07,
                  contra_weight: float = 1.0, mse_weight: float = 1.0) -> LossValue:
    components = {"contra": contrastive(f5, eot, proj, tau), "mse": mse(recon, image)}
    return _combine(components, {"contra": contra_weight, "mse": mse_weight})


def train_loss(pred, target, lambda1: float = 1.0, lambda2: float = 1.0,
               iou_eps: float = EPS_IOU) -> LossValue:
    components = {"bce": bce(pred, target), "softiou": soft_iou(pred, target, iou_eps)}
    return _combine(components, {"bce": lambda1, "softiou": lambda2})
