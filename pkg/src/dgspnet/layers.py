"""Small building blocks shared by the visual network and the prompt engine."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class MultiHeadAttention(nn.Module):
    """Multi-head scaled dot-product attention that also returns its weights.

    Keys and values may have a different width (``kdim``) from the queries.
    """

    def __init__(self, dim: int, heads: int, kdim: int | None = None):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        kdim = dim if kdim is None else kdim
        self.heads = heads
        self.head_dim = dim // heads
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(kdim, dim)
        self.v_proj = nn.Linear(kdim, dim)
        self.out_proj = nn.Linear(dim, dim)

    def forward(self, query, key, value, mask=None):
        """
        Args:
            query: (n, lq, dim)
            key, value: (n, lk, kdim)
            mask: optional boolean (lq, lk); True marks blocked positions.

        Returns:
            output (n, lq, dim) and attention weights (n, heads, lq, lk).
        """
        n, lq, _ = query.shape
        lk = key.shape[1]
        q = self.q_proj(query).view(n, lq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(key).view(n, lk, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(value).view(n, lk, self.heads, self.head_dim).transpose(1, 2)
        logits = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if mask is not None:
            logits = logits.masked_fill(mask, float("-inf"))
        weights = logits.softmax(dim=-1)
        out = (weights @ v).transpose(1, 2).reshape(n, lq, -1)
        return self.out_proj(out), weights


def norm2d(channels: int, kind: str) -> nn.Module:
    return nn.BatchNorm2d(channels) if kind == "batch" else nn.Identity()


class ConvBlock(nn.Sequential):
    """Conv3x3 -> norm -> ReLU."""

    def __init__(self, cin: int, cout: int, norm: str = "batch"):
        super().__init__(nn.Conv2d(cin, cout, 3, padding=1), norm2d(cout, norm), nn.ReLU())


def upsample2x(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


def init_weights(module: nn.Module) -> None:
    """Fan-in scaled uniform weights and zero biases for convs and linears."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
