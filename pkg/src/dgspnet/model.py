"""Visual network: hierarchical encoder, cross-attention bridge and TGSA decoder.

Shapes follow the PyTorch convention (n, c, h, w). Encoder level ``i`` (1-based)
sits at stride ``2 ** (i - 1)``, so inputs must have H and W divisible by 16.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .errors import ConfigurationError, EmptyPromptError, InputShapeError, StageIndexError
from .layers import ConvBlock, MultiHeadAttention, norm2d, upsample2x

STRIDES = (1, 2, 4, 8, 16)


class _Stem(nn.Module):
    """[MaxPool2x2] -> ConvBlock -> ConvBlock, shared by pre- and re-blocks."""

    def __init__(self, cin: int, cout: int, downsample: bool, norm: str, level: int):
        super().__init__()
        self.cin = cin
        self.cout = cout
        self.downsample = downsample
        self.level = level
        self.body = nn.Sequential(ConvBlock(cin, cout, norm), ConvBlock(cout, cout, norm))

    def features(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != self.cin:
            raise ConfigurationError(
                f"encoder level {self.level}: expected {self.cin} input channels, "
                f"got shape {tuple(x.shape)}")
        if self.downsample:
            if x.shape[-2] % 2 or x.shape[-1] % 2:
                raise ConfigurationError(
                    f"encoder level {self.level}: cannot halve odd spatial dims {tuple(x.shape[-2:])}")
            x = F.max_pool2d(x, 2)
        return self.body(x)


class PreBlock(_Stem):
    """Pre-encoder block with a GMP+GAP channel gate."""

    def __init__(self, cin: int, cout: int, downsample: bool, norm: str = "batch", level: int = 1):
        super().__init__(cin, cout, downsample, norm, level)
        self.gate_conv = nn.Conv2d(cout, cout, 1)

    def gate(self, f_mid: torch.Tensor) -> torch.Tensor:
        pooled = f_mid.amax(dim=(2, 3), keepdim=True) + f_mid.mean(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.gate_conv(pooled))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        f_mid = self.features(x)
        return f_mid * self.gate(f_mid)


class TGCA(nn.Module):
    """Text-guided channel attention.

    The channel gate is a linear fusion of the pooled visual descriptor and an
    MLP embedding of the text vector, squashed by a sigmoid and applied as a
    residual: ``out = f + f * w``.
    """

    def __init__(self, channels: int, text_dim: int):
        super().__init__()
        self.text_dim = text_dim
        self.text_mlp = nn.Sequential(
            nn.Linear(text_dim, channels), nn.ReLU(), nn.Linear(channels, channels))
        self.fuse = nn.Linear(2 * channels, channels)

    def weights(self, f_mid: torch.Tensor, text_vec: torch.Tensor) -> torch.Tensor:
        if text_vec.shape[-1] != self.text_dim:
            raise ConfigurationError(
                f"TGCA expects text vectors of width {self.text_dim}, got {text_vec.shape[-1]}")
        text_vec = text_vec.reshape(-1, self.text_dim)
        if text_vec.shape[0] == 1:
            text_vec = text_vec.expand(f_mid.shape[0], -1)
        pooled = f_mid.mean(dim=(2, 3))
        w = torch.sigmoid(self.fuse(torch.cat([pooled, self.text_mlp(text_vec)], dim=1)))
        return w[:, :, None, None]

    def forward(self, f_mid: torch.Tensor, text_vec: torch.Tensor) -> torch.Tensor:
        return f_mid + f_mid * self.weights(f_mid, text_vec)


class ReBlock(_Stem):
    """Re-encoder block: same stem as PreBlock, TGCA in place of the plain gate."""

    def __init__(self, cin: int, cout: int, text_dim: int, norm: str = "batch", level: int = 4):
        super().__init__(cin, cout, True, norm, level)
        self.tgca = TGCA(cout, text_dim)

    def forward(self, x: torch.Tensor, text_vec: torch.Tensor) -> torch.Tensor:
        return self.tgca(self.features(x), text_vec)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.widths
        self.pre = nn.ModuleList([
            PreBlock(cfg.in_channels, w[0], False, cfg.norm, level=1),
            PreBlock(w[0], w[1], True, cfg.norm, level=2),
            PreBlock(w[1], w[2], True, cfg.norm, level=3),
        ])
        self.re = nn.ModuleList([
            ReBlock(w[2], w[3], cfg.text_dim, cfg.norm, level=4),
            ReBlock(w[3], w[4], cfg.text_dim, cfg.norm, level=5),
        ])

    def pre_encode(self, image: torch.Tensor) -> list[torch.Tensor]:
        if image.dim() != 4:
            raise InputShapeError(f"expected an (n, c, h, w) batch, got shape {tuple(image.shape)}")
        h, w = image.shape[-2:]
        if h % 16 or w % 16:
            raise InputShapeError(f"input spatial dims {h}x{w} must be multiples of 16")
        feats = []
        x = image
        for block in self.pre:
            x = block(x)
            feats.append(x)
        return feats

    def re_encode(self, f3: torch.Tensor, text_vec: torch.Tensor) -> list[torch.Tensor]:
        f4 = self.re[0](f3, text_vec)
        f5 = self.re[1](f4, text_vec)
        return [f4, f5]

    def forward(self, image: torch.Tensor, text) -> list[torch.Tensor]:
        """Return the five-level pyramid; ``text`` is a TextBundle (its eot row is used)."""
        low = self.pre_encode(image)
        return low + self.re_encode(low[-1], text.eot)


class CrossAttentionBridge(nn.Module):
    """Visual tokens of f5 attend over the prompt's text sequence."""

    def __init__(self, in_channels: int, dim: int, text_dim: int, heads: int = 4):
        super().__init__()
        self.in_proj = nn.Linear(in_channels, dim)
        self.attn = MultiHeadAttention(dim, heads, kdim=text_dim)
        self.norm = nn.LayerNorm(dim)

    def attend(self, f5: torch.Tensor, text_seq: torch.Tensor):
        if text_seq.shape[-2] == 0:
            raise EmptyPromptError("cross-attention needs at least one text position")
        n, _, h, w = f5.shape
        if text_seq.dim() == 2:
            text_seq = text_seq.unsqueeze(0)
        if text_seq.shape[0] == 1 and n > 1:
            text_seq = text_seq.expand(n, -1, -1)
        q = self.in_proj(f5.flatten(2).transpose(1, 2))
        a, weights = self.attn(q, text_seq, text_seq)
        out = self.norm(q + a).transpose(1, 2).reshape(n, -1, h, w)
        return out, weights

    def forward(self, f5: torch.Tensor, text_seq: torch.Tensor) -> torch.Tensor:
        return self.attend(f5, text_seq)[0]


class TGSAStage(nn.Module):
    """One decoder stage: upsample + skip fusion, text-guided spatial gate, refine.

    The spatial weights are a softmax over all h*w positions of the scaled
    similarity between projected visual features and the projected eot vector.
    """

    def __init__(self, skip_channels: int, dim: int, text_dim: int, latent_dim: int,
                 norm: str = "batch", index: int = 4):
        super().__init__()
        self.index = index
        self.latent_dim = latent_dim
        self.skip_proj = nn.Conv2d(skip_channels, dim, 1)
        self.vis_mlp = nn.Sequential(
            nn.Conv2d(dim, latent_dim, 1), nn.ReLU(), nn.Conv2d(latent_dim, latent_dim, 1))
        self.txt_mlp = nn.Sequential(
            nn.Linear(text_dim, latent_dim), nn.ReLU(), nn.Linear(latent_dim, latent_dim))
        self.refine = ConvBlock(dim, dim, norm)

    def fuse(self, d_in: torch.Tensor, f_skip: torch.Tensor) -> torch.Tensor:
        if (2 * d_in.shape[-2], 2 * d_in.shape[-1]) != tuple(f_skip.shape[-2:]):
            raise StageIndexError(
                f"decoder stage {self.index}: input {tuple(d_in.shape[-2:])} is not half "
                f"of skip {tuple(f_skip.shape[-2:])}")
        return upsample2x(d_in) + self.skip_proj(f_skip)

    def spatial_weights(self, f_fused: torch.Tensor, eot: torch.Tensor) -> torch.Tensor:
        n, _, h, w = f_fused.shape
        v = self.vis_mlp(f_fused)
        t = self.txt_mlp(eot.reshape(-1, eot.shape[-1]))
        if t.shape[0] == 1:
            t = t.expand(n, -1)
        logits = torch.einsum("nchw,nc->nhw", v, t) / math.sqrt(self.latent_dim)
        return logits.reshape(n, -1).softmax(dim=1).reshape(n, 1, h, w)

    def forward(self, d_in: torch.Tensor, f_skip: torch.Tensor, eot: torch.Tensor) -> torch.Tensor:
        f_fused = self.fuse(d_in, f_skip)
        w = self.spatial_weights(f_fused, eot)
        return self.refine(f_fused + w * f_fused)


class PredictionHead(nn.Module):
    def __init__(self, dim: int, out_channels: int = 1):
        super().__init__()
        self.conv = nn.Conv2d(dim, dim, 3, padding=1)
        self.out = nn.Conv2d(dim, out_channels, 1)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(F.relu(self.conv(x)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logits(x))


class Decoder(nn.Module):
    """Bridge on f5 followed by four TGSA stages against skips f4..f1."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.widths
        d = cfg.dec_width
        self.bridge = CrossAttentionBridge(w[4], d, cfg.text_dim, cfg.bridge_heads)
        self.stages = nn.ModuleList([
            TGSAStage(w[level - 1], d, cfg.text_dim, cfg.tgsa_dim, cfg.norm, index=level)
            for level in (4, 3, 2, 1)
        ])
        self.head = PredictionHead(d)

    def forward(self, pyramid: list[torch.Tensor], text) -> torch.Tensor:
        x = self.bridge(pyramid[4], text.seq)
        for stage, skip in zip(self.stages, pyramid[3::-1]):
            x = stage(x, skip, text.eot)
        return self.head(x)


class ReconstructionDecoder(nn.Module):
    """Pretraining decoder: transposed-conv blocks mirroring the encoder, no skips."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.widths
        blocks = []
        for cin, cout in zip(w[:0:-1], w[-2::-1]):
            blocks.append(nn.Sequential(
                nn.ConvTranspose2d(cin, cout, 2, stride=2), norm2d(cout, cfg.norm), nn.ReLU()))
        self.blocks = nn.Sequential(*blocks)
        self.out = nn.Conv2d(w[0], cfg.in_channels, 1)

    def forward(self, f5: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.out(self.blocks(f5)))
