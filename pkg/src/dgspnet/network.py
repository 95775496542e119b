"""Assembled networks for the two training phases.

Both share the ``encoder.*`` and ``prompt.*`` parameter names so a pretraining
checkpoint maps onto the detection network by name.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import ModelConfig
from .layers import init_weights
from .model import Decoder, Encoder, ReconstructionDecoder
from .prompt import PromptEngine, TextBundle

PHASE_GROUPS = {
    "pretrain": ("encoder", "recon", "inversion", "proj"),
    "train": ("encoder", "decoder"),
}


def _build_trunk(cfg: ModelConfig) -> tuple[Encoder, PromptEngine]:
    # Built and initialized before any head so both phases draw identical
    # trunk weights from the same seed.
    encoder = Encoder(cfg)
    prompt = PromptEngine(cfg)
    init_weights(encoder)
    init_weights(prompt.fusion)
    init_weights(prompt.inversion.attn)
    init_weights(prompt.inversion.mlp)
    return encoder, prompt


class DGSPNet(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder, self.prompt = _build_trunk(cfg)
        self.decoder = Decoder(cfg)
        init_weights(self.decoder)

    def text_for(self, low: list[torch.Tensor]) -> TextBundle:
        return self.prompt(*low)

    def forward(self, image: torch.Tensor, text: TextBundle | None = None) -> torch.Tensor:
        """Probability map of the same spatial size as ``image``.

        When ``text`` is omitted the prompt is built from the image itself.
        """
        low = self.encoder.pre_encode(image)
        if text is None:
            text = self.text_for(low)
        pyramid = low + self.encoder.re_encode(low[-1], text.eot)
        return self.decoder(pyramid, text)

    def param_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        return _groups(self)


class ReconstructionNet(nn.Module):
    """Encoder + prompt engine + transposed-conv decoder and a projection head for pretraining."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder, self.prompt = _build_trunk(cfg)
        self.recon = ReconstructionDecoder(cfg)
        self.proj = nn.Linear(cfg.widths[4], cfg.text_dim)
        init_weights(self.recon)
        init_weights(self.proj)

    def forward(self, image: torch.Tensor):
        """Return (reconstruction, f5, text bundle)."""
        low = self.encoder.pre_encode(image)
        text = self.prompt(*low)
        f4, f5 = self.encoder.re_encode(low[-1], text.eot)
        return self.recon(f5), f5, text

    def param_groups(self) -> dict[str, list[tuple[str, nn.Parameter]]]:
        return _groups(self)


def _group_of(name: str) -> str:
    if name.startswith("prompt.text_encoder."):
        return "text"
    if name.startswith("prompt."):
        return "inversion"
    return name.split(".", 1)[0]


def _groups(model: nn.Module) -> dict[str, list[tuple[str, nn.Parameter]]]:
    groups: dict[str, list[tuple[str, nn.Parameter]]] = {}
    for name, p in model.named_parameters():
        groups.setdefault(_group_of(name), []).append((name, p))
    return groups


def set_phase(model: nn.Module, phase: str) -> list[str]:
    """Freeze everything outside the phase's trainable groups; return the trainable group names."""
    trainable = PHASE_GROUPS[phase]
    active = []
    for group, params in _groups(model).items():
        on = group in trainable
        for _, p in params:
            p.requires_grad_(on)
        if on:
            active.append(group)
    return active
