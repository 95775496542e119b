"""Dual-granularity prompts: templates, tokenizer, inversion net and frozen text encoder.

The coarse prompt is a fixed template; the fine-grained part is a handful of
per-image token embeddings produced by the inversion net from the first three
encoder levels and written into the template's ``<sK>`` slots before the
(frozen) text encoder runs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn as nn

from .config import SCENES, ModelConfig
from .errors import (PromptInjectionError, PyramidShapeError, TokenizationError,
                     UnsupportedVariantError)
from .layers import MultiHeadAttention, init_weights

_PREFIX = "A photo of an infrared image, with "

SOT = "[sot]"
EOT = "[eot]"
MAX_SLOTS = 4
_SLOT_RE = re.compile(r"<s(\d+)>")
_TOKEN_RE = re.compile(r"<s\d+>|[a-z0-9]+|[^\sa-z0-9]")
_NO_SPACE_BEFORE = {",", ".", "!", "?", ";", ":"}


@dataclass(frozen=True)
class PromptTemplate:
    text: str
    n_tokens: int

    @classmethod
    def from_text(cls, text: str) -> "PromptTemplate":
        found = [int(m) for m in _SLOT_RE.findall(text)]
        if found != list(range(1, len(found) + 1)):
            raise UnsupportedVariantError(
                f"slot markers must be <s1>..<sN> in order without gaps, got {found}")
        return cls(text, len(found))


def build_template(n_tokens: int, scene: str = "the") -> PromptTemplate:
    """Return the prompt variant with ``n_tokens`` learned slots (0..4)."""
    if scene not in SCENES:
        raise UnsupportedVariantError(f"scene must be one of {SCENES}, got {scene!r}")
    where = "the" if scene == "the" else f"the {scene}"
    bodies = {
        0: f"targets in {where} background.",
        1: f"<s1> in {where} background.",
        2: "<s1> in <s2> background.",
        3: "<s1> <s2> in <s3> background.",
        4: "<s1> <s2> in <s3> <s4> background.",
    }
    if n_tokens not in bodies:
        raise UnsupportedVariantError(f"no prompt variant with {n_tokens} tokens (supported: 0..4)")
    return PromptTemplate(_PREFIX + bodies[n_tokens], n_tokens)


def base_lexicon() -> list[str]:
    words = set()
    for scene in SCENES:
        for n in range(MAX_SLOTS + 1):
            words.update(_TOKEN_RE.findall(build_template(n, scene).text.lower()))
    words -= {f"<s{i}>" for i in range(1, MAX_SLOTS + 1)}
    return [SOT, EOT] + [f"<s{i}>" for i in range(1, MAX_SLOTS + 1)] + sorted(words)


@dataclass
class TokenSequence:
    ids: list[int]
    slot_positions: list[int] = field(default_factory=list)

    @property
    def eot_position(self) -> int:
        return len(self.ids) - 1

    def __len__(self) -> int:
        return len(self.ids)


class Tokenizer:
    """Lowercase word-level tokenizer over a fixed vocabulary."""

    def __init__(self, vocab: list[str], context_length: int = 77):
        if len(set(vocab)) != len(vocab):
            raise TokenizationError("vocabulary contains duplicate tokens")
        self.vocab = list(vocab)
        self.index = {tok: i for i, tok in enumerate(self.vocab)}
        self.context_length = context_length

    @classmethod
    def default(cls, extra_texts: tuple[str, ...] = (), context_length: int = 77) -> "Tokenizer":
        vocab = base_lexicon()
        known = set(vocab)
        for text in extra_texts:
            for tok in _TOKEN_RE.findall(text.lower()):
                if tok not in known:
                    vocab.append(tok)
                    known.add(tok)
        return cls(vocab, context_length)

    @classmethod
    def from_file(cls, path: str | Path, context_length: int = 77) -> "Tokenizer":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines, context_length)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(tok + "\n" for tok in self.vocab), encoding="utf-8")

    def tokenize(self, text: str) -> TokenSequence:
        words = _TOKEN_RE.findall(text.lower())
        unknown = [w for w in words if w not in self.index]
        if unknown:
            raise TokenizationError(f"tokens not in vocabulary: {unknown}")
        ids = [self.index[SOT]] + [self.index[w] for w in words] + [self.index[EOT]]
        if len(ids) > self.context_length:
            raise TokenizationError(
                f"prompt has {len(ids)} tokens, context length is {self.context_length}")
        slots = [i for i, w in enumerate(words, start=1) if _SLOT_RE.fullmatch(w)]
        return TokenSequence(ids, slots)

    def detokenize(self, ids: list[int]) -> str:
        words = [self.vocab[i] for i in ids if self.vocab[i] not in (SOT, EOT)]
        out = ""
        for w in words:
            if out and w not in _NO_SPACE_BEFORE:
                out += " "
            out += w
        return out[:1].upper() + out[1:]


@dataclass
class TextBundle:
    """Text encoder output: full sequence (n, l, d_t) and the eot row (n, d_t)."""

    seq: torch.Tensor
    eot: torch.Tensor


class _TextLayer(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads)
        self.ln2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))

    def forward(self, x, mask):
        h = self.ln1(x)
        x = x + self.attn(h, h, h, mask)[0]
        return x + self.mlp(self.ln2(x))


class TextEncoder(nn.Module):
    """Seeded, randomly initialized causal transformer standing in for a frozen CLIP text tower.

    Parameters never require gradients; the module is differentiable with
    respect to the injected slot embeddings only.
    """

    def __init__(self, vocab_size: int, dim: int = 64, heads: int = 4, layers: int = 2,
                 context_length: int = 77, seed: int = 0):
        super().__init__()
        self.dim = dim
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.token_embedding = nn.Embedding(vocab_size, dim)
            self.positional = nn.Parameter(torch.empty(context_length, dim))
            self.layers = nn.ModuleList([_TextLayer(dim, heads) for _ in range(layers)])
            self.ln_final = nn.LayerNorm(dim)
            self.projection = nn.Linear(dim, dim, bias=False)
            nn.init.normal_(self.token_embedding.weight, std=0.02)
            nn.init.normal_(self.positional, std=0.01)
            for layer in self.layers:
                init_weights(layer)
            nn.init.normal_(self.projection.weight, std=dim ** -0.5)
        self.requires_grad_(False)

    def forward(self, tokens: TokenSequence, injected: torch.Tensor | None = None,
                batch_size: int | None = None) -> TextBundle:
        n_slots = len(tokens.slot_positions)
        if injected is None:
            if n_slots:
                raise PromptInjectionError(f"template has {n_slots} slots but no tokens were given")
            n = batch_size or 1
        else:
            if injected.dim() != 3 or injected.shape[1] != n_slots or injected.shape[2] != self.dim:
                raise PromptInjectionError(
                    f"expected injected tokens of shape (n, {n_slots}, {self.dim}), "
                    f"got {tuple(injected.shape)}")
            n = injected.shape[0]
        l = len(tokens)
        if l > self.positional.shape[0]:
            raise TokenizationError(f"prompt has {l} tokens, context length is {self.positional.shape[0]}")
        ids = torch.tensor(tokens.ids, device=self.positional.device)
        x = self.token_embedding(ids).unsqueeze(0).expand(n, l, self.dim)
        if n_slots:
            x = x.clone().to(injected.dtype)
            x[:, tokens.slot_positions] = injected
        x = x + self.positional[:l]
        mask = torch.ones(l, l, dtype=torch.bool, device=x.device).triu(1)
        for layer in self.layers:
            x = layer(x, mask)
        seq = self.projection(self.ln_final(x))
        return TextBundle(seq=seq, eot=seq[:, tokens.eot_position])


class PyramidFusion(nn.Module):
    """Strided depthwise 3x3 convs bring f1..f3 to stride 16, then concat + 1x1 conv."""

    def __init__(self, widths: list[int], out_channels: int):
        super().__init__()
        self.down = nn.ModuleList([
            nn.Conv2d(c, c, 3, stride=s, padding=1, groups=c)
            for c, s in zip(widths[:3], (16, 8, 4))
        ])
        self.proj = nn.Conv2d(sum(widths[:3]), out_channels, 1)

    def forward(self, f1: torch.Tensor, f2: torch.Tensor, f3: torch.Tensor) -> torch.Tensor:
        outs = [conv(f) for conv, f in zip(self.down, (f1, f2, f3))]
        dims = {tuple(o.shape[-2:]) for o in outs}
        if len(dims) != 1:
            raise PyramidShapeError(f"downsampled pyramid levels disagree in size: {sorted(dims)}")
        return self.proj(torch.cat(outs, dim=1))


class InversionNet(nn.Module):
    """Learnable queries attend over [queries; image tokens], then an MLP maps to text width."""

    def __init__(self, n_tokens: int, channels: int, text_dim: int, heads: int = 4):
        super().__init__()
        self.n_tokens = n_tokens
        self.queries = nn.Parameter(torch.randn(n_tokens, channels) * 0.02)
        self.attn = MultiHeadAttention(channels, heads)
        self.mlp = nn.Sequential(
            nn.Linear(channels, channels), nn.GELU(), nn.Linear(channels, text_dim))

    def forward(self, f_img: torch.Tensor) -> torch.Tensor:
        n, c = f_img.shape[:2]
        seq = f_img.flatten(2).transpose(1, 2)
        q = self.queries.unsqueeze(0).expand(n, -1, -1)
        kv = torch.cat([q, seq], dim=1)
        out, _ = self.attn(q, kv, kv)
        return self.mlp(out)


class PromptEngine(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.template is not None:
            self.template = PromptTemplate.from_text(cfg.template)
        else:
            self.template = build_template(cfg.n_tokens, cfg.scene)
        if self.template.n_tokens > MAX_SLOTS:
            raise UnsupportedVariantError(f"at most {MAX_SLOTS} slots are supported")
        self.tokenizer = Tokenizer.default((self.template.text,), cfg.context_length)
        self.tokens = self.tokenizer.tokenize(self.template.text)
        self.fusion = PyramidFusion(cfg.widths, cfg.inv_channels)
        self.inversion = InversionNet(self.template.n_tokens, cfg.inv_channels, cfg.text_dim,
                                      cfg.inv_heads)
        self.text_encoder = TextEncoder(len(self.tokenizer.vocab), cfg.text_dim, cfg.text_heads,
                                        cfg.text_layers, cfg.context_length, cfg.text_seed)

    @property
    def n_tokens(self) -> int:
        return self.template.n_tokens

    def semantic_tokens(self, f1, f2, f3) -> torch.Tensor:
        # Detached: prompt losses must never reach the encoder through this path.
        f_img = self.fusion(f1.detach(), f2.detach(), f3.detach())
        return self.inversion(f_img)

    def encode_text(self, injected: torch.Tensor | None, batch_size: int | None = None) -> TextBundle:
        return self.text_encoder(self.tokens, injected, batch_size)

    def forward(self, f1, f2, f3) -> TextBundle:
        if self.n_tokens == 0:
            return self.encode_text(None, f1.shape[0])
        return self.encode_text(self.semantic_tokens(f1, f2, f3))
