"""The LWLM transformer encoder and its partitioned latent output."""

from __future__ import annotations

import io
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn

from .dataio import atomic_write_bytes
from .embedding import ChannelTokenizer


@dataclass(frozen=True)
class EncoderConfig:
    n_ant: int = 32
    n_subc: int = 128
    kernel: int = 6
    stride: int = 4
    padding: int = 1
    n_enc: int = 4
    n_heads: int = 4
    n_embed: int = 512
    n_latent: int = 256
    d_ff: int = 256
    partition: tuple[int, int, int] = (96, 96, 64)
    dropout: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "partition", tuple(int(p) for p in self.partition))
        if sum(self.partition) != self.n_latent:
            raise ValueError(f"partition {self.partition} does not sum to n_latent={self.n_latent}")
        if self.n_embed % self.n_heads:
            raise ValueError(f"n_embed={self.n_embed} not divisible by n_heads={self.n_heads}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["partition"] = list(self.partition)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


@dataclass
class LatentRepresentation:
    """Encoder output ``o`` of shape (B, n_patch + 1, n_latent)."""

    o: torch.Tensor
    partition: tuple[int, int, int]

    def _slice(self, i: int) -> torch.Tensor:
        start = sum(self.partition[:i])
        return self.o[..., start:start + self.partition[i]]

    @property
    def sfmcm(self) -> torch.Tensor:
        return self._slice(0)

    @property
    def dti(self) -> torch.Tensor:
        return self._slice(1)

    @property
    def picl(self) -> torch.Tensor:
        return self._slice(2)

    @property
    def lst(self) -> torch.Tensor:
        return self.o[..., 0, :]


def transformer_stack(n_layers: int, n_embed: int, n_heads: int, d_ff: int, dropout: float) -> nn.TransformerEncoder:
    """Pre-norm self-attention blocks (GELU feed-forward)."""
    layer = nn.TransformerEncoderLayer(
        n_embed, n_heads, dim_feedforward=d_ff, dropout=dropout,
        activation="gelu", batch_first=True, norm_first=True,
    )
    return nn.TransformerEncoder(layer, n_layers, enable_nested_tensor=False)


class LWLMEncoder(nn.Module):
    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        c = config
        self.tokenizer = ChannelTokenizer(c.n_ant, c.n_subc, c.n_embed, c.kernel, c.stride, c.padding)
        self.layers = transformer_stack(c.n_enc, c.n_embed, c.n_heads, c.d_ff, c.dropout)
        self.norm = nn.LayerNorm(c.n_embed)
        self.latent_proj = nn.Linear(c.n_embed, c.n_latent)

    @property
    def n_patch(self) -> int:
        return self.tokenizer.n_patch

    def forward_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.latent_proj(self.norm(self.layers(tokens)))

    def forward(self, cfr: torch.Tensor) -> LatentRepresentation:
        squeeze = cfr.dim() == 2
        if squeeze:
            cfr = cfr.unsqueeze(0)
        o = self.forward_tokens(self.tokenizer(cfr))
        if squeeze:
            o = o.squeeze(0)
        return LatentRepresentation(o, self.config.partition)


def encode(cfr: torch.Tensor, encoder: LWLMEncoder) -> LatentRepresentation:
    """Eval-mode, gradient-free encoding."""
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            return encoder(cfr)
    finally:
        encoder.train(was_training)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def parameter_report(module: nn.Module, depth: int = 1) -> dict[str, int]:
    """Trainable-parameter counts per named submodule, plus ``total``.

    Parameters registered directly on ``module`` are listed under their own
    names, so the entries always sum to the total.
    """
    report: dict[str, int] = {}
    for name, p in module.named_parameters():
        if not p.requires_grad:
            continue
        key = ".".join(name.split(".")[:depth]) if "." in name else name
        report[key] = report.get(key, 0) + p.numel()
    report["total"] = count_parameters(module)
    return report


def save_encoder(encoder: LWLMEncoder, path: str | Path, seed: int | None = None) -> None:
    """Weights plus the full config and seed, written atomically."""
    buf = io.BytesIO()
    torch.save({"config": encoder.config.to_dict(), "seed": seed, "state_dict": encoder.state_dict()}, buf)
    atomic_write_bytes(path, buf.getvalue())


def load_encoder(path: str | Path) -> tuple[LWLMEncoder, int | None]:
    ckpt = torch.load(path, map_location="cpu", weights_only=True)
    encoder = LWLMEncoder(EncoderConfig.from_dict(ckpt["config"]))
    encoder.load_state_dict(ckpt["state_dict"])
    return encoder, ckpt["seed"]
