"""Channel tokenization: magnitude/phase split, convolutional patches, LST, sequence embedding."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


def split_mag_phase(cfr: torch.Tensor) -> torch.Tensor:
    """(..., A, K) complex -> (..., 2, A, K) real with phase in (-pi, pi].

    The phase of an exact zero is 0.
    """
    if not torch.is_complex(cfr):
        cfr = torch.complex(cfr, torch.zeros_like(cfr))
    mag = cfr.abs()
    phase = torch.angle(cfr)
    # angle(-x - 0j) = -pi; fold onto the half-open interval
    phase = torch.where(phase <= -math.pi, phase + 2 * math.pi, phase)
    phase = torch.where(mag == 0, torch.zeros_like(phase), phase)
    return torch.stack([mag, phase], dim=-3)


def patch_grid(n_ant: int, n_subc: int, kernel: int, stride: int, padding: int) -> tuple[int, int]:
    """Convolution output grid (rows over antennas, cols over subcarriers)."""
    if n_ant + 2 * padding < kernel or n_subc + 2 * padding < kernel:
        raise ValueError(
            f"kernel {kernel} larger than padded input {n_ant + 2 * padding}x{n_subc + 2 * padding}"
        )
    return (
        (n_ant + 2 * padding - kernel) // stride + 1,
        (n_subc + 2 * padding - kernel) // stride + 1,
    )


def patch_count(n_ant: int, n_subc: int, kernel: int, stride: int, padding: int) -> int:
    rows, cols = patch_grid(n_ant, n_subc, kernel, stride, padding)
    return rows * cols


def patch_embed(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None,
                stride: int, padding: int) -> torch.Tensor:
    """Zero-padded strided convolution, flattened antenna-major to (B, n_patch, n_embed)."""
    kernel = weight.shape[-1]
    patch_grid(x.shape[-2], x.shape[-1], kernel, stride, padding)
    y = F.conv2d(x, weight, bias, stride=stride, padding=padding)
    return y.flatten(2).transpose(1, 2)


def sequence_embedding(length: int, n_embed: int, dtype=torch.float32) -> torch.Tensor:
    if n_embed % 2:
        raise ValueError(f"sequence embedding width must be even, got {n_embed}")
    seq = np.arange(length, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, n_embed, 2, dtype=np.float64) / n_embed)
    emb = np.empty((length, n_embed))
    emb[:, 0::2] = np.sin(seq / freq)
    emb[:, 1::2] = np.cos(seq / freq)
    return torch.from_numpy(emb).to(dtype)


def assemble_sequence(patches: torch.Tensor, lst: torch.Tensor, seq_emb: torch.Tensor) -> torch.Tensor:
    """Prepend the LST to each patch sequence and add the sequence embedding."""
    if patches.dim() == 2:
        patches = patches.unsqueeze(0)
    b, n_patch, n_embed = patches.shape
    if lst.shape != (n_embed,) or seq_emb.shape != (n_patch + 1, n_embed):
        raise ValueError(
            f"shape mismatch: patches {tuple(patches.shape)}, lst {tuple(lst.shape)}, "
            f"seq_emb {tuple(seq_emb.shape)}"
        )
    tokens = torch.cat([lst.expand(b, 1, n_embed), patches], dim=1)
    return tokens + seq_emb


class ChannelTokenizer(nn.Module):
    """CFR -> (B, n_patch + 1, n_embed) token sequence with the LST in row 0."""

    def __init__(self, n_ant: int, n_subc: int, n_embed: int, kernel: int = 6,
                 stride: int = 4, padding: int = 1):
        super().__init__()
        self.n_ant, self.n_subc = n_ant, n_subc
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.n_patch = patch_count(n_ant, n_subc, kernel, stride, padding)
        self.conv = nn.Conv2d(2, n_embed, kernel, stride=stride, padding=padding)
        self.lst = nn.Parameter(torch.randn(n_embed) * 0.02)
        self.register_buffer("seq_emb", sequence_embedding(self.n_patch + 1, n_embed), persistent=False)

    def forward(self, cfr: torch.Tensor) -> torch.Tensor:
        if cfr.shape[-2:] != (self.n_ant, self.n_subc):
            raise ValueError(f"expected CFR of shape (*, {self.n_ant}, {self.n_subc}), got {tuple(cfr.shape)}")
        x = split_mag_phase(cfr).to(self.conv.weight.dtype)
        patches = patch_embed(x, self.conv.weight, self.conv.bias, self.stride, self.padding)
        return assemble_sequence(patches, self.lst, self.seq_emb.to(patches.dtype))


def unfold_patches(x: torch.Tensor, kernel: int, stride: int, padding: int) -> torch.Tensor:
    """(B, C, A, K) -> (B, n_patch, C * kernel * kernel), antenna-major patch order."""
    return F.unfold(x, kernel, padding=padding, stride=stride).transpose(1, 2)


def fold_patches(tokens: torch.Tensor, n_ant: int, n_subc: int, kernel: int, stride: int,
                 padding: int, average: bool = True) -> torch.Tensor:
    """Inverse of :func:`unfold_patches`.

    Overlapping contributions are summed; with ``average`` they are divided
    by the per-pixel patch multiplicity so that fold(unfold(x)) == x.
    Padding rows/columns are cropped.
    """
    cols = tokens.transpose(1, 2)
    out = F.fold(cols, (n_ant, n_subc), kernel, padding=padding, stride=stride)
    if average:
        ones = torch.ones(1, cols.shape[1], cols.shape[2], dtype=cols.dtype, device=cols.device)
        mult = F.fold(ones, (n_ant, n_subc), kernel, padding=padding, stride=stride)
        if (mult == 0).any():
            raise ValueError("patch grid does not cover every input pixel")
        out = out / mult
    return out
