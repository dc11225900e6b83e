"""Task decoders for ToA, AoA, single-BS and attention-fused multi-BS localization."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .channel import ChannelSample
from .dataio import Normalizer
from .encoder import LWLMEncoder


class TaskDecoder(nn.Module):
    """Config embedding added to the LST vector, then a two-layer regression MLP.

    ``forward`` returns the prediction and the hidden activation (the
    penultimate feature used by the multi-BS attention).
    """

    def __init__(self, n_latent: int, hidden: int = 256, out_dim: int = 1, n_config: int = 3):
        super().__init__()
        self.config_mlp = nn.Linear(n_config, n_latent)
        self.hidden = nn.Linear(n_latent, hidden)
        self.act = nn.GELU()
        self.out = nn.Linear(hidden, out_dim)

    def forward(self, o_lst: torch.Tensor, config: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        feat = self.act(self.hidden(o_lst + self.config_mlp(config)))
        return self.out(feat), feat


class SingleTaskModel(nn.Module):
    """Encoder + one task decoder (ToA, AoA or single-BS position)."""

    def __init__(self, encoder: LWLMEncoder, decoder: TaskDecoder):
        super().__init__()
        self.encoder = encoder
        self.decoder = decoder

    def forward(self, cfr: torch.Tensor, config: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(cfr).lst, config)[0]


class MultiBsDecoder(nn.Module):
    """Per-BS position decoders fused by a softmax over attention logits.

    The attention map scores each BS from its decoder's hidden feature, so
    the same map serves any number of participating BSs.
    """

    def __init__(self, n_bs: int, n_latent: int, hidden: int = 256, attn_hidden: int = 64,
                 shared: bool = False):
        super().__init__()
        n_dec = 1 if shared else n_bs
        self.shared = shared
        self.per_bs = nn.ModuleList(TaskDecoder(n_latent, hidden, 2) for _ in range(n_dec))
        self.attn_mlp = nn.Sequential(nn.Linear(hidden, attn_hidden), nn.GELU(), nn.Linear(attn_hidden, 1))

    def decoder_for(self, bs_id: int) -> TaskDecoder:
        return self.per_bs[0 if self.shared else bs_id]

    def forward(self, o_lst: torch.Tensor, config: torch.Tensor, bs_ids: Sequence[int] | None = None):
        """``o_lst`` (B, M, n_latent), ``config`` (B, M, 3).

        Returns the fused positions (B, 2), weights (B, M) and per-BS
        estimates (B, M, 2).
        """
        m = o_lst.shape[1]
        if m == 0:
            raise ValueError("multi-BS fusion needs at least one BS")
        bs_ids = range(m) if bs_ids is None else bs_ids
        preds, logits = [], []
        for j, bs in enumerate(bs_ids):
            p, feat = self.decoder_for(bs)(o_lst[:, j], config[:, j])
            preds.append(p)
            logits.append(self.attn_mlp(feat))
        preds = torch.stack(preds, dim=1)
        weights = torch.softmax(torch.cat(logits, dim=-1), dim=-1)
        fused = (weights.unsqueeze(-1) * preds).sum(dim=1)
        return fused, weights, preds


class MultiBsModel(nn.Module):
    def __init__(self, encoder: LWLMEncoder, decoder: MultiBsDecoder):
        super().__init__()
        self.encoder = encoder
        self.decoder = decoder

    def forward(self, cfr: torch.Tensor, config: torch.Tensor, bs_ids=None):
        """``cfr`` (B, M, A, K) complex, ``config`` (B, M, 3)."""
        b, m = cfr.shape[:2]
        lst = self.encoder(cfr.flatten(0, 1)).lst.reshape(b, m, -1)
        return self.decoder(lst, config, bs_ids)


def mae_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.numel() == 0:
        raise ValueError("empty batch")
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).abs().mean()


def euclid_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean Euclidean distance between (N, 2) point sets."""
    if pred.shape[0] == 0:
        raise ValueError("empty batch")
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return torch.linalg.vector_norm(pred - target, dim=-1).mean()


def _model_inputs(samples: Sequence[ChannelSample], norm: Normalizer, dtype=torch.float32):
    cfr = np.stack([norm.cfr(s.cfr) for s in samples]).astype(np.complex64)
    cfg = norm.config(np.stack([s.config.as_vector() for s in samples]))
    return torch.from_numpy(cfr), torch.from_numpy(cfg).to(dtype)


def predict_scalar(sample: ChannelSample, encoder: LWLMEncoder, decoder: TaskDecoder,
                   norm: Normalizer | None = None, task: str | None = None) -> float:
    """Eval-mode single prediction.

    With ``task="toa"`` the output (trained in units of 1 / bandwidth) is
    returned in seconds; ``"aoa"`` and ``None`` return the raw output.
    """
    norm = norm or Normalizer()
    cfr, cfg = _model_inputs([sample], norm)
    model = SingleTaskModel(encoder, decoder)
    was = model.training
    model.eval()
    with torch.no_grad():
        out = float(model(cfr, cfg)[0, 0])
    model.train(was)
    if task == "toa":
        return out / sample.config.bandwidth_hz
    return out


def multi_bs_localize(samples: Sequence[ChannelSample], encoder: LWLMEncoder, mbd: MultiBsDecoder,
                      norm: Normalizer | None = None, bs_ids: Sequence[int] | None = None):
    """Fused position estimate (meters) and BS weights for one UE seen by M BSs."""
    if len(samples) == 0:
        raise ValueError("multi-BS localization needs at least one BS sample")
    ref = samples[0].ue_position
    for s in samples[1:]:
        if not np.array_equal(s.ue_position, ref):
            raise ValueError("all samples must belong to the same UE position")
    norm = norm or Normalizer()
    cfr, cfg = _model_inputs(samples, norm)
    model = MultiBsModel(encoder, mbd)
    was = model.training
    model.eval()
    with torch.no_grad():
        fused, weights, _ = model(cfr.unsqueeze(0), cfg.unsqueeze(0), bs_ids)
    model.train(was)
    return norm.position_inv(fused[0].double().numpy()), weights[0].double().numpy()
