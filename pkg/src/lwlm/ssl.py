"""Self-supervised pretraining objectives: SF-MCM, DTI and PICL."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch
import torch.nn as nn

from .embedding import fold_patches, patch_count, sequence_embedding
from .encoder import EncoderConfig, LWLMEncoder, transformer_stack

# ---------------------------------------------------------------------------
# SF-MCM: spatial-frequency masked channel modeling
# ---------------------------------------------------------------------------


@dataclass
class MaskSpec:
    mask: np.ndarray  # (n_ant, n_subc) of {0, 1}; 0 marks a masked entry
    masked_ant: np.ndarray
    masked_subc: np.ndarray


def make_mask(n_ant: int, n_subc: int, n_hat_ant: int, n_hat_subc: int,
              rng: np.random.Generator) -> MaskSpec:
    if not (0 <= n_hat_ant <= n_ant and 0 <= n_hat_subc <= n_subc):
        raise ValueError(
            f"cannot mask {n_hat_ant}/{n_hat_subc} of {n_ant} antennas / {n_subc} subcarriers"
        )
    ant = np.sort(rng.choice(n_ant, n_hat_ant, replace=False))
    subc = np.sort(rng.choice(n_subc, n_hat_subc, replace=False))
    mask = np.ones((n_ant, n_subc), dtype=np.float32)
    mask[ant, :] = 0
    mask[:, subc] = 0
    return MaskSpec(mask, ant, subc)


def stack_masks(masks) -> torch.Tensor:
    return torch.from_numpy(np.stack([m.mask for m in masks]))


def sfmcm_loss(h_hat: torch.Tensor, h: torch.Tensor, mask: torch.Tensor,
               target_region: str = "masked") -> torch.Tensor:
    """Mean over the batch of ||(H_hat - H) * R||_F^2.

    ``R`` is ``1 - M`` for ``"masked"`` (reconstruct what was hidden), ``M``
    for ``"unmasked"`` (the weighting as literally written in the method's
    loss) and all-ones for ``"full"``.
    """
    if h_hat.shape != h.shape:
        raise ValueError(f"shape mismatch: {tuple(h_hat.shape)} vs {tuple(h.shape)}")
    mask = torch.as_tensor(mask).to(h.real.dtype)
    if target_region == "masked":
        region = 1 - mask
    elif target_region == "unmasked":
        region = mask
    elif target_region == "full":
        region = torch.ones_like(mask)
    else:
        raise ValueError(f"unknown target_region {target_region!r}")
    err = (h_hat - h).abs() ** 2 * region
    return err.flatten(-2).sum(-1).mean()


# ---------------------------------------------------------------------------
# DTI: domain-transformation invariance
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def dft_matrix(n: int) -> np.ndarray:
    """Unitary DFT matrix with entries exp(-j 2 pi i1 i2 / n) / sqrt(n)."""
    i = np.arange(n)
    return np.exp(-2j * math.pi * np.outer(i, i) / n) / math.sqrt(n)


def _dft_pair(n_ant: int, n_subc: int, like):
    w_a, w_s = dft_matrix(n_ant), dft_matrix(n_subc)
    if isinstance(like, torch.Tensor):
        return (torch.from_numpy(w_a).to(like.dtype), torch.from_numpy(w_s).to(like.dtype))
    return w_a, w_s


def dti_transform(h):
    """Spatial-frequency -> angle-delay: W_ant^H H W_subc^* (batched over leading axes)."""
    if isinstance(h, torch.Tensor) and not torch.is_complex(h):
        h = h.to(torch.complex128)
    w_a, w_s = _dft_pair(h.shape[-2], h.shape[-1], h)
    return w_a.conj().T @ h @ w_s.conj()


def dti_inverse(t):
    w_a, w_s = _dft_pair(t.shape[-2], t.shape[-1], t)
    return w_a @ t @ w_s.T


def dti_loss(target: torch.Tensor, h_hat: torch.Tensor) -> torch.Tensor:
    """Mean angle-delay dissimilarity 1 - |<T, H_hat>| / (||T|| ||H_hat||)."""
    if target.shape != h_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(target.shape)} vs {tuple(h_hat.shape)}")
    inner = (target.conj() * h_hat).flatten(-2).sum(-1)
    n_t = torch.linalg.vector_norm(target.flatten(-2), dim=-1)
    n_h = torch.linalg.vector_norm(h_hat.flatten(-2), dim=-1)
    if (n_t == 0).any() or (n_h == 0).any():
        raise ValueError("angle-delay dissimilarity undefined for zero-norm input")
    return (1 - inner.abs() / (n_t * n_h)).mean()


# ---------------------------------------------------------------------------
# PICL: position-invariant contrastive learning
# ---------------------------------------------------------------------------


def ntxent_loss(z1: torch.Tensor, z2: torch.Tensor, tau: float = 0.1,
                reduction: str = "mean") -> torch.Tensor:
    """NT-Xent over the 2N pooled embeddings; (z1[i], z2[i]) are the positives.

    Inputs are (..., N, D).  Leading axes are independent problems; with
    ``reduction="none"`` one loss per leading index is returned.
    """
    if z1.shape != z2.shape:
        raise ValueError(f"shape mismatch: {tuple(z1.shape)} vs {tuple(z2.shape)}")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    n = z1.shape[-2]
    z = torch.cat([z1, z2], dim=-2)
    norms = torch.linalg.vector_norm(z, dim=-1, keepdim=True)
    if (norms == 0).any():
        raise ValueError("cosine similarity undefined for a zero-norm embedding")
    z = z / norms
    logits = z @ z.transpose(-1, -2) / tau
    eye = torch.eye(2 * n, dtype=torch.bool, device=z.device)
    logits = logits.masked_fill(eye, float("-inf"))
    pos = torch.cat([torch.arange(n, 2 * n), torch.arange(0, n)]).to(z.device)
    pos_logit = logits[..., torch.arange(2 * n, device=z.device), pos]
    per_sample = torch.logsumexp(logits, dim=-1) - pos_logit
    loss = per_sample.mean(-1)
    if reduction == "none":
        return loss
    if reduction == "mean":
        return loss.mean()
    raise ValueError(f"unknown reduction {reduction!r}")


# ---------------------------------------------------------------------------
# Decoders
# ---------------------------------------------------------------------------


class ReconstructionDecoder(nn.Module):
    """Latent slice -> (B, 2, n_ant, n_subc) real/imag via self-attention blocks and fold."""

    def __init__(self, n_in: int, config: EncoderConfig, n_dec: int = 2):
        super().__init__()
        c = config
        self.config = c
        self.in_proj = nn.Linear(n_in, c.n_embed)
        n_tokens = _n_patch(c) + 1
        self.register_buffer("seq_emb", sequence_embedding(n_tokens, c.n_embed), persistent=False)
        self.layers = transformer_stack(n_dec, c.n_embed, c.n_heads, c.d_ff, c.dropout)
        self.norm = nn.LayerNorm(c.n_embed)
        self.head = nn.Linear(c.n_embed, 2 * c.kernel * c.kernel)

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        c = self.config
        x = self.in_proj(latent) + self.seq_emb.to(latent.dtype)
        x = self.norm(self.layers(x))
        patches = self.head(x[:, 1:])  # the LST row is discarded
        return fold_patches(patches, c.n_ant, c.n_subc, c.kernel, c.stride, c.padding)

    def complex_output(self, latent: torch.Tensor) -> torch.Tensor:
        out = self.forward(latent)
        return torch.complex(out[:, 0], out[:, 1])


def _n_patch(c: EncoderConfig) -> int:
    return patch_count(c.n_ant, c.n_subc, c.kernel, c.stride, c.padding)


class PiclDecoder(nn.Module):
    def __init__(self, n_picl: int, n_out: int = 32, n_config: int = 3):
        super().__init__()
        self.config_mlp = nn.Linear(n_config, n_picl)
        self.out = nn.Linear(n_picl, n_out)

    def forward(self, o_picl: torch.Tensor, config: torch.Tensor) -> torch.Tensor:
        pooled = o_picl.mean(dim=-2)
        return self.out(pooled + self.config_mlp(config))


# ---------------------------------------------------------------------------
# Combined pretraining
# ---------------------------------------------------------------------------


@dataclass
class PretrainWeights:
    alpha_sfmcm: float = 10.0
    alpha_dti: float = 20.0
    alpha_picl: float = 1.0
    tau: float = 0.1

    def __post_init__(self):
        if min(self.alpha_sfmcm, self.alpha_dti, self.alpha_picl) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.tau <= 0:
            raise ValueError("temperature must be positive")


class PretrainModel(nn.Module):
    """Encoder plus the three pretraining decoders."""

    def __init__(self, config: EncoderConfig, n_dec: int = 2, n_picl_out: int = 32):
        super().__init__()
        n_sf, n_dti, n_picl = config.partition
        self.encoder = LWLMEncoder(config)
        self.sfmcm_decoder = ReconstructionDecoder(n_sf, config, n_dec)
        self.dti_decoder = ReconstructionDecoder(n_dti, config, n_dec)
        self.picl_decoder = PiclDecoder(n_picl, n_picl_out)

    def losses(self, h1: torch.Tensor, h2: torch.Tensor, c1: torch.Tensor, c2: torch.Tensor,
               mask: torch.Tensor, tau: float, target_region: str = "masked") -> dict[str, torch.Tensor]:
        """The three losses for anchor batch ``h1`` and its positive batch ``h2``."""
        mask = mask.to(h1.real.dtype)
        # SF-MCM on the masked anchors
        lat_masked = self.encoder(h1 * mask)
        h_rec = self.sfmcm_decoder.complex_output(lat_masked.sfmcm)
        l_sf = sfmcm_loss(h_rec, h1, mask, target_region)
        # DTI on the unmasked anchors
        lat1 = self.encoder(h1)
        l_dti = dti_loss(dti_transform(h1), self.dti_decoder.complex_output(lat1.dti))
        # PICL on anchors and positives
        lat2 = self.encoder(h2)
        z1 = self.picl_decoder(lat1.picl, c1)
        z2 = self.picl_decoder(lat2.picl, c2)
        l_picl = ntxent_loss(z1, z2, tau)
        return {"sfmcm": l_sf, "dti": l_dti, "picl": l_picl}


def total_loss(parts: dict[str, torch.Tensor], hp: PretrainWeights) -> torch.Tensor:
    # float64 accumulation so the total equals the hand-weighted sum of the logged parts
    return (
        hp.alpha_sfmcm * parts["sfmcm"].double()
        + hp.alpha_dti * parts["dti"].double()
        + hp.alpha_picl * parts["picl"].double()
    )


def pretrain_step(model: PretrainModel, optimizer: torch.optim.Optimizer, h1: torch.Tensor,
                  h2: torch.Tensor, c1: torch.Tensor, c2: torch.Tensor, mask: torch.Tensor,
                  hp: PretrainWeights, target_region: str = "masked",
                  max_grad_norm: float | None = None) -> dict[str, float]:
    """One optimizer step on the weighted pretraining loss; returns the logged values."""
    model.train()
    parts = model.losses(h1, h2, c1, c2, mask, hp.tau, target_region)
    total = total_loss(parts, hp)
    if not torch.isfinite(total):
        vals = {k: float(v.detach()) for k, v in parts.items()}
        raise FloatingPointError(f"non-finite pretraining loss: {vals}")
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    if max_grad_norm is not None:
        nn.utils.clip_grad_norm_(model.parameters(), max_grad_norm)
    optimizer.step()
    out = {k: float(v.detach()) for k, v in parts.items()}
    out["total"] = float(total.detach())
    return out
