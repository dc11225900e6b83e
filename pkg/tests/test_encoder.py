import numpy as np
import pytest
import torch

from lwlm.encoder import (
    EncoderConfig, LatentRepresentation, LWLMEncoder, count_parameters, encode, load_encoder,
    parameter_report, save_encoder,
)
from lwlm.harness.config import desk_encoder
from oracles import grad_check

TINY = EncoderConfig(n_ant=4, n_subc=8, kernel=2, stride=2, padding=0, n_enc=1, n_heads=2,
                     n_embed=16, n_latent=12, d_ff=16, partition=(4, 4, 4), dropout=0.0)


def test_config_invariants():
    with pytest.raises(ValueError):
        EncoderConfig(partition=(96, 96, 63))
    with pytest.raises(ValueError):
        EncoderConfig(n_heads=5)
    c = EncoderConfig()
    assert EncoderConfig.from_dict(c.to_dict()) == c


def test_paper_profile_output_shape():
    enc = LWLMEncoder(EncoderConfig())
    lat = encode(torch.randn(32, 128, dtype=torch.complex64), enc)
    assert lat.o.shape == (257, 256)
    assert lat.lst.shape == (256,)


def test_partition_slices():
    o = torch.arange(2 * 3 * 10, dtype=torch.float32).reshape(2, 3, 10)
    lat = LatentRepresentation(o, (3, 5, 2))
    cat = torch.cat([lat.sfmcm, lat.dti, lat.picl], dim=-1)
    assert torch.equal(cat, o)
    assert torch.equal(lat.lst, o[:, 0])


def test_eval_determinism():
    enc = LWLMEncoder(desk_encoder())
    x = torch.randn(3, 8, 32, dtype=torch.complex64)
    a, b = encode(x, enc).o, encode(x, enc).o
    assert torch.equal(a, b)


def test_permutation_equivariance():
    """Swapping two patch tokens together with their sequence embeddings permutes the output rows."""
    torch.manual_seed(0)
    cfg = EncoderConfig(n_ant=4, n_subc=8, kernel=2, stride=2, padding=0, n_enc=2, n_heads=2,
                        n_embed=16, n_latent=12, d_ff=32, partition=(4, 4, 4), dropout=0.0)
    enc = LWLMEncoder(cfg).double().eval()
    tok = enc.tokenizer(torch.randn(1, 4, 8, dtype=torch.complex128))
    i, j = 2, 6
    perm = list(range(tok.shape[1]))
    perm[i], perm[j] = perm[j], perm[i]
    with torch.no_grad():
        out = enc.forward_tokens(tok)
        out_p = enc.forward_tokens(tok[:, perm])
    torch.testing.assert_close(out_p, out[:, perm], rtol=1e-12, atol=1e-12)
    torch.testing.assert_close(out_p[:, 0], out[:, 0], rtol=1e-12, atol=1e-12)


def test_parameter_counts():
    assert count_parameters(torch.nn.Linear(512, 256)) == 131_328
    enc = LWLMEncoder(EncoderConfig())
    report = parameter_report(enc)
    assert sum(v for k, v in report.items() if k != "total") == report["total"]
    assert 4.5e6 <= report["total"] <= 6.1e6
    zero = LWLMEncoder(EncoderConfig(n_enc=0))
    zr = parameter_report(zero)
    assert zr["total"] == zr["tokenizer"] + zr["norm"] + zr["latent_proj"]


def test_gradient_check_tiny_encoder():
    torch.manual_seed(1)
    enc = LWLMEncoder(TINY).double()
    x = torch.randn(2, 4, 8, dtype=torch.complex128)
    target = torch.randn(2, 9, 12, dtype=torch.float64)

    def loss():
        return ((enc(x).o - target) ** 2).mean()

    err, n = grad_check(loss, list(enc.parameters()), 200, np.random.default_rng(0))
    assert n >= 200 and err < 1e-4


def test_checkpoint_round_trip(tmp_path):
    enc = LWLMEncoder(desk_encoder())
    x = torch.randn(4, 8, 32, dtype=torch.complex64)
    save_encoder(enc, tmp_path / "enc.pt", seed=42)
    loaded, seed = load_encoder(tmp_path / "enc.pt")
    assert seed == 42 and loaded.config == enc.config
    assert torch.equal(encode(x, enc).o, encode(x, loaded).o)
