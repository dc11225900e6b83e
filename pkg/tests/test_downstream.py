import math

import numpy as np
import pytest
import torch

from lwlm.channel import generate_location
from lwlm.dataio import Normalizer
from lwlm.downstream import (
    MultiBsDecoder, MultiBsModel, SingleTaskModel, TaskDecoder, euclid_loss, mae_loss, multi_bs_localize,
    predict_scalar,
)
from lwlm.encoder import EncoderConfig, LWLMEncoder, count_parameters
from lwlm.harness.config import desk_encoder
from oracles import euclid_oracle, grad_check, in_convex_hull, mae_oracle

TINY = EncoderConfig(n_ant=4, n_subc=8, kernel=2, stride=2, padding=0, n_enc=1, n_heads=2,
                     n_embed=16, n_latent=12, d_ff=16, partition=(4, 4, 4), dropout=0.0)


class FixedLogits(torch.nn.Module):
    """Stand-in attention map returning prescribed logits, one BS per call."""

    def __init__(self, logits):
        super().__init__()
        self.logits = list(logits)
        self.calls = 0

    def forward(self, feat):
        v = self.logits[self.calls % len(self.logits)]
        self.calls += 1
        return torch.full((feat.shape[0], 1), v, dtype=feat.dtype)


def test_decoder_parameter_count():
    n = count_parameters(TaskDecoder(256, 256, 1))
    assert n == 3 * 256 + 256 + 256 * 256 + 256 + 256 + 1 == 67_073
    assert 0.055e6 <= n <= 0.085e6


def test_zero_weights_output_zero():
    dec = TaskDecoder(8, 16, 1)
    with torch.no_grad():
        for p in dec.parameters():
            p.zero_()
    out, _ = dec(torch.randn(5, 8), torch.randn(5, 3))
    assert torch.all(out == 0)


def test_mae_examples(rng):
    assert float(mae_loss(torch.tensor([1.0, 3.0]), torch.tensor([0.0, 0.0]))) == 2.0
    x = torch.randn(6)
    assert float(mae_loss(x, x)) == 0.0
    for _ in range(20):
        p, t = rng.standard_normal(7), rng.standard_normal(7)
        assert float(mae_loss(torch.from_numpy(p), torch.from_numpy(t))) == pytest.approx(mae_oracle(p, t), abs=1e-12)
    with pytest.raises(ValueError):
        mae_loss(torch.zeros(0), torch.zeros(0))
    with pytest.raises(ValueError):
        mae_loss(torch.zeros(2), torch.zeros(3))


def test_euclid_examples(rng):
    assert float(euclid_loss(torch.tensor([[3.0, 4.0]]), torch.zeros(1, 2))) == 5.0
    x = torch.randn(4, 2)
    assert float(euclid_loss(x, x)) == 0.0
    p = torch.tensor([[1.0, 1.0], [0.0, 2.0]], dtype=torch.float64)
    t = torch.tensor([[1.0, 2.0], [3.0, 6.0]], dtype=torch.float64)
    assert float(euclid_loss(p, t)) == pytest.approx((1 + 5) / 2, abs=1e-12)
    for _ in range(20):
        p, t = rng.standard_normal((5, 2)), rng.standard_normal((5, 2))
        got = float(euclid_loss(torch.from_numpy(p), torch.from_numpy(t)))
        assert got == pytest.approx(euclid_oracle(p, t), abs=1e-12)
    with pytest.raises(ValueError):
        euclid_loss(torch.zeros(0, 2), torch.zeros(0, 2))


def test_softmax_closed_form():
    mbd = MultiBsDecoder(2, 12, 16, 8)
    mbd.attn_mlp = FixedLogits([math.log(3), math.log(1)])
    _, w, _ = mbd(torch.randn(1, 2, 12), torch.randn(1, 2, 3))
    np.testing.assert_allclose(w[0].numpy(), [0.75, 0.25], atol=1e-7)


def test_single_bs_and_identical_estimates():
    torch.manual_seed(0)
    mbd = MultiBsDecoder(4, 12, 16, 8)
    o, c = torch.randn(3, 1, 12), torch.randn(3, 1, 3)
    fused, w, preds = mbd(o, c)
    assert torch.all(w == 1)
    torch.testing.assert_close(fused, preds[:, 0])
    shared = MultiBsDecoder(4, 12, 16, 8, shared=True)
    o = torch.randn(2, 1, 12).expand(2, 3, 12)
    c = torch.randn(2, 1, 3).expand(2, 3, 3)
    fused, _, preds = shared(o, c, bs_ids=[0, 1, 2])
    torch.testing.assert_close(fused, preds[:, 0])


def test_weights_and_shift_invariance():
    torch.manual_seed(0)
    mbd = MultiBsDecoder(8, 12, 16, 8)
    for m in (1, 2, 4, 8):
        _, w, _ = mbd(torch.randn(5, m, 12), torch.randn(5, m, 3))
        assert torch.all(w >= 0)
        torch.testing.assert_close(w.sum(-1), torch.ones(5))
    a = MultiBsDecoder(2, 12, 16, 8)
    a.attn_mlp = FixedLogits([0.3, -1.2])
    b = MultiBsDecoder(2, 12, 16, 8)
    b.load_state_dict(a.state_dict(), strict=False)
    b.attn_mlp = FixedLogits([5.3, 3.8])
    x, c = torch.randn(4, 2, 12), torch.randn(4, 2, 3)
    torch.testing.assert_close(a(x, c)[1], b(x, c)[1])


def test_fused_in_convex_hull():
    torch.manual_seed(0)
    mbd = MultiBsDecoder(8, 12, 16, 8).double()
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 1000:
        m = int(rng.integers(1, 9))
        fused, w, preds = mbd(torch.randn(50, m, 12, dtype=torch.float64), torch.randn(50, m, 3, dtype=torch.float64))
        for i in range(50):
            assert in_convex_hull(fused[i].detach().numpy(), preds[i].detach().numpy())
        checked += 50


def test_predict_scalar_units_and_determinism(small_scene):
    torch.manual_seed(0)
    small_scene.n_ant, small_scene.n_subc = 8, 32
    sample = generate_location(small_scene, 0)[0]
    enc = LWLMEncoder(desk_encoder())
    dec = TaskDecoder(32, 16, 1)
    raw = predict_scalar(sample, enc, dec)
    assert predict_scalar(sample, enc, dec) == raw
    assert predict_scalar(sample, enc, dec, task="toa") == pytest.approx(raw / sample.config.bandwidth_hz)
    assert enc.training  # mode restored


def test_multi_bs_localize(small_scene):
    torch.manual_seed(0)
    samples = generate_location(small_scene, 3)
    enc = LWLMEncoder(desk_encoder())
    mbd = MultiBsDecoder(3, 32, 16, 8)
    norm = Normalizer(1e-3, (0.0, 10.0), 20.0)
    p, w = multi_bs_localize(samples, enc, mbd, norm)
    assert p.shape == (2,) and w.shape == (3,) and w.sum() == pytest.approx(1.0)
    p1, w1 = multi_bs_localize(samples[:1], enc, mbd, norm)
    assert w1.tolist() == [1.0]
    with pytest.raises(ValueError):
        multi_bs_localize([], enc, mbd)
    other = generate_location(small_scene, 4)[0]
    with pytest.raises(ValueError):
        multi_bs_localize([samples[0], other], enc, mbd)


def test_finetune_updates_encoder():
    torch.manual_seed(0)
    model = SingleTaskModel(LWLMEncoder(TINY), TaskDecoder(12, 16, 2))
    before = {k: v.clone() for k, v in model.encoder.state_dict().items()}
    opt = torch.optim.Adam(model.parameters(), 1e-3)
    loss = euclid_loss(model(torch.randn(4, 4, 8, dtype=torch.complex64), torch.randn(4, 3)), torch.randn(4, 2))
    assert float(loss.detach()) > 0
    loss.backward()
    opt.step()
    changed = [k for k, v in model.encoder.state_dict().items() if not torch.equal(v, before[k])]
    assert "tokenizer.conv.weight" in changed and "latent_proj.weight" in changed


def test_downstream_gradient_checks():
    rng = np.random.default_rng(0)
    torch.manual_seed(0)
    single = SingleTaskModel(LWLMEncoder(TINY), TaskDecoder(12, 16, 1)).double()
    x = torch.randn(3, 4, 8, dtype=torch.complex128)
    c = torch.randn(3, 3, dtype=torch.float64)
    y = torch.randn(3, 1, dtype=torch.float64) * 5
    err, n = grad_check(lambda: mae_loss(single(x, c), y), list(single.parameters()), 200, rng)
    assert n >= 200 and err < 1e-4

    multi = MultiBsModel(LWLMEncoder(TINY), MultiBsDecoder(2, 12, 16, 8)).double()
    xm = torch.randn(3, 2, 4, 8, dtype=torch.complex128)
    cm = torch.randn(3, 2, 3, dtype=torch.float64)
    ym = torch.randn(3, 2, dtype=torch.float64) * 3
    err, n = grad_check(lambda: euclid_loss(multi(xm, cm)[0], ym), list(multi.parameters()), 200, rng)
    assert n >= 200 and err < 1e-4
