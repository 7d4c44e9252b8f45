import numpy as np
import pytest
import torch

from afss.audio import Waveform
from afss.detector import (D_PROJ, DetectorModel, IdentityFrontEnd, InputTooShortError, ToyFrontEnd,
                           build_front_end, collate, forward, parameter_groups)
from afss.training import ReweightingLoss
from conftest import make_tone


def small_toy(**kw):
    return DetectorModel(ToyFrontEnd(n_mels=16, hidden=8, **kw))


class TestShapes:
    def test_projection_matches_front_width(self):
        model = DetectorModel(ToyFrontEnd())
        assert model.projection.in_features == 1024
        assert model.projection.out_features == D_PROJ == 128
        assert model.dense.out_features == 1

    def test_extract_shape(self, tone):
        fe = ToyFrontEnd(n_mels=16, hidden=8)
        out = fe.extract(tone)
        assert out.shape == (len(tone) // 160 + 1, 1024)

    @pytest.mark.parametrize("seconds", [0.1, 0.37, 1.0])
    def test_scalar_output_any_length(self, seconds):
        torch.manual_seed(0)
        logit, p = forward(small_toy(), make_tone(seconds=seconds))
        assert isinstance(logit, float) and 0.0 < p < 1.0

    def test_too_short(self):
        with pytest.raises(InputTooShortError):
            forward(small_toy(), make_tone(seconds=0.05))


class TestBehaviour:
    def test_zero_dense_gives_half(self, tone):
        model = DetectorModel(ToyFrontEnd(n_mels=16, hidden=8), zero_init_dense=True)
        rng = np.random.default_rng(0)
        for w in (tone, Waveform(0.3 * rng.standard_normal(5000))):
            logit, p = forward(model, w)
            assert logit == 0.0 and p == 0.5

    def test_eval_deterministic(self, tone):
        torch.manual_seed(1)
        model = small_toy()
        assert forward(model, tone) == forward(model, tone)

    def test_dropout_active_in_train_mode(self, tone):
        torch.manual_seed(2)
        model = small_toy()
        outs = {forward(model, tone, train_mode=True)[0] for _ in range(5)}
        assert len(outs) > 1

    def test_pooling_permutation_invariant(self):
        torch.manual_seed(3)
        model = DetectorModel(IdentityFrontEnd(16), d_proj=8).eval()
        frames = torch.randn(1, 10, 16)
        perm = frames[:, torch.randperm(10)]
        assert torch.allclose(model(frames), model(perm), atol=1e-6)

    def test_masked_pooling_ignores_padding(self):
        torch.manual_seed(4)
        model = DetectorModel(IdentityFrontEnd(16), d_proj=8).eval()
        a, b = torch.randn(7, 16), torch.randn(12, 16)
        batch, mask = collate([a, b])
        batched = model(batch, mask)
        assert torch.allclose(batched[0], model(a[None])[0], atol=1e-6)
        assert torch.allclose(batched[1], model(b[None])[0], atol=1e-6)


class TestGradients:
    def test_head_gradient_matches_finite_difference(self):
        torch.manual_seed(5)
        model = DetectorModel(IdentityFrontEnd(8), d_proj=4, dropout=0.0).double().eval()
        frames = torch.randn(1, 4, 8, dtype=torch.float64)
        loss_fn = ReweightingLoss(0.3, -0.2).double()
        y = torch.tensor([1.0], dtype=torch.float64)

        def objective():
            return loss_fn(torch.sigmoid(model(frames)), y)

        objective().backward()
        h = 1e-6
        for param in list(model.parameters()) + list(loss_fn.parameters()):
            flat = param.data.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = objective().item()
                flat[i] = orig - h
                down = objective().item()
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                analytic = param.grad.view(-1)[i].item()
                assert abs(analytic - numeric) <= 1e-4 * max(1.0, abs(numeric))


class TestParameterGroups:
    def test_partition(self):
        model, loss = small_toy(), ReweightingLoss()
        groups = parameter_groups(model, loss)
        ids = [{id(p) for p in g} for g in groups.values()]
        assert sum(len(s) for s in ids) == len(set().union(*ids))
        everything = {id(p) for p in model.parameters()} | {id(p) for p in loss.parameters()}
        assert set().union(*ids) == everything
        assert {id(p) for p in model.front_end.parameters()} == ids[0]

    def test_frozen_front_end_still_disjoint(self):
        model = small_toy()
        model.front_end.trainable = False
        groups = parameter_groups(model, ReweightingLoss())
        assert all(not p.requires_grad for p in groups["front_end"])
        assert all(p.requires_grad for p in groups["head"])
        assert not {id(p) for p in groups["front_end"]} & {id(p) for p in groups["head"]}

    def test_build_front_end_round_trip(self):
        fe = ToyFrontEnd(n_mels=16, hidden=8)
        again = build_front_end(fe.config())
        assert again.config() == fe.config()
        with pytest.raises(ValueError):
            build_front_end({"kind": "xlsr"})
