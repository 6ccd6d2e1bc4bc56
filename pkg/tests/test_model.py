import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from samamba import losses
from samamba.engine import functional as F
from samamba.engine.tensor import ShapeError, Tensor, backward
from samamba.engine.gradcheck import finite_diff_check
from samamba.model import ModelConfig, SAMamba, count_params_flops
from samamba.model.config import FULL_CHANNELS
from samamba.model.csi import CSI, inverse_permutation, recombination_index
from samamba.model.dpcf import DPCF
from samamba.model.encoder import HierarchicalEncoder
from samamba.model.fs_adapter import FSAdapter, cosine_sim, fs_adapter
from samamba.nn import Conv2d, Module
from samamba.verify import suite_dpcf

F64 = np.float64


def t64(a):
    return Tensor(np.asarray(a, dtype=F64))


class TestEncoder:
    def test_desk_shapes_at_64(self, rng):
        enc = HierarchicalEncoder(ModelConfig(), rng=rng, dtype=F64)
        feats = enc(t64(rng.random((1, 3, 64, 64))))
        assert [f.shape[1:] for f in feats] == [(16, 16, 16), (32, 8, 8), (64, 4, 4), (128, 2, 2)]

    @settings(max_examples=6)
    @given(st.integers(1, 3), st.integers(1, 3))
    def test_stride_contract(self, h, w):
        H, W = 32 * h, 32 * w
        enc = HierarchicalEncoder(ModelConfig(use_adapter=False), dtype=np.float32)
        feats = enc(Tensor(np.zeros((1, 3, H, W), np.float32)))
        assert [f.shape[2:] for f in feats] == [(H >> (i + 2), W >> (i + 2)) for i in range(4)]

    def test_indivisible_extents_rejected(self):
        enc = HierarchicalEncoder(ModelConfig())
        with pytest.raises(ShapeError):
            enc(Tensor(np.zeros((1, 3, 48, 64), np.float32)))

    def test_full_scale_channels(self):
        cfg = ModelConfig.full_scale()
        assert cfg.stage_channels == FULL_CHANNELS == (96, 192, 384, 768)
        enc = HierarchicalEncoder(cfg.replace(use_adapter=False))
        feats = enc(Tensor(np.zeros((1, 3, 32, 32), np.float32)))
        assert [f.shape[1] for f in feats] == [96, 192, 384, 768]

    def test_frozen_backbone_only_adapters_learn(self, rng):
        enc = HierarchicalEncoder(ModelConfig(freeze_encoder=True), rng=rng, dtype=F64)
        for p in enc.parameters():
            p.grad = None
        out = enc(t64(rng.random((1, 3, 64, 64))))
        backward(sum((f * t64(rng.standard_normal(f.shape))).sum() for f in out))
        for p in enc.backbone_parameters():
            assert p.grad is None or not np.any(p.grad)
        assert all(p.grad is not None and np.any(p.grad) for p in enc.adapter_parameters())


class TestCosine:
    def test_examples(self, rng):
        a = rng.standard_normal(7)
        assert cosine_sim(a, a) == pytest.approx(1.0, abs=1e-15)
        assert cosine_sim(a, -a) == 0.0
        assert cosine_sim([1, 0], [0, 1]) == 0.0
        assert cosine_sim([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-15)

    def test_zero_vector_warns(self):
        with pytest.warns(RuntimeWarning):
            assert cosine_sim([0, 0], [1, 2]) == 0.0

    @given(st.integers(0, 2**32 - 1))
    def test_range(self, seed):
        rng = np.random.default_rng(seed)
        s = cosine_sim(rng.standard_normal(5), rng.standard_normal(5))
        assert 0.0 <= s <= 1.0 + 1e-15


class TestFSAdapter:
    def test_zero_branch_is_identity(self, rng):
        x = t64(rng.standard_normal((2, 6, 4, 4)))
        out = fs_adapter(x, t64(rng.standard_normal(6)), t64(np.zeros((6, 6))), t64(np.zeros((6, 6, 1, 1))))
        assert np.array_equal(out.data, x.data)

    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
    def test_scale_invariance(self, seed, s):
        rng = np.random.default_rng(seed)
        x = t64(rng.standard_normal((1, 5, 3, 3)))
        xi = rng.standard_normal(5)
        P, w = t64(rng.standard_normal((5, 5))), t64(rng.standard_normal((5, 5, 1, 1)))
        a = fs_adapter(x, t64(xi), P, w).data
        b = fs_adapter(x, t64(xi * s), P, w).data
        assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, np.max(np.abs(a)))

    def test_anti_aligned_channel_contributes_zero(self):
        ad = FSAdapter(2, dtype=F64)
        ad.xi.data[:] = [1.0, 0.0]
        # target map = channel 0, channel 1 = -channel 0
        m = np.arange(1.0, 5.0).reshape(1, 1, 2, 2)
        x = t64(np.concatenate([m, -m], axis=1))
        sim = ad.similarity(x).data.ravel()
        np.testing.assert_allclose(sim, [1.0, 0.0], atol=1e-15)

    def test_output_shape_and_gradients(self, rng):
        ad = FSAdapter(4, rng=rng, dtype=F64)
        x = t64(rng.standard_normal((1, 4, 3, 3)))
        w = t64(rng.standard_normal((1, 4, 3, 3)))
        assert ad(x).shape == x.shape
        for name in ("xi", "P"):
            param = getattr(ad, name)

            def f(v, name=name):
                return fs_adapter(x, v if name == "xi" else ad.xi, v if name == "P" else ad.P, ad.conv.weight, ad.conv.bias) * w

            rep = finite_diff_check(f, t64(param.data.copy()), h=1e-6, floor=1e-6)
            assert rep.passed, (name, rep.max_rel_err)

    def test_xi_nonzero_and_finite(self, rng):
        xi = FSAdapter(8, rng=rng).xi.data
        assert np.all(np.isfinite(xi)) and np.linalg.norm(xi) > 0


class TestCSI:
    @pytest.mark.parametrize("C,heads", [(32, 4), (32, 1), (128, 8), (12, 3)])
    def test_permutation_bijective_and_invertible(self, rng, C, heads):
        perm = recombination_index(C, heads)
        assert sorted(perm) == list(range(C))
        v = rng.standard_normal((3, C))
        assert np.array_equal(v[:, perm][:, inverse_permutation(perm)], v)
        assert sorted(v[0, perm]) == sorted(v[0])

    def test_recombine_matches_index_map(self, rng):
        csi = CSI(8, 16, 4, rng=rng, dtype=F64)
        m = rng.standard_normal((4, 2, 6, 4))
        stacked = m.transpose(1, 2, 0, 3).reshape(2, 6, 16)
        got = csi.recombine(t64(m), (2, 3)).data.reshape(2, 16, 6).transpose(0, 2, 1)
        np.testing.assert_array_equal(got, stacked[..., recombination_index(16, 4)])

    def test_indivisible_width_rejected(self):
        with pytest.raises(ValueError):
            CSI(8, 30, 4)

    def test_residual_path_when_mamba_silenced(self, rng):
        csi = CSI(8, 16, 4, rng=rng, dtype=F64)
        csi.vim.mamba.W_out.data[...] = 0
        csi.vim.mamba.b_out.data[...] = 0
        x = t64(rng.standard_normal((2, 8, 3, 5)))
        m, _ = csi.head_outputs(x)
        aligned = csi.align(x).data.reshape(2, 16, 15).transpose(0, 2, 1)
        segments = aligned.reshape(2, 15, 4, 4).transpose(2, 0, 1, 3)
        np.testing.assert_allclose(m.data, segments, rtol=0, atol=1e-15)

    def test_four_heads_cheaper_than_one(self):
        assert CSI(32, 32, 4).num_parameters() < CSI(32, 32, 1).num_parameters()

    @pytest.mark.parametrize("heads", [1, 2, 4, 8])
    def test_head_sweep_runs_at_width_128(self, rng, heads):
        csi = CSI(16, 128, heads, rng=rng)
        assert csi(Tensor(rng.standard_normal((1, 16, 4, 4)).astype(np.float32))).shape == (1, 128, 4, 4)


class TestDPCF:
    def test_gate_suite(self):
        res = suite_dpcf(0)
        assert res.passed, res.failures

    @given(st.integers(0, 2**32 - 1))
    def test_convexity(self, seed):
        rng = np.random.default_rng(seed)
        m = DPCF(8, 6, segments=4, rng=rng, dtype=F64)
        m.alpha.data[:] = rng.standard_normal(4) * 4
        high = t64(rng.standard_normal((1, 8, 8, 8)))
        low_in = t64(rng.standard_normal((1, 6, 4, 4)))
        low = m.align(F.bilinear_upsample(low_in, 8, 8)).data
        fused = m.fuse(high, low_in).data
        assert np.all(fused >= np.minimum(high.data, low) - 1e-15)
        assert np.all(fused <= np.maximum(high.data, low) + 1e-15)

    def test_gate_in_open_interval(self):
        m = DPCF(8, 8, dtype=F64)
        m.alpha.data[:] = [-30.0, -1.0, 1.0, 30.0]
        beta = m.gate((1, 8, 1, 1)).data.ravel()
        assert np.all(beta > 0) and np.all(beta <= 1)

    @pytest.mark.parametrize("fusion", ["add", "concat", "adaptive"])
    def test_fusion_variants_keep_high_res_shape(self, rng, fusion):
        m = DPCF(8, 16, fusion=fusion, rng=rng, dtype=F64)
        out = m(t64(rng.standard_normal((2, 8, 8, 6))), t64(rng.standard_normal((2, 16, 4, 3))))
        assert out.shape == (2, 8, 8, 6)

    def test_indivisible_segments_rejected(self):
        with pytest.raises(ValueError):
            DPCF(10, 10, segments=4)


class TestNetwork:
    def test_output_shape(self, rng):
        m = SAMamba(ModelConfig(), dtype=np.float32)
        assert m(rng.random((2, 3, 64, 64)).astype(np.float32)).shape == (2, 1, 64, 64)

    def test_zero_head_gives_bias(self, rng):
        m = SAMamba(ModelConfig(), dtype=F64)
        m.head.out.weight.data[...] = 0
        out = m.predict_logits(rng.random((1, 3, 64, 64)))
        assert np.all(out == m.head.out.bias.data[0])
        assert m.head.out.bias.data[0] == pytest.approx(-math.log(99.0))

    def test_rejects_non_4d(self):
        with pytest.raises(ShapeError):
            SAMamba()(np.zeros((3, 64, 64), np.float32))

    def test_nonzero_gradient_census(self, rng):
        m = SAMamba(ModelConfig(), dtype=F64)
        logits = m(rng.random((2, 3, 64, 64)))
        y = (rng.random((2, 1, 64, 64)) < 0.05).astype(F64)
        backward(losses.total_loss(logits, y))
        dead = [n for n, p in m.named_parameters(trainable_only=True) if p.grad is None or not np.any(p.grad)]
        assert dead == []

    def test_frozen_backbone_excluded_from_trainable(self):
        free = SAMamba(ModelConfig())
        frozen = SAMamba(ModelConfig(freeze_encoder=True))
        assert free.num_parameters() == frozen.num_parameters()
        assert frozen.num_parameters(trainable_only=True) < free.num_parameters(trainable_only=True)

    def test_config_text_round_trip(self):
        cfg = ModelConfig(csi_heads=2, dpcf_segments=8, fusion="concat", stage_channels=(8, 16, 32, 64))
        assert ModelConfig.from_text(cfg.to_text()) == cfg

    def test_config_rejects_unknown_key(self):
        with pytest.raises(ValueError):
            ModelConfig.from_text("csi_heads = 4\nbogus = 1\n")


class _TwoLayer(Module):
    def __init__(self):
        super().__init__()
        self.a = Conv2d(3, 4, 3, stride=2, dtype=F64)
        self.b = Conv2d(4, 2, 1, dtype=F64)

    def forward(self, x):
        return self.b(self.a(x))


class TestCounting:
    def test_pointwise_conv_params(self):
        assert Conv2d(4, 8, 1).num_parameters() == 40

    def test_two_layer_hand_formula(self):
        params, macs = count_params_flops(_TwoLayer(), (16, 16))
        assert params == (3 * 4 * 9 + 4) + (4 * 2 + 2)
        assert macs == 4 * 3 * 9 * 8 * 8 + 2 * 4 * 8 * 8

    def test_params_grow_with_csi_width(self):
        counts = [SAMamba(ModelConfig(csi_width=c)).num_parameters() for c in (32, 64, 128)]
        assert counts[0] < counts[1] < counts[2]

    def test_macs_grow_with_resolution(self):
        m = SAMamba(ModelConfig())
        macs = [count_params_flops(m, (s, s))[1] for s in (32, 64, 96)]
        assert macs[0] < macs[1] < macs[2]

    def test_scan_macs_counted(self):
        m = SAMamba(ModelConfig())
        with_csi = count_params_flops(m, (64, 64))[1]
        plain = count_params_flops(SAMamba(ModelConfig(use_csi=False)), (64, 64))[1]
        assert with_csi > plain
