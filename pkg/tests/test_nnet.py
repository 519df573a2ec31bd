import numpy as np
import pytest

from ssld import nnet
from ssld.autodiff import Tensor
from ssld.nnet import ModelConfig, SeldModel
from ssld.types import EventRecord

RNG = np.random.default_rng(0)


def tiny_cfg(**kw):
    base = dict(d_model=16, n_heads=2, conv_kernel=5,
                cnn_channels=(4, 8, 8, 16), n_classes=3, ff_mult=2,
                clap_dim=12, visual_dim=20)
    base.update(kw)
    return ModelConfig(**base)


def fixtures(cfg, batch=1, seed=0):
    rng = np.random.default_rng(seed)
    clap = Tensor(rng.normal(size=(batch, 1, cfg.clap_dim)))
    visual = Tensor(rng.normal(size=(batch, 577, cfg.visual_dim)))
    return clap, visual


class TestConfig:
    def test_head_divisibility_checked(self):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig(d_model=30, n_heads=4, cnn_channels=(4, 8, 16, 30))

    def test_kernel_must_be_odd(self):
        with pytest.raises(ValueError, match="odd"):
            ModelConfig(conv_kernel=10)

    def test_cnn_must_end_at_d_model(self):
        with pytest.raises(ValueError, match="d_model"):
            ModelConfig(cnn_channels=(8, 8, 8, 32))

    def test_full_config_numbers(self):
        cfg = nnet.full_config()
        assert (cfg.d_model, cfg.n_heads, cfg.conv_kernel) == (512, 8, 51)
        assert cfg.cnn_channels == (64, 128, 256, 512)
        assert (cfg.seld_conformer_layers, cfg.audio_cmc_layers,
                cfg.av_cmc_layers) == (4, 1, 2)


class TestCnnEncoder:
    def test_toy_shape(self):
        cfg = tiny_cfg()
        model = SeldModel(cfg, seed=0)
        x = Tensor(RNG.normal(size=(2, 4, 160, 64)))
        out = model.cnn(x)
        assert out.shape == (2, 10, cfg.d_model)

    def test_time_not_divisible(self):
        model = SeldModel(tiny_cfg(), seed=0)
        with pytest.raises(ValueError, match="divisible by 16"):
            model.cnn(Tensor(np.zeros((1, 4, 100, 64))))

    def test_zero_input_constant_sequence_in_eval(self):
        model = SeldModel(tiny_cfg(), seed=0).eval()
        out = model.cnn(Tensor(np.zeros((1, 4, 32, 32)))).data
        assert np.array_equal(out, np.zeros_like(out))


class TestConformer:
    def test_shape_preserved_any_length(self):
        block = nnet.ConformerBlock(16, 2, 5, 2, np.random.default_rng(1),
                                    np.float64)
        for t in (1, 3, 17):
            x = Tensor(RNG.normal(size=(2, t, 16)))
            assert block(x).shape == (2, t, 16)

    def test_stack_equals_composition_in_eval(self):
        rng = np.random.default_rng(2)
        b1 = nnet.ConformerBlock(8, 2, 3, 2, rng, np.float64)
        b2 = nnet.ConformerBlock(8, 2, 3, 2, rng, np.float64)
        b1.eval(), b2.eval()
        x = Tensor(RNG.normal(size=(1, 6, 8)))
        stacked = b2(b1(x)).data
        composed = b2(b1(x)).data
        assert np.array_equal(stacked, composed)


class TestCrossModalConformer:
    @pytest.mark.parametrize("t_beta", [1, 577])
    def test_output_follows_alpha_length(self, t_beta):
        block = nnet.CrossModalConformerBlock(16, 2, 5, 2,
                                              np.random.default_rng(3),
                                              np.float64)
        alpha = Tensor(RNG.normal(size=(1, 50, 16)))
        beta = Tensor(RNG.normal(size=(1, t_beta, 16)))
        assert block(alpha, beta).shape == (1, 50, 16)

    def test_zeroed_value_projection_equals_attention_free_path(self):
        block = nnet.CrossModalConformerBlock(16, 2, 5, 2,
                                              np.random.default_rng(4),
                                              np.float64).eval()
        block.attn.wv.w.data[...] = 0.0
        alpha = Tensor(np.abs(RNG.normal(size=(1, 9, 16))) + 0.05)
        beta = Tensor(RNG.normal(size=(1, 5, 16)))

        # oracle: same weights, attention branch removed
        a = alpha + 0.5 * block.ff_alpha(alpha)
        a = a + block.conv(a)
        a = a + 0.5 * block.ff2(a)
        want = block.ln_out(a).data

        got = block(alpha, beta).data
        np.testing.assert_allclose(got, want, rtol=0, atol=0)


class TestModelForward:
    def test_output_shapes_and_ranges(self):
        cfg = tiny_cfg()
        model = SeldModel(cfg, seed=1)
        clap, visual = fixtures(cfg)
        feats = Tensor(RNG.normal(size=(1, 4, 160, 64)))
        out = model(feats, clap, visual).data
        assert out.shape == (1, 10, 3, cfg.n_classes, 4)
        assert (np.abs(out[..., :2]) < 1).all()
        assert (out[..., 2] >= 0).all()
        assert ((out[..., 3] > 0) & (out[..., 3] < 1)).all()

    def test_deterministic_bits(self):
        cfg = tiny_cfg()
        model = SeldModel(cfg, seed=1)
        clap, visual = fixtures(cfg)
        feats = np.asarray(RNG.normal(size=(4, 160, 64)))
        a = nnet.model_forward(model, feats, clap.data[0], visual.data[0])
        b = nnet.model_forward(model, feats, clap.data[0], visual.data[0])
        assert np.array_equal(a, b)

    def test_audio_only_ignores_visual(self):
        cfg = tiny_cfg(audio_only=True)
        model = SeldModel(cfg, seed=1)
        clap, visual = fixtures(cfg)
        feats = np.asarray(RNG.normal(size=(4, 160, 64)))
        a = nnet.model_forward(model, feats, clap.data[0])
        b = nnet.model_forward(model, feats, clap.data[0], visual.data[0])
        assert np.array_equal(a, b)
        assert model.av_plain is not None and model.av_cmc is None

    def test_av_mode_requires_visual(self):
        cfg = tiny_cfg()
        model = SeldModel(cfg, seed=1)
        clap, _ = fixtures(cfg)
        with pytest.raises(ValueError, match="visual fixture"):
            model(Tensor(np.zeros((1, 4, 32, 32))), clap, None)


class TestFixtureGenerator:
    def test_shapes(self):
        assert nnet.make_fixture("clap_audio", 0).tokens.shape == (1, 512)
        assert nnet.make_fixture("owlvit_visual", 0).tokens.shape == (577, 768)

    def test_deterministic_and_seed_sensitive(self):
        a = nnet.make_fixture("clap_audio", 5).tokens
        b = nnet.make_fixture("clap_audio", 5).tokens
        c = nnet.make_fixture("clap_audio", 6).tokens
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestTraining:
    def make_dataset(self, cfg, n=2, t=32):
        items = []
        for i in range(n):
            rng = np.random.default_rng(100 + i)
            refs = [[] for _ in range(t // 16)]
            refs[0] = [EventRecord(0, 1, 0, 20.0, 1.5, True)]
            items.append({
                "features": rng.normal(size=(4, t, 64)),
                "refs": refs,
                "clap": rng.normal(size=(1, cfg.clap_dim)),
                "visual": rng.normal(size=(577, cfg.visual_dim)),
            })
        return items

    def test_loss_decreases(self):
        cfg = tiny_cfg(dtype="float32")
        model = SeldModel(cfg, seed=3)
        log = nnet.train_toy(model, self.make_dataset(cfg), epochs=8,
                             lr0=3e-3, batch_size=2, seed=0)
        assert log[-1]["loss"] < log[0]["loss"]

    def test_lr_schedule(self):
        assert nnet.lr_at_epoch(1, 1e-3) == 1e-3
        assert nnet.lr_at_epoch(30, 1e-3) == 1e-3
        assert nnet.lr_at_epoch(31, 1e-3) == 1e-3 * 0.95
        assert nnet.lr_at_epoch(32, 1e-3) == 1e-3 * 0.95 ** 2

    def test_zero_lr_keeps_weights_bit_identical(self):
        cfg = tiny_cfg(dtype="float32")
        model = SeldModel(cfg, seed=3)
        before = {k: v.copy() for k, v in model.state_dict().items()
                  if not k.endswith(("running_mean", "running_var"))}
        nnet.train_toy(model, self.make_dataset(cfg), epochs=2, lr0=0.0,
                       batch_size=2, seed=0)
        after = model.state_dict()
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_nan_aborts_with_diagnostic(self):
        cfg = tiny_cfg(dtype="float32")
        model = SeldModel(cfg, seed=3)
        model.head2.w.data[0, 0] = np.nan
        with pytest.raises(nnet.TrainingDiverged, match="epoch 1"):
            nnet.train_toy(model, self.make_dataset(cfg), epochs=1, lr0=1e-3)

    def test_early_stop(self):
        cfg = tiny_cfg(dtype="float32")
        model = SeldModel(cfg, seed=3)
        log = nnet.train_toy(model, self.make_dataset(cfg), epochs=50,
                             lr0=5e-3, batch_size=2, seed=0,
                             early_stop_ratio=0.9)
        assert len(log) < 50
        assert log[-1]["loss"] < 0.9 * log[0]["loss"]


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        cfg = tiny_cfg()
        model = SeldModel(cfg, seed=7)
        path = tmp_path / "m.ckpt"
        nnet.save_checkpoint(model, path)
        back = nnet.load_checkpoint(path)
        s0, s1 = model.state_dict(), back.state_dict()
        assert set(s0) == set(s1)
        assert all(np.array_equal(s0[k], s1[k]) for k in s0)
        assert back.config == cfg

    def test_deterministic_bytes(self, tmp_path):
        model = SeldModel(tiny_cfg(), seed=7)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        nnet.save_checkpoint(model, p1)
        nnet.save_checkpoint(model, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_state_dict_mismatch_rejected(self, tmp_path):
        model = SeldModel(tiny_cfg(), seed=7)
        state = model.state_dict()
        state.pop(sorted(state)[0])
        with pytest.raises(ValueError, match="missing"):
            model.load_state_dict(state)


class TestGradcheckSuite:
    def test_everything_within_tolerance(self):
        results = nnet.gradcheck_suite(seed=0)
        names = {n for n, _ in results}
        assert {"matmul", "conv2d", "depthwise_conv1d", "batch_norm_train",
                "layer_norm", "softmax", "scaled_dot_attention", "cnn_block",
                "conformer_block", "cross_modal_conformer_t1",
                "cross_modal_conformer_t577", "adpit_loss"} <= names
        bad = [(n, e) for n, e in results if e > 1e-4]
        assert not bad, bad

    def test_unknown_op_rejected(self):
        with pytest.raises(ValueError, match="unknown ops"):
            nnet.gradcheck_suite(which="definitely_not_an_op")
