"""Tests for the classifier network and its binary checkpoint container."""

import numpy as np
import pytest

from tfssd import autodiff as ad
from tfssd.errors import (
    ConfigError,
    FormatError,
    InvalidArgumentError,
    SemanticMismatchError,
    ShapeMismatchError,
)
from tfssd.model import (
    CHECKPOINT_MAGIC,
    ModelConfig,
    attention_encoder,
    blank_params,
    classifier_forward,
    init_params,
    load_checkpoint,
    model_forward,
    param_count,
    pool_mean,
    save_checkpoint,
)
from tfssd.tf_block import TfBlockConfig


def make_config(**overrides):
    base = dict(
        d_in=5,
        d_model=8,
        heads=2,
        block=TfBlockConfig(
            d_model=8, d_inner=6, d_state=2, n_groups=1, d_conv=3, chunk=4
        ),
        n_blocks=1,
        n_classes=3,
        mlp_hidden=10,
    )
    base.update(overrides)
    return ModelConfig(**base)


class TestModelConfig:
    def test_head_divisibility_enforced(self):
        with pytest.raises(ConfigError):
            make_config(heads=3)

    def test_minimum_class_count(self):
        with pytest.raises(ConfigError):
            make_config(n_classes=1)

    def test_block_width_must_match_model_width(self):
        with pytest.raises(ConfigError):
            make_config(
                block=TfBlockConfig(d_model=7, d_inner=6, d_state=2)
            )

    def test_width_tracks_encoder_choice(self):
        assert make_config().width == 8
        no_enc = make_config(
            use_encoder=False,
            block=TfBlockConfig(d_model=5, d_inner=6, d_state=2),
        )
        assert no_enc.width == 5

    def test_dict_round_trip(self):
        cfg = make_config()
        again = ModelConfig.from_dict(cfg.to_dict())
        assert again == cfg
        assert isinstance(again.block.branch_domains, tuple)


class TestAttentionEncoder:
    def test_output_shape(self):
        cfg = make_config()
        params = init_params(cfg, np.random.default_rng(0))
        x = np.random.default_rng(1).standard_normal((7, 5))
        out = attention_encoder(ad.constant(x), params.encoder, cfg)
        assert out.data.shape == (7, 8)

    def test_permutation_equivariance(self):
        # no positional signal: permuting tokens permutes outputs identically
        cfg = make_config()
        params = init_params(cfg, np.random.default_rng(2))
        rng = np.random.default_rng(3)
        x = rng.standard_normal((6, 5))
        perm = rng.permutation(6)
        straight = attention_encoder(ad.constant(x), params.encoder, cfg).data
        shuffled = attention_encoder(ad.constant(x[perm]), params.encoder, cfg).data
        assert np.allclose(shuffled, straight[perm], atol=1e-12)

    def test_zero_query_mixes_uniformly(self):
        cfg = make_config()
        params = init_params(cfg, np.random.default_rng(4))
        params.encoder.q_proj.data[:] = 0.0
        params.encoder.q_bias.data[:] = 0.0
        params.encoder.o_proj.data[:] = np.eye(8)
        params.encoder.o_bias.data[:] = 0.0
        x = np.random.default_rng(5).standard_normal((5, 5))
        out = attention_encoder(ad.constant(x), params.encoder, cfg).data
        z = x @ params.encoder.in_proj.data + params.encoder.in_bias.data
        from tfssd import numerics

        u = numerics.layer_norm(
            z, params.encoder.norm_gain.data, params.encoder.norm_shift.data
        )
        v = u @ params.encoder.v_proj.data + params.encoder.v_bias.data
        expected = z + np.tile(v.mean(axis=0), (5, 1))
        assert np.allclose(out, expected, atol=1e-12)

    def test_wrong_input_width_rejected(self):
        cfg = make_config()
        params = init_params(cfg, np.random.default_rng(6))
        with pytest.raises(ShapeMismatchError):
            attention_encoder(ad.constant(np.zeros((4, 7))), params.encoder, cfg)


class TestPoolingAndClassifier:
    def test_mean_pooling_value(self):
        tokens = ad.constant(np.arange(12.0).reshape(4, 3))
        pooled = pool_mean(tokens)
        assert np.allclose(pooled.data, [4.5, 5.5, 6.5])

    def test_empty_sequence_rejected(self):
        with pytest.raises(InvalidArgumentError):
            pool_mean(ad.constant(np.zeros((0, 3))))

    def test_classifier_closed_form(self):
        cfg = make_config()
        params = init_params(cfg, np.random.default_rng(7))
        pooled = np.random.default_rng(8).standard_normal(8)
        logits = classifier_forward(ad.constant(pooled), params.classifier).data
        from tfssd import numerics

        clf = params.classifier
        hidden = numerics.silu(pooled @ clf.w1.data + clf.b1.data)
        assert np.allclose(logits, hidden @ clf.w2.data + clf.b2.data, atol=1e-12)


class TestModelForward:
    @pytest.mark.parametrize(
        "use_encoder,use_blocks", [(True, True), (True, False), (False, True), (False, False)]
    )
    def test_shapes_for_all_layout_choices(self, use_encoder, use_blocks):
        width = 8 if use_encoder else 5
        cfg = make_config(
            use_encoder=use_encoder,
            use_blocks=use_blocks,
            block=TfBlockConfig(d_model=width, d_inner=6, d_state=2),
        )
        params = init_params(cfg, np.random.default_rng(9))
        x = np.random.default_rng(10).standard_normal((6, 5))
        logits, pooled = model_forward(x, params, cfg)
        assert logits.data.shape == (3,)
        assert pooled.data.shape == (width,)

    def test_trace_covers_first_block_only(self):
        cfg = make_config(n_blocks=2)
        params = init_params(cfg, np.random.default_rng(11))
        trace = {}
        model_forward(
            np.random.default_rng(12).standard_normal((6, 5)), params, cfg, trace
        )
        assert trace["token_intensity_in"].shape == (6,)
        assert trace["power_before"].shape == (4,)

    def test_gradient_reaches_trainable_parameters(self):
        cfg = make_config()
        params = init_params(cfg, np.random.default_rng(13))
        named = params.named_tensors()
        logits, _ = model_forward(
            np.random.default_rng(14).standard_normal((5, 5)), params, cfg
        )
        for t in named.values():
            t.reset_grad()
        ad.tsum(logits * logits).backward()
        for name, t in named.items():
            if name == "prototypes":
                continue  # only the contrastive objective touches these
            assert t.grad is not None and np.abs(t.grad).max() > 0.0, name


class TestParamCount:
    @pytest.mark.parametrize(
        "overrides",
        [
            {},
            {"n_blocks": 2},
            {"use_encoder": False, "block": TfBlockConfig(d_model=5, d_inner=6, d_state=2)},
            {"use_blocks": False},
            {"use_encoder": False, "use_blocks": False},
            {
                "block": TfBlockConfig(
                    d_model=8,
                    d_inner=6,
                    d_state=2,
                    n_groups=2,
                    branch_domains=("time", "time"),
                )
            },
            {
                "block": TfBlockConfig(
                    d_model=8, d_inner=6, d_state=2, branch_domains=("time",)
                )
            },
        ],
    )
    def test_formula_matches_actual_tensors(self, overrides):
        cfg = make_config(**overrides)
        params = init_params(cfg, np.random.default_rng(15))
        actual = sum(
            t.data.size for t in params.named_tensors().values()
        )
        assert param_count(cfg) == actual

    def test_named_tensors_order_is_stable(self):
        cfg = make_config()
        a = init_params(cfg, np.random.default_rng(16))
        b = init_params(cfg, np.random.default_rng(17))
        assert list(a.named_tensors()) == list(b.named_tensors())


class TestCheckpoint:
    def save_and_reload(self, tmp_path, cfg, params, **kwargs):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, cfg, params, **kwargs)
        return path, load_checkpoint(path)

    def test_round_trip_is_bit_exact(self, tmp_path):
        cfg = make_config()
        params = init_params(cfg, np.random.default_rng(18))
        path, (cfg2, params2, step, seed, extra) = self.save_and_reload(
            tmp_path, cfg, params, step=7, seed=42, extra={"classes": ["a", "b", "c"]}
        )
        assert cfg2 == cfg
        assert step == 7 and seed == 42
        assert extra == {"classes": ["a", "b", "c"]}
        before = params.named_tensors()
        after = params2.named_tensors()
        assert list(before) == list(after)
        for name in before:
            assert np.array_equal(before[name].data, after[name].data), name
            assert before[name].data.shape == after[name].data.shape

    def test_scalar_threshold_survives_round_trip(self, tmp_path):
        # rank-0 tensors must be written as rank 0, not promoted to rank 1
        cfg = make_config()
        params = init_params(cfg, np.random.default_rng(19))
        _, (_, params2, _, _, _) = self.save_and_reload(
            tmp_path, cfg, params, step=0, seed=0
        )
        reloaded = params2.named_tensors()["blocks.0.branches.1.rho_omega"]
        assert reloaded.data.shape == ()

    def test_forward_identical_after_reload(self, tmp_path):
        cfg = make_config()
        params = init_params(cfg, np.random.default_rng(20))
        x = np.random.default_rng(21).standard_normal((6, 5))
        logits, _ = model_forward(x, params, cfg)
        _, (cfg2, params2, _, _, _) = self.save_and_reload(
            tmp_path, cfg, params, step=0, seed=0
        )
        logits2, _ = model_forward(x, params2, cfg2)
        assert np.array_equal(logits.data, logits2.data)

    def test_bad_magic_rejected_with_offset(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(FormatError) as err:
            load_checkpoint(path)
        assert "byte offset 0" in str(err.value)

    def test_unsupported_version_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(CHECKPOINT_MAGIC + (99).to_bytes(4, "little") + b"\x00" * 8)
        with pytest.raises(FormatError) as err:
            load_checkpoint(path)
        assert "version" in str(err.value)

    def test_truncation_reported_with_offset(self, tmp_path):
        cfg = make_config()
        params = init_params(cfg, np.random.default_rng(22))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, cfg, params, step=0, seed=0)
        blob = path.read_bytes()
        cut = tmp_path / "cut.ckpt"
        cut.write_bytes(blob[: len(blob) - 11])
        with pytest.raises(FormatError) as err:
            load_checkpoint(cut)
        assert "byte offset" in str(err.value)

    def test_renamed_tensor_detected(self, tmp_path):
        cfg = make_config()
        params = init_params(cfg, np.random.default_rng(23))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, cfg, params, step=0, seed=0)
        doctored = path.read_bytes().replace(b"classifier.w1", b"classifier.wX", 1)
        bad = tmp_path / "doctored.ckpt"
        bad.write_bytes(doctored)
        with pytest.raises(SemanticMismatchError):
            load_checkpoint(bad)

    def test_trailing_garbage_rejected(self, tmp_path):
        cfg = make_config()
        params = init_params(cfg, np.random.default_rng(24))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, cfg, params, step=0, seed=0)
        bad = tmp_path / "padded.ckpt"
        bad.write_bytes(path.read_bytes() + b"\x01\x02")
        with pytest.raises(FormatError):
            load_checkpoint(bad)

    def test_blank_params_match_layout(self):
        cfg = make_config()
        blank = blank_params(cfg)
        live = init_params(cfg, np.random.default_rng(25))
        assert list(blank.named_tensors()) == list(live.named_tensors())
        # drawn weights are zeroed; structural constants (gains, threshold
        # pre-parameter) keep their fixed values since loaders overwrite all
        named = blank.named_tensors()
        assert np.all(named["classifier.w1"].data == 0.0)
        assert np.all(named["blocks.0.out_proj"].data == 0.0)
        assert np.all(named["blocks.0.norm_gain"].data == 1.0)
