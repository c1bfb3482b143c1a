"""Model assembly, freezing policy, variants, and checkpoint I/O."""

import numpy as np
import pytest

from castlab.model import (VARIANTS, CastConfig, CastModel, CheckpointError,
                           build_variant, load_checkpoint, save_checkpoint)
from castlab.tokens import ConfigError, VideoClip


def _config(**kw):
    base = dict(depth=2, dim=16, heads=2, patch=8, frames=4, height=16,
                width=16, appearance_classes=3, motion_classes=2, seed=0)
    base.update(kw)
    return CastConfig(**base)


def _clip(cfg, b=2, seed=0):
    rng = np.random.default_rng(seed)
    return VideoClip(rng.random((b, cfg.frames, cfg.height, cfg.width, 3),
                                ).astype(np.float32))


class TestConfigValidation:
    def test_defaults_valid(self):
        _config().validate()

    @pytest.mark.parametrize("kw,msg", [
        (dict(frames=5), "even"),
        (dict(height=15), "divisible"),
        (dict(dim=15), "divisible"),
        (dict(variant="fusion"), "variant"),
        (dict(exchange_kind="mystery"), "exchange kind"),
        (dict(head_kind="triple"), "head kind"),
        (dict(exchange_layers=(0,)), "out of range"),
        (dict(exchange_layers=(3,)), "out of range"),
        (dict(temporal_attention="factored"), "temporal_attention"),
        (dict(head_kind="single", variant="ensemble"), "dual"),
    ])
    def test_invalid_configs(self, kw, msg):
        with pytest.raises(ConfigError, match=msg):
            _config(**kw).validate()

    def test_active_exchange_layers(self):
        assert _config().active_exchange_layers() == {1, 2}
        assert _config(exchange_layers=(2,)).active_exchange_layers() == {2}
        assert _config(variant="independent").active_exchange_layers() == frozenset()

    def test_hash_stable_and_sensitive(self):
        assert _config().config_hash() == _config().config_hash()
        assert _config().config_hash() != _config(dim=32).config_hash()

    def test_dict_roundtrip(self):
        cfg = _config(exchange_layers=(1,))
        assert CastConfig.from_dict(cfg.to_dict()) == cfg


class TestFreezingPolicy:
    def test_tower_weights_frozen_exchange_learnable(self):
        model = build_variant(_config())
        frozen = dict(model.frozen_parameters())
        learnable = dict(model.learnable_parameters())
        assert "block1.spatial.attn.w_q" in frozen
        assert "block1.spatial.ffn.w1" in frozen
        assert "spatial.patch_proj.weight" in frozen
        assert "block1.spatial.adap_attn.w_down" in learnable
        assert "block1.exchange.down_s.weight" in learnable
        assert "final_ln.spatial.gamma" in learnable
        assert "head.appearance.weight" in learnable

    def test_no_parameter_is_both(self):
        model = build_variant(_config())
        names_f = {n for n, _ in model.frozen_parameters()}
        names_l = {n for n, _ in model.learnable_parameters()}
        assert not names_f & names_l

    def test_shared_seed_shares_frozen_towers(self):
        a = build_variant(_config(variant="cast"))
        b = build_variant(_config(variant="independent"))
        fa, fb = dict(a.frozen_parameters()), dict(b.frozen_parameters())
        assert set(fa) == set(fb)
        for name in fa:
            assert np.array_equal(fa[name].data, fb[name].data), name


class TestVariants:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_every_variant_builds_and_runs(self, variant):
        cfg = _config(variant=variant)
        model = build_variant(cfg)
        streams = model.forward(_clip(cfg, b=1))
        for logits in streams:
            for task, z in logits.items():
                assert z.shape[0] == 1

    def test_single_tower_variants_skip_other_tower(self):
        spatial = build_variant(_config(variant="spatial_only"))
        names = {n for n, _ in spatial.named_parameters()}
        assert not any(".temporal" in n for n in names)
        temporal = build_variant(_config(variant="temporal_only"))
        names = {n for n, _ in temporal.named_parameters()}
        assert not any(".spatial" in n for n in names)

    def test_ensemble_emits_two_streams(self):
        cfg = _config(variant="ensemble")
        streams = build_variant(cfg).forward(_clip(cfg, b=1))
        assert len(streams) == 2

    def test_single_head_predicts_joint_classes(self):
        cfg = _config(head_kind="single")
        streams = build_variant(cfg).forward(_clip(cfg, b=2))
        assert list(streams[0]) == ["action"]
        assert streams[0]["action"].shape == (2, 6)

    def test_predict_proba_normalized(self):
        cfg = _config()
        probs = build_variant(cfg).predict_proba(_clip(cfg, b=3))
        for task, p in probs.items():
            assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-5)

    def test_forward_deterministic(self):
        cfg = _config()
        clip = _clip(cfg)
        a = build_variant(cfg).predict_proba(clip)
        b = build_variant(cfg).predict_proba(clip)
        for task in a:
            assert np.array_equal(a[task], b[task])


class TestZeroInitIdentity:
    def test_fresh_cast_equals_independent(self):
        # zero-initialized up-projections make the exchange invisible
        cfg_c, cfg_i = _config(variant="cast"), _config(variant="independent")
        clip = _clip(cfg_c, b=4, seed=11)
        za = build_variant(cfg_c).forward(clip)[0]
        zb = build_variant(cfg_i).forward(clip)[0]
        for task in za:
            assert np.array_equal(za[task].data, zb[task].data)

    def test_lateral_zero_init_identity(self):
        cfg_l, cfg_i = _config(variant="lateral"), _config(variant="independent")
        clip = _clip(cfg_l, b=2, seed=12)
        za = build_variant(cfg_l).forward(clip)[0]
        zb = build_variant(cfg_i).forward(clip)[0]
        for task in za:
            assert np.array_equal(za[task].data, zb[task].data)


class TestFrameReversalInvariance:
    @pytest.mark.parametrize("frames", [4, 6, 8])
    def test_spatial_logits_exactly_reversal_invariant(self, frames):
        """Holding each step for two frames makes reversal a permutation of
        the even frames, and the spatial pooling is exactly symmetric, so
        the logits match bitwise."""
        cfg = _config(variant="spatial_only", frames=frames)
        model = build_variant(cfg)
        rng = np.random.default_rng(5)
        steps = rng.random((2, frames // 2, 16, 16, 3)).astype(np.float32)
        pixels = np.repeat(steps, 2, axis=1)
        fwd = model.forward(VideoClip(pixels))[0]
        rev = model.forward(VideoClip(pixels[:, ::-1].copy()))[0]
        for task in fwd:
            assert np.array_equal(fwd[task].data, rev[task].data)


class TestCheckpoints:
    def test_roundtrip_bitwise(self, tmp_path):
        cfg = _config()
        model = build_variant(cfg)
        for _, p in model.learnable_parameters():
            p.data += 0.5
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        clone = build_variant(cfg)
        load_checkpoint(clone, path)
        for (_, a), (_, b) in zip(sorted(model.named_parameters()),
                                  sorted(clone.named_parameters())):
            assert np.array_equal(a.data, b.data)

    def test_corruption_detected(self, tmp_path):
        model = build_variant(_config())
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 3] ^= 0x01
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="CRC"):
            load_checkpoint(build_variant(_config()), path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"garbage file" * 4)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(build_variant(_config()), path)

    def test_shape_mismatch_names_parameter(self, tmp_path):
        model = build_variant(_config())
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        with pytest.raises(CheckpointError, match="head.appearance"):
            load_checkpoint(build_variant(_config(appearance_classes=4)), path)

    def test_missing_parameters_rejected(self, tmp_path):
        model = build_variant(_config(variant="spatial_only"))
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        with pytest.raises(CheckpointError):
            load_checkpoint(build_variant(_config(variant="cast")), path)

    def test_save_is_deterministic(self, tmp_path):
        model = build_variant(_config())
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(model, p1)
        save_checkpoint(model, p2)
        assert p1.read_bytes() == p2.read_bytes()
