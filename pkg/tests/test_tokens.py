"""Tokenization oracles: patch layout, tube pairing, view reshapes."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from castlab import tensor as T
from castlab.tensor import Parameter, Tensor
from castlab.tokens import (ConfigError, TokenGrid, VideoClip, reshape_views,
                            spatial_tokenize, temporal_tokenize)


def _clip(b=1, frames=4, h=8, w=8, seed=0):
    rng = np.random.default_rng(seed)
    return VideoClip(rng.random((b, frames, h, w, 3)))


def _identity_proj(rows, frozen=True):
    d = rows
    return Parameter(np.eye(rows, d), frozen=frozen)


class TestVideoClip:
    def test_rejects_wrong_rank(self):
        with pytest.raises(ConfigError, match="5-dimensional"):
            VideoClip(np.zeros((2, 8, 8, 3)))

    def test_rejects_odd_frames(self):
        with pytest.raises(ConfigError, match="even"):
            VideoClip(np.zeros((1, 3, 8, 8, 3)))


class TestSpatialTokenize:
    def test_reads_only_even_frames(self):
        clip = _clip(frames=4)
        # corrupt the odd frames; tokens must not change
        other = VideoClip(clip.data.copy())
        other.data[:, 1::2] = 0.0
        p, d = 4, 4 * 4 * 3
        proj = _identity_proj(d)
        pos = Parameter(np.zeros((4 + 1, d)), frozen=True)
        cls = Parameter(np.zeros((1, d)), frozen=True)
        a = spatial_tokenize(clip, p, proj, pos, cls)
        b = spatial_tokenize(other, p, proj, pos, cls)
        assert np.array_equal(a.data.data, b.data.data)

    def test_patch_content_rowmajor(self):
        # [DERIVED] token (t, 1+j) under identity projection equals the
        # flattened pixels of patch j (row-major grid, row-major pixels)
        clip = _clip(b=1, frames=2, h=8, w=8)
        p, d = 4, 4 * 4 * 3
        proj = _identity_proj(d)
        pos = Parameter(np.zeros((5, d)), frozen=True)
        cls = Parameter(np.zeros((1, d)), frozen=True)
        grid = spatial_tokenize(clip, p, proj, pos, cls)
        frame = clip.data[0, 0]
        for j, (gy, gx) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
            patch = frame[gy * 4:(gy + 1) * 4, gx * 4:(gx + 1) * 4].reshape(-1)
            assert np.allclose(grid.data.data[0, 0, 1 + j], patch, atol=1e-6)

    def test_cls_at_space_index_zero(self):
        clip = _clip(frames=2)
        p, d = 4, 4 * 4 * 3
        proj = _identity_proj(d)
        pos = Parameter(np.zeros((5, d)), frozen=True)
        cls = Parameter(np.full((1, d), 7.0), frozen=True)
        grid = spatial_tokenize(clip, p, proj, pos, cls)
        assert grid.has_cls
        assert np.allclose(grid.data.data[:, :, 0], 7.0)

    def test_indivisible_resolution_rejected(self):
        with pytest.raises(ConfigError, match="divisible"):
            spatial_tokenize(_clip(h=10, w=10), 4,
                             _identity_proj(48),
                             Parameter(np.zeros((5, 48))),
                             Parameter(np.zeros((1, 48))))


class TestTemporalTokenize:
    def _tokenize(self, clip, p=4):
        d = 2 * p * p * 3
        proj = Parameter(np.eye(d), frozen=True)
        t, n = clip.frames // 2, (clip.data.shape[2] // p) ** 2
        pos = Parameter(np.zeros((t, n, d)), frozen=True)
        return temporal_tokenize(clip, p, proj, pos)

    def test_tube_pairs_adjacent_sampled_steps(self):
        # [DERIVED] tube t = concat(frame 2t, frame (2t+2) mod F) patches
        clip = _clip(b=1, frames=8, h=4, w=4, seed=3)
        grid = self._tokenize(clip)
        f = clip.data[0]
        half = 4 * 4 * 3
        for t in range(4):
            tok = grid.data.data[0, t, 0]
            assert np.allclose(tok[:half], f[2 * t].reshape(-1), atol=1e-6)
            assert np.allclose(tok[half:], f[(2 * t + 2) % 8].reshape(-1), atol=1e-6)

    def test_grid_shape(self):
        clip = _clip(b=2, frames=6, h=8, w=8)
        grid = self._tokenize(clip)
        assert grid.data.shape == (2, 3, 4, 2 * 4 * 4 * 3)
        assert not grid.has_cls

    def test_blind_to_odd_frames(self):
        clip = _clip(frames=4, seed=5)
        other = VideoClip(clip.data.copy())
        other.data[:, 1::2] = 1.0
        a, b = self._tokenize(clip), self._tokenize(other)
        assert np.array_equal(a.data.data, b.data.data)


class TestTokenGrid:
    def test_detach_attach_roundtrip(self):
        data = Tensor(np.random.default_rng(0).random((1, 2, 5, 3)))
        grid = TokenGrid(data, has_cls=True)
        cls, rest = grid.detach_cls()
        back = rest.attach_cls(cls)
        assert np.array_equal(back.data.data, grid.data.data)
        assert back.has_cls

    def test_detach_without_cls_rejected(self):
        grid = TokenGrid(Tensor(np.zeros((1, 2, 4, 3))))
        with pytest.raises(ValueError, match="CLS"):
            grid.detach_cls()

    def test_patches_property(self):
        with_cls = TokenGrid(Tensor(np.zeros((1, 2, 5, 3))), has_cls=True)
        without = TokenGrid(Tensor(np.zeros((1, 2, 5, 3))))
        assert with_cls.patches == 4
        assert without.patches == 5


@given(st.sampled_from(["bt_n", "bn_t", "b_tn"]),
       st.integers(1, 3), st.integers(1, 4), st.integers(1, 4))
@settings(max_examples=40, deadline=None)
def test_reshape_views_roundtrip_exact(order, b, t, s):
    rng = np.random.default_rng(17)
    grid = TokenGrid(Tensor(rng.random((b, t, s, 3))))
    flat, restore = reshape_views(grid, order)
    back = restore(flat)
    assert np.array_equal(back.data.data, grid.data.data)


def test_reshape_views_unknown_order():
    grid = TokenGrid(Tensor(np.zeros((1, 2, 2, 3))))
    with pytest.raises(ValueError, match="view order"):
        reshape_views(grid, "n_bt")


def test_reshape_views_gradient_flows():
    x = Parameter(np.random.default_rng(2).random((1, 2, 3, 4)))
    grid = TokenGrid(x)
    flat, restore = reshape_views(grid, "bn_t")
    loss = T.reduce_sum(restore(flat).data * 2.0)
    loss.backward()
    assert np.allclose(x.grad, 2.0)
