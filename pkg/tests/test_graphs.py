"""Sparse graph construction: oracles, invariants, and ablation behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from sgcn import autodiff as ad
from sgcn import graphs as gg
from sgcn import model as mm
from sgcn.autodiff import Tensor
from sgcn.config import ModelConfig
from sgcn.errors import ConfigError

CFG = ModelConfig()


def small_cfg(**kw):
    base = dict(t_obs=4, t_pred=3, embed_dim=16, conv_layers=2)
    base.update(kw)
    return ModelConfig(**base)


def scene(rng, t_obs, n):
    return rng.normal(scale=0.4, size=(t_obs, n, 2))


class TestPositionEncoding:
    def test_shape_and_range(self):
        table = gg.position_encoding_table(8, 64)
        assert table.shape == (8, 64)
        assert np.all(np.abs(table) <= 1.0)

    def test_first_row_alternates(self):
        table = gg.position_encoding_table(4, 6)
        assert_allclose(table[0], [0.0, 1.0, 0.0, 1.0, 0.0, 1.0])

    def test_known_entry(self):
        table = gg.position_encoding_table(3, 4)
        assert_allclose(table[2, 0], np.sin(2.0))
        assert_allclose(table[2, 2], np.sin(2.0 / 100.0))

    def test_odd_dim_rejected(self):
        with pytest.raises(ConfigError):
            gg.position_encoding_table(4, 5)


class TestEmbedNodes:
    def test_zero_nodes_zero_bias(self):
        w = Tensor(np.ones((2, 8)))
        b = Tensor(np.zeros(8))
        out = gg.embed_nodes(np.zeros((3, 2, 2)), w, b)
        assert_allclose(out.data, 0.0)

    def test_encoding_breaks_coordinate_ties(self):
        rng = np.random.default_rng(0)
        w = Tensor(rng.normal(size=(2, 8)))
        b = Tensor(np.zeros(8))
        nodes = np.ones((1, 2, 2))  # same coordinates at two time steps
        enc = gg.position_encoding_table(2, 8)
        out = gg.embed_nodes(nodes, w, b, enc)
        assert not np.allclose(out.data[0, 0], out.data[0, 1])

    def test_zero_weights_pass_encoding_through(self):
        enc = gg.position_encoding_table(3, 8)
        out = gg.embed_nodes(np.ones((2, 3, 2)), Tensor(np.zeros((2, 8))), Tensor(np.zeros(8)), enc)
        assert_allclose(out.data[0], enc)
        assert_allclose(out.data[1], enc)


class TestAttentionScores:
    def linear(self, d, rng=None, zero=False):
        if zero:
            return Tensor(np.zeros((d, d))), Tensor(np.zeros(d))
        return Tensor(rng.normal(size=(d, d))), Tensor(np.zeros(d))

    def test_identical_rows_give_uniform_scores(self):
        rng = np.random.default_rng(1)
        e = Tensor(np.tile(rng.normal(size=(1, 16)), (5, 1)))
        wq, bq = self.linear(16, rng)
        wk, bk = self.linear(16, rng)
        out = gg.attention_scores(e, wq, bq, wk, bk)
        assert_allclose(out.data, 1.0 / 5.0)

    def test_hand_two_node_case(self):
        # Q and K engineered so row 0 logits are [1/sqrt(2), 0].
        e = Tensor(np.eye(2))
        wq = Tensor(np.array([[1.0, 0.0], [0.0, 0.0]]))
        wk = Tensor(np.eye(2))
        zero_b = Tensor(np.zeros(2))
        out = gg.attention_scores(e, wq, zero_b, wk, zero_b).data
        assert_allclose(out[0], [0.6698, 0.3302], atol=5e-5)
        assert_allclose(out[1], [0.5, 0.5])

    def test_triangular_mask_renormalizes(self):
        rng = np.random.default_rng(2)
        e = Tensor(rng.normal(size=(4, 3, 16)))
        wq, bq = self.linear(16, rng)
        wk, bk = self.linear(16, rng)
        causal = np.triu(np.ones((3, 3), dtype=bool))
        out = gg.attention_scores(e, wq, bq, wk, bk, mask=causal).data
        lower = np.tril(np.ones((3, 3), dtype=bool), k=-1)
        assert np.all(out[:, lower] == 0.0)
        assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6))
    @settings(max_examples=30, deadline=None)
    def test_rows_stochastic(self, seed, n):
        rng = np.random.default_rng(seed)
        e = Tensor(rng.normal(size=(n, 8)))
        wq, bq = self.linear(8, rng)
        wk, bk = self.linear(8, rng)
        out = gg.attention_scores(e, wq, bq, wk, bk).data
        assert_allclose(out.sum(axis=-1), 1.0, atol=1e-9)


class TestFuseSpatialTemporal:
    def test_identity_kernels(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(4, 3, 3)))
        k = Tensor(np.eye(4).reshape(4, 4, 1, 1))
        out = gg.fuse_spatial_temporal(x, k, Tensor(np.zeros(4)))
        assert_allclose(out.data, x.data, atol=1e-15)

    def test_averaging_kernels(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(4, 2, 2)))
        k = Tensor(np.full((4, 4, 1, 1), 0.25))
        out = gg.fuse_spatial_temporal(x, k, Tensor(np.zeros(4)))
        mean_slice = x.data.mean(axis=0)
        for t in range(4):
            assert_allclose(out.data[t], mean_slice, atol=1e-12)

    def test_shape_preserved(self):
        x = Tensor(np.zeros((8, 5, 5)))
        k = Tensor(np.zeros((8, 8, 1, 1)))
        assert gg.fuse_spatial_temporal(x, k, Tensor(np.zeros(8))).shape == (8, 5, 5)

    def test_wrong_channel_count_rejected(self):
        x = Tensor(np.zeros((8, 5, 5)))
        k = Tensor(np.zeros((6, 6, 1, 1)))
        with pytest.raises(ConfigError):
            gg.fuse_spatial_temporal(x, k, Tensor(np.zeros(6)))


def conv_layer(c, s, row=None, col=None, slope=0.25):
    row_k = np.zeros((c, c, 1, s)) if row is None else row
    col_k = np.zeros((c, c, s, 1)) if col is None else col
    return (Tensor(row_k), Tensor(np.zeros(c)), Tensor(col_k), Tensor(np.zeros(c)), Tensor(slope))


class TestAsymmetricConv:
    def test_zero_input_zero_biases(self):
        rng = np.random.default_rng(5)
        layers = [
            conv_layer(2, 3, row=rng.normal(size=(2, 2, 1, 3)), col=rng.normal(size=(2, 2, 3, 1)))
            for _ in range(2)
        ]
        out = gg.asymmetric_conv_features(Tensor(np.zeros((2, 4, 4))), layers)
        assert_allclose(out.data, 0.0)

    def test_identity_configuration(self):
        # centered-delta row kernel, zero column kernel, nonneg input
        delta = np.zeros((1, 1, 1, 3))
        delta[0, 0, 0, 1] = 1.0
        x = Tensor(np.abs(np.random.default_rng(6).normal(size=(1, 4, 4))))
        out = gg.asymmetric_conv_features(x, [conv_layer(1, 3, row=delta)])
        assert_allclose(out.data, x.data)

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(7)
        c, s, n = 2, 3, 4
        x = rng.normal(size=(c, n, n))
        layers = [
            conv_layer(
                c, s,
                row=rng.normal(size=(c, c, 1, s)),
                col=rng.normal(size=(c, c, s, 1)),
                slope=0.3,
            )
            for _ in range(2)
        ]

        def naive(x, layers):
            cur = x
            for row_k, row_b, col_k, col_b, slope in layers:
                h = np.zeros_like(cur)
                pad = np.pad(cur, ((0, 0), (1, 1), (1, 1)))
                for o in range(c):
                    for ci in range(c):
                        for i in range(n):
                            for j in range(n):
                                for t in range(s):
                                    h[o, i, j] += row_k.data[o, ci, 0, t] * pad[ci, i + 1, j + t]
                                    h[o, i, j] += col_k.data[o, ci, t, 0] * pad[ci, i + t, j + 1]
                h += (row_b.data + col_b.data)[:, None, None]
                cur = np.where(h < 0, slope.data * h, h)
            return cur

        out = gg.asymmetric_conv_features(Tensor(x), layers)
        assert_allclose(out.data, naive(x, layers), atol=1e-12)


class TestSparseMask:
    def test_boundary_included(self):
        assert gg.sparse_mask(np.zeros((2, 2)), 0.5).all()

    def test_sign_split(self):
        mask = gg.sparse_mask(np.array([[2.0, -2.0]]), 0.5)
        assert mask.tolist() == [[True, False]]

    def test_xi_one_blocks_everything(self):
        rng = np.random.default_rng(8)
        assert not gg.sparse_mask(rng.normal(size=(5, 5)), 1.0).any()

    def test_xi_zero_blocks_nothing(self):
        rng = np.random.default_rng(9)
        assert gg.sparse_mask(rng.normal(size=(5, 5)), 0.0).all()

    def test_out_of_range_xi_rejected(self):
        with pytest.raises(ConfigError):
            gg.sparse_mask(np.zeros((2, 2)), 1.5)


class TestSparseAdjacency:
    def test_all_ones_mask_passes_scores(self):
        rng = np.random.default_rng(10)
        scores = Tensor(rng.normal(size=(3, 3)))
        out = gg.sparse_adjacency(np.ones((3, 3), dtype=bool), scores)
        assert_allclose(out.data, scores.data)

    def test_all_zero_mask_keeps_diagonal_only(self):
        rng = np.random.default_rng(11)
        scores = Tensor(rng.normal(size=(4, 4)))
        out = gg.sparse_adjacency(np.zeros((4, 4), dtype=bool), scores)
        assert_allclose(np.diag(out.data), np.diag(scores.data))
        assert_allclose(out.data - np.diag(np.diag(out.data)), 0.0)

    def test_diagonal_multiplier_clamped_to_one(self):
        scores = Tensor(np.full((2, 2), 3.0))
        out = gg.sparse_adjacency(np.ones((2, 2), dtype=bool), scores)
        assert_allclose(np.diag(out.data), [3.0, 3.0])  # not 6.0


class TestZeroSoftmax:
    def test_zeros_map_to_zeros(self):
        out = gg.zero_softmax(Tensor([0.0, 0.0, 0.0]))
        assert np.array_equal(out.data, np.zeros(3))

    def test_ln2_oracle(self):
        out = gg.zero_softmax(Tensor([np.log(2.0), 0.0]))
        assert_allclose(out.data[0], 1.0 / (1.0 + 1e-12), atol=1e-12)
        assert out.data[1] == 0.0

    def test_symmetry(self):
        out = gg.zero_softmax(Tensor([1.0, 1.0, 1.0, 1.0]))
        assert_allclose(out.data, 0.25, atol=1e-9)

    def test_formula_row_sum(self):
        rng = np.random.default_rng(12)
        x = rng.uniform(0.1, 1.0, size=(4, 5))
        out = gg.zero_softmax(Tensor(x)).data
        s = ((np.exp(x) - 1.0) ** 2).sum(axis=-1)
        assert_allclose(out.sum(axis=-1), s / (s + 1e-12), atol=1e-15)
        assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6))
    @settings(max_examples=40, deadline=None)
    def test_zero_preservation_iff(self, seed, n):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-2.0, 2.0, size=n)
        x[rng.uniform(size=n) < 0.4] = 0.0
        out = gg.zero_softmax(Tensor(x)).data
        assert np.all(out >= 0.0)
        assert np.array_equal(out == 0.0, x == 0.0)


class TestBuildSpatialGraph:
    def test_shapes_and_h0(self):
        cfg = small_cfg()
        w = mm.init_weights(cfg, seed=0)
        adj, h0 = gg.build_spatial_graph(scene(np.random.default_rng(13), 4, 5), w, cfg)
        assert adj.normalized.shape == (4, 5, 5)
        assert adj.raw.shape == (4, 5, 5)
        assert adj.mask.shape == (4, 5, 5)
        assert h0.shape == (4, 5, 16)

    def test_single_pedestrian_self_loop(self):
        # Hand-set weights: identity fusion and an identity conv path make
        # the lone self-score exactly 1 before renormalization.
        cfg = small_cfg(conv_layers=1)
        w = mm.init_weights(cfg, seed=0)
        t = cfg.t_obs
        w["spa_fuse_k"] = Tensor(np.eye(t).reshape(t, t, 1, 1), requires_grad=True)
        w["spa_fuse_b"] = Tensor(np.zeros(t), requires_grad=True)
        delta = np.zeros((t, t, 1, 3))
        for c in range(t):
            delta[c, c, 0, 1] = 1.0
        w["spa_conv0_row_k"] = Tensor(delta, requires_grad=True)
        w["spa_conv0_col_k"] = Tensor(np.zeros((t, t, 3, 1)), requires_grad=True)
        adj, _ = gg.build_spatial_graph(scene(np.random.default_rng(14), t, 1), w, cfg)
        e1 = (np.e - 1.0) ** 2
        assert_allclose(adj.normalized.data, e1 / (e1 + 1e-12), atol=1e-12)

    def test_sparsity_survives_normalization(self):
        cfg = small_cfg()
        w = mm.init_weights(cfg, seed=1)
        adj, _ = gg.build_spatial_graph(scene(np.random.default_rng(15), 4, 6), w, cfg)
        assert np.all(adj.normalized.data[~adj.mask] == 0.0)

    def test_masked_entry_forced_by_hostile_conv(self):
        # Biasing the conv stack hard negative turns every off-diagonal
        # entry off; only self-loops survive.
        cfg = small_cfg(conv_layers=1)
        w = mm.init_weights(cfg, seed=2)
        t = cfg.t_obs
        w["spa_conv0_row_k"] = Tensor(np.zeros((t, t, 1, 3)), requires_grad=True)
        w["spa_conv0_col_k"] = Tensor(np.zeros((t, t, 3, 1)), requires_grad=True)
        w["spa_conv0_row_b"] = Tensor(np.full(t, -50.0), requires_grad=True)
        w["spa_conv0_col_b"] = Tensor(np.zeros(t), requires_grad=True)
        adj, _ = gg.build_spatial_graph(scene(np.random.default_rng(16), t, 4), w, cfg)
        off_diag = ~np.eye(4, dtype=bool)
        assert np.all(adj.normalized.data[:, off_diag] == 0.0)
        assert np.all(np.abs(adj.normalized.data[:, np.eye(4, dtype=bool)]) >= 0.0)

    def test_wrong_window_length_rejected(self):
        cfg = small_cfg()
        w = mm.init_weights(cfg, seed=0)
        with pytest.raises(ConfigError):
            gg.build_spatial_graph(scene(np.random.default_rng(17), 6, 3), w, cfg)


class TestBuildTemporalGraph:
    def test_shapes(self):
        cfg = small_cfg()
        w = mm.init_weights(cfg, seed=3)
        adj, h0 = gg.build_temporal_graph(scene(np.random.default_rng(18), 4, 5), w, cfg)
        assert adj.normalized.shape == (5, 4, 4)
        assert h0.shape == (5, 4, 16)

    def test_strictly_lower_exactly_zero(self):
        cfg = small_cfg()
        w = mm.init_weights(cfg, seed=4)
        adj, _ = gg.build_temporal_graph(scene(np.random.default_rng(19), 4, 5), w, cfg)
        lower = np.tril(np.ones((4, 4), dtype=bool), k=-1)
        assert np.all(adj.normalized.data[:, lower] == 0.0)
        assert np.all(adj.raw.data[:, lower] == 0.0)

    def test_single_step_window(self):
        cfg = small_cfg(t_obs=1, conv_layers=1)
        w = mm.init_weights(cfg, seed=5)
        adj, _ = gg.build_temporal_graph(scene(np.random.default_rng(20), 1, 3), w, cfg)
        assert adj.normalized.shape == (3, 1, 1)
        # lone causal score is exactly 1; its renormalized value is either
        # ~1 (kept) or exactly 0 (thresholded away), never in between
        vals = adj.normalized.data.ravel()
        assert np.all((vals == 0.0) | (np.abs(vals - 1.0) < 1e-6))

    def test_straight_vs_turning_differ(self):
        cfg = small_cfg()
        w = mm.init_weights(cfg, seed=6)
        straight = np.zeros((4, 1, 2))
        straight[:, 0, 0] = [0.0, 0.5, 0.5, 0.5]
        turn = np.zeros((4, 1, 2))
        turn[:, 0, 0] = [0.0, 0.5, 0.0, -0.5]
        turn[:, 0, 1] = [0.0, 0.0, 0.5, 0.5]
        a, _ = gg.build_temporal_graph(straight, w, cfg)
        b, _ = gg.build_temporal_graph(turn, w, cfg)
        assert not np.allclose(a.normalized.data, b.normalized.data)


class TestStructuralInvariants:
    @given(st.integers(0, 2**32 - 1), st.integers(1, 7))
    @settings(max_examples=30, deadline=None)
    def test_random_scene_contracts(self, seed, n):
        cfg = small_cfg()
        w = mm.init_weights(cfg, seed=0)
        disp = scene(np.random.default_rng(seed), cfg.t_obs, n)
        spa, _ = gg.build_spatial_graph(disp, w, cfg)
        tmp, _ = gg.build_temporal_graph(disp, w, cfg)
        assert spa.normalized.shape == (cfg.t_obs, n, n)
        assert tmp.normalized.shape == (n, cfg.t_obs, cfg.t_obs)
        assert np.all(spa.normalized.data >= 0.0)
        assert np.all(tmp.normalized.data >= 0.0)
        assert np.all(spa.normalized.data.sum(axis=-1) <= 1.0 + 1e-12)
        lower = np.tril(np.ones((cfg.t_obs, cfg.t_obs), dtype=bool), k=-1)
        assert np.all(tmp.normalized.data[:, lower] == 0.0)
        # diagonal always unmasked
        assert np.all(spa.mask[:, np.eye(n, dtype=bool)])
        assert np.all(tmp.mask[:, np.eye(cfg.t_obs, dtype=bool)])

    def test_xi_monotone_sparsity(self):
        rng = np.random.default_rng(21)
        disp = scene(rng, 4, 5)
        previous = None
        for xi in (0.0, 0.25, 0.5, 0.75, 1.0):
            cfg = small_cfg(xi=xi)
            w = mm.init_weights(cfg, seed=7)
            adj, _ = gg.build_spatial_graph(disp, w, cfg)
            nonzero = set(map(tuple, np.argwhere(adj.normalized.data != 0.0)))
            if previous is not None:
                assert nonzero <= previous, f"xi={xi} added entries"
            previous = nonzero

    def test_asymmetry_occurs(self):
        cfg = small_cfg()
        w = mm.init_weights(cfg, seed=8)
        adj, _ = gg.build_spatial_graph(scene(np.random.default_rng(22), 4, 4), w, cfg)
        a = adj.normalized.data
        assert not np.allclose(a, np.swapaxes(a, -1, -2))
