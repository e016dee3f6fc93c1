"""Tests for the spatial-gradient edge operator and label-derived edge targets."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from triseg import edges, tensor as T
from triseg.errors import DataError, ParameterError, ShapeError
from triseg.tensor import Tensor


def vertical_split_labels(h=4, w=4):
    labels = np.zeros((h, w), dtype=np.int64)
    labels[:, w // 2 :] = 1
    return labels


class TestSpatialGradient:
    def test_constant_map_gives_exact_zero(self):
        s = Tensor(np.full((3, 6, 6), 0.25))
        out = edges.spatial_gradient(s)
        assert np.array_equal(out.data, np.zeros((3, 6, 6)))

    def test_step_map_band_values(self):
        s = np.zeros((1, 4, 4))
        s[:, :, :2] = 1.0
        out = edges.spatial_gradient(Tensor(s))
        for row in out.data[0]:
            assert np.allclose(row, [0.0, 1 / 3, 1 / 3, 0.0], atol=1e-15)

    def test_complementary_channels_have_equal_gradient(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0.05, 0.95, size=(1, 5, 5))
        s = Tensor(np.concatenate([p, 1.0 - p], axis=0))
        out = edges.spatial_gradient(s).data
        assert np.allclose(out[0], out[1], atol=1e-12)

    def test_even_window_rejected(self):
        with pytest.raises(ParameterError):
            edges.spatial_gradient(Tensor(np.ones((1, 4, 4))), w=4)

    def test_needs_spatial_dims(self):
        with pytest.raises(ShapeError):
            edges.spatial_gradient(Tensor(np.ones(5)))

    def test_array_twin_is_bit_identical(self):
        x = np.random.default_rng(1).normal(size=(2, 7, 5))
        a = edges.spatial_gradient(Tensor(x)).data
        b = edges.spatial_gradient_array(x)
        assert np.array_equal(a, b)

    def test_output_stays_in_unit_range_for_probabilities(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(4, 8, 8))
        s = T.softmax_channel(Tensor(logits))
        out = edges.spatial_gradient(s).data
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestDeriveEdgeTargets:
    def test_uniform_labels_yield_empty_target(self):
        target = edges.derive_edge_targets(np.zeros((6, 6), dtype=np.int64), 3)
        assert np.array_equal(target.g, np.zeros((3, 6, 6)))
        assert np.array_equal(target.beta, np.ones(3))
        # every valid pixel is non-edge, so each gets weight 1 - beta = 0
        assert np.array_equal(target.weight_map, np.zeros((3, 6, 6)))
        assert target.valid_mask.all()

    def test_vertical_split_band_and_beta(self):
        target = edges.derive_edge_targets(vertical_split_labels(), 2)
        expected_cols = np.zeros((4, 4))
        expected_cols[:, 1:3] = 1.0
        assert np.array_equal(target.g[0], expected_cols)
        assert np.array_equal(target.g[1], expected_cols)
        assert np.array_equal(target.beta, [0.5, 0.5])

    def test_weight_map_is_beta_on_edges_elsewhere_complement(self):
        target = edges.derive_edge_targets(vertical_split_labels(), 2)
        on_edge = target.g == 1.0
        assert np.all(target.weight_map[on_edge] == 0.5)
        assert np.all(target.weight_map[~on_edge] == 0.5)  # beta == 1 - beta here

    def test_ignore_pixels_are_excluded_everywhere(self):
        labels = vertical_split_labels(6, 6)
        labels[0, :] = 255
        target = edges.derive_edge_targets(labels, 2)
        assert not target.valid_mask[0].any()
        assert np.array_equal(target.weight_map[:, 0, :], np.zeros((2, 6)))
        assert target.n_valid == 30
        # beta counts only valid pixels: 12 edge pixels out of 30
        assert np.allclose(target.beta, (30 - 12) / 30)

    def test_absent_class_gets_beta_one(self):
        target = edges.derive_edge_targets(vertical_split_labels(), 4)
        assert target.beta[2] == 1.0 and target.beta[3] == 1.0
        assert np.array_equal(target.g[2], np.zeros((4, 4)))

    def test_all_ignore_map(self):
        labels = np.full((4, 4), 255, dtype=np.int64)
        target = edges.derive_edge_targets(labels, 2)
        assert target.n_valid == 0
        assert np.array_equal(target.beta, np.ones(2))
        assert np.array_equal(target.weight_map, np.zeros((2, 4, 4)))

    def test_out_of_range_label_names_pixel(self):
        labels = np.zeros((4, 4), dtype=np.int64)
        labels[2, 3] = 9
        with pytest.raises(DataError, match=r"\(2, 3\)"):
            edges.derive_edge_targets(labels, 4)

    def test_rejects_non_2d(self):
        with pytest.raises(ShapeError):
            edges.derive_edge_targets(np.zeros((2, 4, 4), dtype=np.int64), 2)

    def test_band_width_is_at_most_two_per_side(self):
        # straight boundary between columns 7 and 8 on a 16x16 map, window 3:
        # only pixels whose 3x3 neighborhood straddles the boundary can fire
        labels = vertical_split_labels(16, 16)
        target = edges.derive_edge_targets(labels, 2)
        cols = np.where(target.g[0].any(axis=0))[0]
        assert cols.min() >= 6 and cols.max() <= 9
        assert len(cols) <= 4

    def test_onehot_support_matches_derived_band(self):
        # a perfectly confident prediction of the label map produces a
        # detector response exactly on the target's support
        labels = vertical_split_labels()
        target = edges.derive_edge_targets(labels, 2)
        onehot = np.stack([(labels == k).astype(np.float64) for k in range(2)])
        response = edges.spatial_gradient_array(onehot)
        assert np.array_equal(response > 0.0, target.g == 1.0)


class TestBinaryEdgeUnion:
    def test_union_of_split_is_same_band(self):
        target = edges.derive_edge_targets(vertical_split_labels(), 2)
        union = edges.binary_edge_union(target)
        assert union.num_classes == 1
        assert np.array_equal(union.g[0], target.g[0])
        assert union.beta[0] == 0.5

    def test_uniform_map_unions_to_empty(self):
        target = edges.derive_edge_targets(np.zeros((4, 4), dtype=np.int64), 3)
        union = edges.binary_edge_union(target)
        assert not union.g.any()
        assert union.beta[0] == 1.0

    def test_union_keeps_valid_mask(self):
        labels = vertical_split_labels(6, 6)
        labels[:2, :2] = 255
        target = edges.derive_edge_targets(labels, 2)
        union = edges.binary_edge_union(target)
        assert np.array_equal(union.valid_mask, target.valid_mask)
        assert np.all(union.weight_map[:, :2, :2] == 0.0)


@settings(max_examples=40, deadline=None)
@given(
    arrays(
        np.int64,
        st.tuples(st.integers(3, 8), st.integers(3, 8)),
        elements=st.sampled_from([0, 1, 2, 255]),
    )
)
def test_target_invariants_hold_for_random_maps(labels):
    target = edges.derive_edge_targets(labels, 3)
    assert set(np.unique(target.g)) <= {0.0, 1.0}
    assert np.all((target.beta >= 0.0) & (target.beta <= 1.0))
    valid = target.valid_mask
    for k in range(3):
        n_edge = int(target.g[k][valid].sum())
        if valid.sum() > 0:
            # edge / non-edge partition the valid pixels
            assert target.beta[k] == (valid.sum() - n_edge) / valid.sum()
        assert np.all(target.weight_map[k][~valid] == 0.0)
        on = target.g[k][valid] == 1.0
        w = target.weight_map[k][valid]
        assert np.all(w[on] == target.beta[k])
        assert np.all(w[~on] == 1.0 - target.beta[k])
