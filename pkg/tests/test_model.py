"""Model construction and forward-pass tests."""

import numpy as np
import pytest

from triseg import losses, tensor as T
from triseg.errors import ParameterError, ShapeError
from triseg.model import FUSION_MODES, ModelConfig, ParameterSet, SegEdgeModel
from triseg.tensor import Tape, Tensor


def make_model(seed=0, **kwargs):
    kwargs.setdefault("num_classes", 4)
    model = SegEdgeModel(ModelConfig(**kwargs))
    model.init_parameters(seed)
    return model


def rand_image(rng, n=1, size=32):
    return Tensor(rng.normal(size=(n, 3, size, size)))


class TestModelConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"num_classes": 1},
            {"num_classes": 4, "edge_mode": "both"},
            {"num_classes": 4, "fusion": "learned"},
            {"num_classes": 4, "input_size": (60, 64)},
            {"num_classes": 4, "input_size": (0, 64)},
            {"num_classes": 4, "base_channels": 0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ParameterError):
            ModelConfig(**kwargs)

    @pytest.mark.parametrize("mode,channels", [("semantic", 4), ("binary", 1), ("none", 0)])
    def test_edge_channels(self, mode, channels):
        assert ModelConfig(num_classes=4, edge_mode=mode).edge_channels == channels


class TestParameterSet:
    def test_duplicate_name_rejected(self):
        ps = ParameterSet()
        ps.add("a", Tensor(np.zeros(2)))
        with pytest.raises(ParameterError):
            ps.add("a", Tensor(np.zeros(2)))

    def test_names_are_sorted_and_counted(self):
        ps = ParameterSet()
        ps.add("b", Tensor(np.zeros((2, 3))))
        ps.add("a", Tensor(np.zeros(4)))
        assert ps.names() == ["a", "b"]
        assert ps.count() == 10
        assert "a" in ps and "c" not in ps

    def test_zero_grads(self):
        ps = ParameterSet()
        ps.add("a", Tensor(np.zeros(2)))
        ps["a"].accumulate_grad(np.ones(2))
        ps.zero_grads()
        assert ps["a"].grad is None


class TestShapes:
    def test_encoder_pyramid(self):
        model = make_model()
        feats = model.encoder_forward(Tensor(np.zeros((1, 3, 64, 64))))
        shapes = [f.shape for f in feats]
        assert shapes == [
            (1, 8, 64, 64),
            (1, 16, 32, 32),
            (1, 32, 16, 16),
            (1, 64, 8, 8),
            (1, 64, 4, 4),
        ]

    def test_heads_return_input_resolution(self):
        model = make_model()
        feats = model.encoder_forward(Tensor(np.zeros((2, 3, 32, 32))))
        assert model.seg_head_forward(feats).shape == (2, 4, 32, 32)
        assert model.edge_head_forward(feats).shape == (2, 4, 32, 32)

    def test_forward_full_single_image(self):
        rng = np.random.default_rng(0)
        model = make_model()
        s, e, c = model.forward_full(Tensor(rng.normal(size=(3, 32, 32))))
        assert s.shape == e.shape == c.shape == (4, 32, 32)
        assert np.allclose(s.data.sum(axis=0), 1.0, atol=1e-12)
        assert e.data.min() >= 0.0 and e.data.max() <= 1.0
        assert c.data.min() >= 0.0

    def test_forward_full_batched(self):
        model = make_model()
        s, e, c = model.forward_full(rand_image(np.random.default_rng(1), n=3))
        assert s.shape == (3, 4, 32, 32)
        assert e.shape == (3, 4, 32, 32)

    def test_binary_edge_mode_has_one_channel(self):
        model = make_model(edge_mode="binary")
        s, e, c = model.forward_full(rand_image(np.random.default_rng(2)))
        assert e.shape == (1, 1, 32, 32)
        assert c.shape == (1, 1, 32, 32)

    def test_edge_mode_none_returns_no_edges(self):
        model = make_model(edge_mode="none")
        s, e, c = model.forward_full(rand_image(np.random.default_rng(3)))
        assert e is None
        assert s.shape == (1, 4, 32, 32)

    @pytest.mark.parametrize("shape", [(1, 3, 60, 64), (1, 1, 64, 64), (3, 64, 64, 1)])
    def test_encoder_input_validation(self, shape):
        with pytest.raises(ShapeError):
            make_model().encoder_forward(Tensor(np.zeros(shape)))

    def test_forward_before_init_raises(self):
        model = SegEdgeModel(ModelConfig(num_classes=4))
        with pytest.raises(ParameterError):
            model.encoder_forward(Tensor(np.zeros((1, 3, 32, 32))))


class TestInitialization:
    def test_parameter_count_fits_budget(self):
        # frozen regression value for the default 4-class adaptive model
        assert make_model().params.count() == 85876
        assert make_model().params.count() < 200_000

    def test_same_seed_same_parameters(self):
        a, b = make_model(seed=5), make_model(seed=5)
        for (na, pa), (nb, pb) in zip(a.params.items(), b.params.items()):
            assert na == nb and np.array_equal(pa.data, pb.data)

    def test_different_seeds_differ(self):
        a, b = make_model(seed=5), make_model(seed=6)
        assert not np.array_equal(a.params["encoder.stage1.weight"].data, b.params["encoder.stage1.weight"].data)

    def test_biases_start_at_zero_and_fusion_at_quarter(self):
        model = make_model(fusion="fixed")
        assert np.array_equal(model.params["seg.classifier.bias"].data, np.zeros(4))
        assert np.array_equal(model.params["edge.fuse.side1"].data, np.full(4, 0.25))
        assert np.array_equal(model.params["edge.fuse.bias"].data, np.zeros(4))

    def test_zero_input_gives_zero_features(self):
        feats = make_model().encoder_forward(Tensor(np.zeros((1, 3, 32, 32))))
        for f in feats:
            assert np.array_equal(f.data, np.zeros(f.shape))

    def test_load_arrays_roundtrip_and_validation(self):
        model = make_model(seed=1)
        arrays = {name: p.data.copy() for name, p in model.params.items()}
        other = SegEdgeModel(ModelConfig(num_classes=4))
        other.init_parameters(2)
        other.load_arrays(arrays)
        assert np.array_equal(other.params["seg.classifier.weight"].data, arrays["seg.classifier.weight"])
        with pytest.raises(ParameterError):
            other.load_arrays({"nope": np.zeros(1)})
        bad = dict(arrays)
        bad["seg.classifier.bias"] = np.zeros(7)
        with pytest.raises(ShapeError):
            other.load_arrays(bad)


class TestForwardSemantics:
    def test_forward_is_bit_deterministic(self):
        rng = np.random.default_rng(4)
        model = make_model()
        img = rand_image(rng)
        s1, e1, _ = model.forward_full(img)
        s2, e2, _ = model.forward_full(img)
        assert np.array_equal(s1.data, s2.data)
        assert np.array_equal(e1.data, e2.data)

    def test_classifier_bias_shifts_logits_uniformly(self):
        rng = np.random.default_rng(5)
        model = make_model()
        img = rand_image(rng)
        feats = model.encoder_forward(img)
        before = model.seg_head_forward(feats).data.copy()
        model.params["seg.classifier.bias"].data[2] += 0.75
        after = model.seg_head_forward(model.encoder_forward(img)).data
        delta = after - before
        assert np.allclose(delta[:, 2], 0.75, atol=1e-9)
        for k in (0, 1, 3):
            assert np.allclose(delta[:, k], 0.0, atol=1e-12)

    def test_fixed_fusion_selector_isolates_one_side(self):
        rng = np.random.default_rng(6)
        model = make_model(fusion="fixed")
        for side in ("side1", "side2", "side4", "side16"):
            model.params[f"edge.fuse.{side}"].data[:] = 0.0
        model.params["edge.fuse.side2"].data[:] = 1.0
        img = rand_image(rng)
        feats = model.encoder_forward(img)
        fused = model.edge_head_forward(feats)
        w, b = model.params["edge.side2.weight"], model.params["edge.side2.bias"]
        expected = T.bilinear_resize(T.conv2d(feats[1], w, b), 32, 32)
        assert np.array_equal(fused.data, expected.data)

    def test_fixed_fusion_init_is_mean_of_sides(self):
        rng = np.random.default_rng(11)
        model = make_model(fusion="fixed")
        img = rand_image(rng)
        feats = model.encoder_forward(img)
        fused = model.edge_head_forward(feats)
        sides = []
        for f, s in zip((feats[0], feats[1], feats[2], feats[4]), (1, 2, 4, 16)):
            w, b = model.params[f"edge.side{s}.weight"], model.params[f"edge.side{s}.bias"]
            sides.append(T.bilinear_resize(T.conv2d(f, w, b), 32, 32).data)
        assert np.allclose(fused.data, np.mean(sides, axis=0), atol=1e-12)

    def test_adaptive_with_constant_weights_matches_fixed(self):
        rng = np.random.default_rng(7)
        adaptive = make_model(seed=3, fusion="adaptive")
        fixed = SegEdgeModel(ModelConfig(num_classes=4, fusion="fixed"))
        fixed.init_parameters(3)
        shared = {n: p.data.copy() for n, p in adaptive.params.items() if not n.startswith("edge.fuse")}
        for name, arr in shared.items():
            fixed.params[name].data = arr.copy()

        weights = rng.normal(size=16)  # one scalar per (side, class)
        adaptive.params["edge.fuse.predictor.weight"].data[:] = 0.0
        adaptive.params["edge.fuse.predictor.bias"].data = weights.copy()
        for i, side in enumerate(("side1", "side2", "side4", "side16")):
            fixed.params[f"edge.fuse.{side}"].data = weights[i * 4 : (i + 1) * 4].copy()
        fixed.params["edge.fuse.bias"].data[:] = 0.0

        img = rand_image(rng)
        a = adaptive.edge_head_forward(adaptive.encoder_forward(img))
        f = fixed.edge_head_forward(fixed.encoder_forward(img))
        assert np.allclose(a.data, f.data, atol=1e-12)

    def test_edge_head_fusion_override_validated(self):
        model = make_model(fusion="adaptive")
        feats = model.encoder_forward(Tensor(np.zeros((1, 3, 32, 32))))
        with pytest.raises(ParameterError):
            model.edge_head_forward(feats, fusion="nope")
        assert model.edge_head_forward(feats, fusion="adaptive") is not None
        # the other mode's parameters were never created
        with pytest.raises(ParameterError):
            model.edge_head_forward(feats, fusion="fixed")
        assert "fixed" in FUSION_MODES


class TestGradientRouting:
    def seg_only_grads(self, model, img, labels):
        model.params.zero_grads()
        with Tape() as tape:
            s, e, c = model.forward_full(img)
            logits = model.seg_head_forward(model.encoder_forward(T.reshape(img, (1,) + img.shape)))
            loss, _ = losses.ohem_cross_entropy(T.reshape(logits, logits.shape[1:]), labels, thresh=1.0)
        tape.backward(loss)
        return {n: (None if p.grad is None else p.grad.copy()) for n, p in model.params.items()}

    def test_idle_edge_branch_gets_no_gradient(self):
        rng = np.random.default_rng(8)
        model = make_model()
        img = Tensor(rng.normal(size=(3, 32, 32)))
        labels = rng.integers(0, 4, size=(32, 32)).astype(np.int64)
        grads = self.seg_only_grads(model, img, labels)
        for name, g in grads.items():
            if name.startswith("edge."):
                assert g is None, name
            else:
                assert g is not None, name
