"""Two-branch segmentation/edge network on a shared convolutional trunk.

A five-stage plain conv encoder (strides 1, 2, 4, 8, 16) feeds a pyramid-
pooled, top-down-merged segmentation head and a side-output edge head. Edge
side outputs come from the shallowest three stages plus the deepest one and
are merged either with learned per-(class, side) scalars ("fixed") or with
per-pixel weights predicted from the deepest feature ("adaptive"). The third
output C re-derives edges from the segmentation probabilities with the same
spatial-gradient detector used for the targets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .edges import spatial_gradient
from .errors import ParameterError, ShapeError
from .tensor import Tensor

__all__ = ["ModelConfig", "ParameterSet", "SegEdgeModel", "EDGE_MODES", "FUSION_MODES"]

EDGE_MODES = ("semantic", "binary", "none")
FUSION_MODES = ("fixed", "adaptive")


@dataclass
class ModelConfig:
    num_classes: int
    base_channels: int = 8
    edge_mode: str = "semantic"
    fusion: str = "adaptive"
    input_size: tuple[int, int] = (64, 64)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ParameterError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.base_channels < 1:
            raise ParameterError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.edge_mode not in EDGE_MODES:
            raise ParameterError(f"edge_mode must be one of {EDGE_MODES}, got {self.edge_mode!r}")
        if self.fusion not in FUSION_MODES:
            raise ParameterError(f"fusion must be one of {FUSION_MODES}, got {self.fusion!r}")
        self.input_size = (int(self.input_size[0]), int(self.input_size[1]))
        for n in self.input_size:
            if n < 16 or n % 16:
                raise ParameterError(f"input size must be a positive multiple of 16, got {self.input_size}")

    @property
    def edge_channels(self) -> int:
        """Channels of the edge branch output: K, 1, or 0 when disabled."""
        if self.edge_mode == "semantic":
            return self.num_classes
        return 1 if self.edge_mode == "binary" else 0


class ParameterSet:
    """Named trainable tensors with a fixed lexicographic iteration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, t: Tensor) -> None:
        if name in self._params:
            raise ParameterError(f"duplicate parameter name {name!r}")
        t.requires_grad = True
        self._params[name] = t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise ParameterError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def zero_grads(self) -> None:
        for _, p in self.items():
            p.zero_grad()

    def count(self) -> int:
        return sum(p.data.size for _, p in self.items())


# (name, shape builder, init kind) rows; kept in creation order so the
# seeded initializer draws in a stable sequence.
_CONV, _ZEROS, _QUARTER = "conv", "zeros", "quarter"


@dataclass
class SegEdgeModel:
    config: ModelConfig
    params: ParameterSet = field(default_factory=ParameterSet)

    def __post_init__(self):
        self._template = self._build_template()

    # ---- parameter layout ------------------------------------------------

    def _build_template(self) -> list[tuple[str, tuple[int, ...], str]]:
        cfg = self.config
        c, k = cfg.base_channels, cfg.num_classes
        d = 4 * c  # decoder width
        rows: list[tuple[str, tuple[int, ...], str]] = []

        def conv(name, co, ci, ks):
            rows.append((f"{name}.weight", (co, ci, ks, ks), _CONV))
            rows.append((f"{name}.bias", (co,), _ZEROS))

        conv("encoder.stage1", c, 3, 3)
        conv("encoder.stage2", 2 * c, c, 3)
        conv("encoder.stage3", 4 * c, 2 * c, 3)
        conv("encoder.stage4", 8 * c, 4 * c, 3)
        conv("encoder.stage5", 8 * c, 8 * c, 3)

        conv("seg.ppm.scale1", 8 * c, 8 * c, 1)
        conv("seg.ppm.scale2", 8 * c, 8 * c, 1)
        conv("seg.lateral16", d, 8 * c, 1)
        conv("seg.lateral8", d, 8 * c, 1)
        conv("seg.lateral4", d, 4 * c, 1)
        conv("seg.classifier", k, d, 3)

        ke = cfg.edge_channels
        if ke:
            conv("edge.side1", ke, c, 1)
            conv("edge.side2", ke, 2 * c, 1)
            conv("edge.side4", ke, 4 * c, 1)
            conv("edge.side16", ke, 8 * c, 1)
            if cfg.fusion == "fixed":
                for side in ("side1", "side2", "side4", "side16"):
                    rows.append((f"edge.fuse.{side}", (ke,), _QUARTER))
                rows.append(("edge.fuse.bias", (ke,), _ZEROS))
            else:
                conv("edge.fuse.predictor", 4 * ke, 8 * c, 3)
        return rows

    def init_parameters(self, seed: int) -> ParameterSet:
        """Fresh parameters: fan-in-scaled uniform conv weights, zero biases,
        quarter-weight fixed fusion. Deterministic per seed."""
        rng = np.random.default_rng(seed)
        self.params = ParameterSet()
        for name, shape, kind in self._template:
            if kind == _CONV:
                fan_in = int(np.prod(shape[1:]))
                bound = np.sqrt(6.0 / fan_in)
                data = rng.uniform(-bound, bound, size=shape)
            elif kind == _QUARTER:
                data = np.full(shape, 0.25)
            else:
                data = np.zeros(shape)
            self.params.add(name, Tensor(data))
        return self.params

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values from named arrays (shapes must match)."""
        if not len(self.params):
            self.init_parameters(0)
        expected = set(self.params.names())
        got = set(arrays)
        if expected != got:
            missing, extra = sorted(expected - got), sorted(got - expected)
            raise ParameterError(f"parameter names mismatch: missing {missing}, unexpected {extra}")
        for name, arr in arrays.items():
            p = self.params[name]
            if p.data.shape != arr.shape:
                raise ShapeError(f"parameter {name} has shape {p.data.shape}, checkpoint has {arr.shape}")
            p.data = np.asarray(arr, dtype=np.float64).copy()

    # ---- forward pieces --------------------------------------------------

    def _conv(self, x: Tensor, name: str, stride: int = 1, padding: int = 0) -> Tensor:
        return T.conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"], stride, padding)

    def encoder_forward(self, image: Tensor) -> list[Tensor]:
        """Five feature maps at strides 1, 2, 4, 8, 16."""
        if not len(self.params):
            raise ParameterError("call init_parameters() or load a checkpoint before forward")
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"encoder input must be (N, 3, H, W), got shape {image.shape}")
        h, w = image.shape[2:]
        if h % 16 or w % 16:
            raise ShapeError(f"input size must be divisible by 16, got {h}x{w}")
        f1 = T.relu(self._conv(image, "encoder.stage1", 1, 1))
        f2 = T.relu(self._conv(f1, "encoder.stage2", 2, 1))
        f3 = T.relu(self._conv(f2, "encoder.stage3", 2, 1))
        f4 = T.relu(self._conv(f3, "encoder.stage4", 2, 1))
        f5 = T.relu(self._conv(f4, "encoder.stage5", 2, 1))
        return [f1, f2, f3, f4, f5]

    def seg_head_forward(self, features: list[Tensor]) -> Tensor:
        """Segmentation logits at input resolution."""
        f3, f4, f5 = features[2], features[3], features[4]
        h16, w16 = f5.shape[2:]
        pooled = []
        for size, name in ((1, "seg.ppm.scale1"), (2, "seg.ppm.scale2")):
            p = T.relu(self._conv(T.adaptive_avg_pool(f5, size, size), name))
            pooled.append(T.bilinear_resize(p, h16, w16))
        ppm = T.add(T.add(f5, pooled[0]), pooled[1])

        t5 = self._conv(ppm, "seg.lateral16")
        t4 = T.add(self._conv(f4, "seg.lateral8"), T.bilinear_resize(t5, *f4.shape[2:]))
        t3 = T.add(self._conv(f3, "seg.lateral4"), T.bilinear_resize(t4, *f3.shape[2:]))
        logits = self._conv(t3, "seg.classifier", 1, 1)
        return T.bilinear_resize(logits, 16 * h16, 16 * w16)

    def edge_head_forward(self, features: list[Tensor], fusion: str | None = None) -> Tensor | None:
        """Fused edge logits at input resolution; None when the branch is off."""
        if self.config.edge_channels == 0:
            return None
        fusion = fusion or self.config.fusion
        if fusion not in FUSION_MODES:
            raise ParameterError(f"fusion must be one of {FUSION_MODES}, got {fusion!r}")
        f5 = features[4]
        h, w = 16 * f5.shape[2], 16 * f5.shape[3]
        taps = (features[0], features[1], features[2], f5)
        sides = [
            T.bilinear_resize(self._conv(f, f"edge.side{s}"), h, w)
            for f, s in zip(taps, (1, 2, 4, 16))
        ]
        ke = self.config.edge_channels
        if fusion == "fixed":
            fused = None
            for side, name in zip(sides, ("side1", "side2", "side4", "side16")):
                piece = T.mul(side, self.params[f"edge.fuse.{name}"])
                fused = piece if fused is None else T.add(fused, piece)
            return T.add(fused, self.params["edge.fuse.bias"])
        wmap = T.bilinear_resize(self._conv(f5, "edge.fuse.predictor", 1, 1), h, w)
        fused = None
        for i, side in enumerate(sides):
            piece = T.mul(side, T.slice_channels(wmap, i * ke, (i + 1) * ke))
            fused = piece if fused is None else T.add(fused, piece)
        return fused

    def forward_full(self, image: Tensor, window: int = 3) -> tuple[Tensor, Tensor | None, Tensor]:
        """(S, E, C): class probabilities, edge probabilities, derived edges.

        Accepts a single (3, H, W) image or an (N, 3, H, W) batch and returns
        outputs with matching leading dimensions. C applies the spatial-
        gradient detector to S; in binary edge mode it is collapsed to one
        channel by a per-pixel max over classes.
        """
        single = image.ndim == 3
        x = T.reshape(image, (1,) + image.shape) if single else image
        feats = self.encoder_forward(x)
        s = T.softmax_channel(self.seg_head_forward(feats))
        edge_logits = self.edge_head_forward(feats)
        e = T.sigmoid(edge_logits) if edge_logits is not None else None
        c = spatial_gradient(s, window)
        if self.config.edge_mode == "binary":
            c = T.max_channels(c)
        if single:
            s = T.reshape(s, s.shape[1:])
            c = T.reshape(c, c.shape[1:])
            e = T.reshape(e, e.shape[1:]) if e is not None else None
        return s, e, c
