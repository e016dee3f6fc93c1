"""Mapping segmentation maps into the edge domain.

One definition drives everything here: the per-class spatial gradient
``|S_k - pool_w(S_k)|`` with a border-clipped window mean. Applied to a
predicted probability map it is the differentiable edge detector; applied to
one-hot ground truth and thresholded at zero it produces the binary edge
targets. Sharing the definition means a perfect segmentation reproduces the
target's support exactly, so the consistency penalty has a true zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DataError, ParameterError, ShapeError
from .tensor import Tensor

__all__ = [
    "EdgeTarget",
    "spatial_gradient",
    "spatial_gradient_array",
    "derive_edge_targets",
    "binary_edge_union",
]


@dataclass
class EdgeTarget:
    """Per-class binary edge maps with class-balanced boundary weights.

    g: (K, H, W) float64 in {0, 1} — 1 on edge pixels.
    beta: (K,) fraction of valid pixels that are non-edge for each class; a
        class with no edge pixels (or no valid pixels at all) gets beta = 1,
        which zeroes its non-edge weight 1 - beta and removes it from play.
    weight_map: (K, H, W) — beta on edges, 1 - beta off edges, 0 where invalid.
    valid_mask: (H, W) bool — False at ignore-label pixels.
    """

    g: np.ndarray
    beta: np.ndarray
    weight_map: np.ndarray
    valid_mask: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.g.shape[0]

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())


def _check_window(w: int) -> int:
    if w < 1 or w % 2 == 0:
        raise ParameterError(f"edge-detector window must be odd and >= 1, got {w}")
    return w // 2


def spatial_gradient(s: Tensor, w: int = 3) -> Tensor:
    """Differentiable per-class edge response |S_k - pool_w(S_k)|.

    The pooled mean uses only in-bounds neighbors, so constant regions (and
    constant borders) give exactly zero response. For S in [0,1] the output is
    also in [0,1].
    """
    _check_window(w)
    if s.ndim < 3:
        raise ShapeError(f"spatial_gradient needs a (..., K, H, W) map, got shape {s.shape}")
    return T.abs_val(T.sub(s, T.avg_pool_window(s, w)))


def spatial_gradient_array(s: np.ndarray, w: int = 3) -> np.ndarray:
    """Plain-ndarray twin of :func:`spatial_gradient`, bit-identical values."""
    r = _check_window(w)
    s = np.asarray(s, dtype=np.float64)
    if r == 0:
        return np.zeros_like(s)
    h, wd = s.shape[-2:]
    pooled = s + T._neighbor_deviation_sum(s, r) / T._window_counts(h, wd, r)
    return np.abs(s - pooled)


def derive_edge_targets(
    labels: np.ndarray, num_classes: int, w: int = 3, ignore_value: int = 255
) -> EdgeTarget:
    """Edge targets and boundary weights from a ground-truth label map.

    Labels are one-hot encoded (ignored pixels all-zero), pushed through the
    same spatial gradient as the detector, and binarized at gradient > 0.
    beta counts non-edge valid pixels per class; weights follow the
    edge/non-edge split with zeros at ignored pixels.
    """
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ShapeError(f"label map must be 2-D, got shape {labels.shape}")
    if num_classes < 1:
        raise ParameterError(f"num_classes must be >= 1, got {num_classes}")
    valid = labels != ignore_value
    bad = valid & ((labels < 0) | (labels >= num_classes))
    if np.any(bad):
        y, x = np.argwhere(bad)[0]
        raise DataError(
            f"label {int(labels[y, x])} at pixel ({int(y)}, {int(x)}) is outside [0, {num_classes})"
        )

    onehot = np.zeros((num_classes,) + labels.shape, dtype=np.float64)
    for k in range(num_classes):
        onehot[k] = (labels == k) & valid

    g = (spatial_gradient_array(onehot, w) > 0.0).astype(np.float64)
    return _finish_target(g, valid)


def _finish_target(g: np.ndarray, valid: np.ndarray) -> EdgeTarget:
    n_valid = int(valid.sum())
    k = g.shape[0]
    if n_valid == 0:
        beta = np.ones(k, dtype=np.float64)
    else:
        n_edge = (g * valid).sum(axis=(-2, -1))
        beta = (n_valid - n_edge) / n_valid
    weight = np.where(g == 1.0, beta[:, None, None], 1.0 - beta[:, None, None])
    weight = weight * valid
    return EdgeTarget(g=g, beta=beta, weight_map=weight, valid_mask=valid.astype(bool))


def binary_edge_union(target: EdgeTarget) -> EdgeTarget:
    """Collapse per-class edges into one any-class channel, reweighting it."""
    g = target.g.max(axis=0, keepdims=True)
    return _finish_target(g, target.valid_mask)
