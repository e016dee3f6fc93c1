"""Evaluation bookkeeping: confusion matrix, IoU, and cross-task agreement.

The consistency gap is the diagnostic counterpart of the consistency loss:
mean absolute difference between the detector-derived edge map C and the edge
head's prediction E over valid pixels. Training with the consistency term
should drive it down; the evaluation report tracks it next to mIoU.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .edges import EdgeTarget
from .errors import DataError, ShapeError
from .tensor import Tensor, resize_array_bilinear

__all__ = [
    "ConfusionMatrix",
    "accumulate",
    "iou_report",
    "predict_labels",
    "consistency_gap",
    "multiscale_infer",
]


@dataclass
class ConfusionMatrix:
    """K x K integer counts; rows are ground truth, columns predictions."""

    counts: np.ndarray

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        self.counts += other.counts
        return self


def predict_labels(s: np.ndarray | Tensor) -> np.ndarray:
    """Argmax class per pixel; ties go to the lowest class index."""
    arr = s.data if isinstance(s, Tensor) else np.asarray(s)
    return np.argmax(arr, axis=-3)


def accumulate(
    cm: ConfusionMatrix, prediction: np.ndarray, truth: np.ndarray, ignore_value: int = 255
) -> ConfusionMatrix:
    """Count (truth, prediction) pairs over valid pixels into `cm`."""
    prediction = np.asarray(prediction)
    truth = np.asarray(truth)
    if prediction.shape != truth.shape:
        raise ShapeError(f"prediction shape {prediction.shape} does not match truth {truth.shape}")
    k = cm.num_classes
    valid = truth != ignore_value
    for name, arr in (("truth", truth), ("prediction", prediction)):
        bad = valid & ((arr < 0) | (arr >= k))
        if np.any(bad):
            y, x = np.argwhere(bad)[0]
            raise DataError(
                f"{name} label {int(arr[y, x])} at pixel ({int(y)}, {int(x)}) is outside [0, {k})"
            )
    idx = truth[valid].astype(np.int64) * k + prediction[valid].astype(np.int64)
    cm.counts += np.bincount(idx, minlength=k * k).reshape(k, k)
    return cm


def iou_report(cm: ConfusionMatrix) -> dict:
    """Per-class IoU and their mean, skipping classes absent from both sides."""
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    denom = counts.sum(axis=1) + counts.sum(axis=0) - tp
    present = denom > 0
    if not np.any(present):
        raise DataError("confusion matrix is empty: no class present in truth or prediction")
    iou = np.where(present, tp / np.where(present, denom, 1.0), np.nan)
    total = counts.sum()
    return {
        "per_class_iou": [float(v) if p else None for v, p in zip(iou, present)],
        "miou": float(iou[present].mean()),
        "pixel_accuracy": float(tp.sum() / total) if total else 0.0,
        "present": [bool(p) for p in present],
    }


def consistency_gap(c: np.ndarray | Tensor, e: np.ndarray | Tensor, target: EdgeTarget) -> float:
    """Mean |C - E| over valid pixels and channels; zero iff they agree there."""
    ca = c.data if isinstance(c, Tensor) else np.asarray(c, dtype=np.float64)
    ea = e.data if isinstance(e, Tensor) else np.asarray(e, dtype=np.float64)
    if ca.shape != ea.shape:
        raise ShapeError(f"C shape {ca.shape} does not match E shape {ea.shape}")
    if ca.shape[-2:] != target.valid_mask.shape:
        raise ShapeError(f"map spatial size {ca.shape[-2:]} does not match mask {target.valid_mask.shape}")
    n_valid = target.n_valid
    if n_valid == 0:
        raise DataError("consistency gap undefined with zero valid pixels")
    k = ca.shape[-3]
    return float(np.sum(np.abs(ca - ea) * target.valid_mask) / (k * n_valid))


def multiscale_infer(model, image: np.ndarray, scales=(0.75, 1.0, 1.25), window: int = 3) -> np.ndarray:
    """Average class probabilities over rescaled forward passes.

    Each scaled size is rounded to a multiple of 16 (the encoder contract);
    probabilities are resized back to the base resolution, averaged, and
    renormalized per pixel.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"image must be (3, H, W), got shape {image.shape}")
    if not scales:
        raise DataError("at least one inference scale is required")
    h, w = image.shape[1:]
    acc = None
    for s in scales:
        th = max(16, int(round(h * s / 16.0)) * 16)
        tw = max(16, int(round(w * s / 16.0)) * 16)
        scaled = resize_array_bilinear(image, th, tw)
        s_map, _, _ = model.forward_full(Tensor(scaled), window=window)
        back = resize_array_bilinear(s_map.data, h, w)
        acc = back if acc is None else acc + back
    acc /= len(scales)
    return acc / acc.sum(axis=0, keepdims=True)
