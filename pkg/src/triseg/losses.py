"""Training objectives: hard-example-mined CE, edge losses, and their sum.

The consistency term is kept in decomposed form — one boundary-aware l1
against the derived detector output C and one against the edge head output E
— so the two task branches receive independent gradients. Their sum equals
the joint formulation by distributivity, which the tests pin down bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .edges import EdgeTarget
from .errors import DataError, ParameterError, ShapeError
from .tensor import LOG_EPS, Tensor, record_op

__all__ = [
    "LossWeights",
    "LossBreakdown",
    "ohem_cross_entropy",
    "multilabel_edge_loss",
    "boundary_aware_l1",
    "decomposed_consistency_loss",
    "total_loss",
]


@dataclass
class LossWeights:
    """Scalar weights of the three loss terms and the consistency gate.

    The consistency term only participates once training progress reaches
    `consistency_start_fraction` (default: the last half of the run).
    """

    c_s: float = 1.0
    c_e: float = 10.0
    c_c: float = 20.0
    consistency_start_fraction: float = 0.5

    def __post_init__(self):
        for name in ("c_s", "c_e", "c_c"):
            if getattr(self, name) < 0:
                raise ParameterError(f"loss weight {name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.consistency_start_fraction <= 1.0:
            raise ParameterError(
                f"consistency_start_fraction must lie in [0, 1], got {self.consistency_start_fraction}"
            )


@dataclass
class LossBreakdown:
    """Per-term values of one training step, as recorded in the loss log."""

    l_s: float = 0.0
    l_e: float = 0.0
    l_c1: float = 0.0
    l_c2: float = 0.0
    l_cd: float = 0.0
    total: float = 0.0
    n_hard: int = 0


def ohem_cross_entropy(
    logits: Tensor,
    labels: np.ndarray,
    thresh: float = 0.7,
    min_kept: int = 1,
    ignore_value: int = 255,
) -> tuple[Tensor, int]:
    """Mean cross-entropy over online-mined hard pixels.

    A pixel is hard when its true-class softmax probability falls below
    `thresh`; if fewer than `min_kept` qualify, the `min_kept` lowest-
    probability valid pixels are taken instead (ties resolved in row-major
    order). The selection is treated as a constant in the backward pass, so
    gradients flow only through the selected pixels. Returns the scalar loss
    and the number of selected pixels.
    """
    if not 0.0 < thresh <= 1.0:
        raise ParameterError(f"thresh must lie in (0, 1], got {thresh}")
    if min_kept < 1:
        raise ParameterError(f"min_kept must be >= 1, got {min_kept}")
    if logits.ndim != 3:
        raise ShapeError(f"logits must be (K, H, W), got shape {logits.shape}")
    labels = np.asarray(labels)
    k, h, w = logits.shape
    if labels.shape != (h, w):
        raise ShapeError(f"labels shape {labels.shape} does not match logits spatial size {(h, w)}")

    valid = labels != ignore_value
    bad = valid & ((labels < 0) | (labels >= k))
    if np.any(bad):
        y, x = np.argwhere(bad)[0]
        raise DataError(f"label {int(labels[y, x])} at pixel ({int(y)}, {int(x)}) is outside [0, {k})")
    flat_valid = np.flatnonzero(valid.ravel())
    n_valid = flat_valid.size
    if n_valid == 0:
        raise DataError("no valid pixels for hard-example mining")
    kept = min(min_kept, n_valid)

    m = logits.data.max(axis=0, keepdims=True)
    e = np.exp(logits.data - m)
    probs = e / e.sum(axis=0, keepdims=True)
    lab_flat = labels.ravel()[flat_valid]
    p_true = probs.reshape(k, -1)[lab_flat, flat_valid]

    hard = p_true < thresh
    if int(hard.sum()) < kept:
        order = np.argsort(p_true, kind="stable")  # stable => row-major ties
        hard = np.zeros(n_valid, dtype=bool)
        hard[order[:kept]] = True
    n_hard = int(hard.sum())

    p_sel = p_true[hard]
    loss_val = float(np.mean(-np.log(np.clip(p_sel, LOG_EPS, 1.0 - LOG_EPS))))

    out = Tensor(np.asarray(loss_val))
    out.requires_grad = logits.requires_grad
    if out.requires_grad:
        inside = (p_sel > LOG_EPS) & (p_sel < 1.0 - LOG_EPS)  # clamp kills the rest
        pos = flat_valid[hard][inside]
        grad = np.zeros((k, h * w))
        grad[:, pos] = probs.reshape(k, -1)[:, pos]
        grad[labels.ravel()[pos], pos] -= 1.0
        grad = grad.reshape(k, h, w) / n_hard

        def backward(g):
            logits.accumulate_grad(float(g) * grad)

        record_op(out, backward)
    return out, n_hard


def _check_against_target(x: Tensor, target: EdgeTarget, op: str) -> None:
    if x.shape != target.g.shape:
        raise ShapeError(f"{op}: input shape {x.shape} does not match target shape {target.g.shape}")


def _normalizer(target: EdgeTarget, normalize: bool) -> float:
    if not normalize:
        return 1.0
    n_valid = target.n_valid
    if n_valid == 0:
        raise DataError("cannot normalize a loss over zero valid pixels")
    return 1.0 / (target.num_classes * n_valid)


def multilabel_edge_loss(e: Tensor, target: EdgeTarget, normalize: bool = True) -> Tensor:
    """Per-class binary cross-entropy between edge probabilities and targets.

    Summed over classes and valid pixels with eps-clamped logs; divided by
    (K * #valid) unless `normalize` is off.
    """
    _check_against_target(e, target, "multilabel_edge_loss")
    g = Tensor(target.g)
    g_neg = Tensor(1.0 - target.g)
    mask = Tensor(np.broadcast_to(target.valid_mask, target.g.shape).astype(np.float64))
    ll = g * T.log(e) + g_neg * T.log((-e) + 1.0)
    total = (ll * mask).sum()
    return T.scalar_mul(total, -_normalizer(target, normalize))


def boundary_aware_l1(x: Tensor, target: EdgeTarget, normalize: bool = True) -> Tensor:
    """l1 distance to the edge targets, reweighted against edge sparsity.

    Edge pixels carry weight beta (the non-edge fraction, large), non-edge
    pixels 1 - beta, ignored pixels 0; the weight map encodes all three.
    """
    _check_against_target(x, target, "boundary_aware_l1")
    weighted = abs(x - Tensor(target.g)) * Tensor(target.weight_map)
    return T.scalar_mul(weighted.sum(), _normalizer(target, normalize))


def decomposed_consistency_loss(
    c: Tensor, e: Tensor, target: EdgeTarget, normalize: bool = True
) -> tuple[Tensor, Tensor, Tensor]:
    """Cross-task consistency as two independent boundary-aware l1 terms.

    `c` is the edge map derived from the segmentation output, `e` the edge
    head's own prediction; each is pulled toward the shared target, and the
    combined value is their sum. Returns (l_c1, l_c2, l_cd).
    """
    l_c1 = boundary_aware_l1(c, target, normalize)
    l_c2 = boundary_aware_l1(e, target, normalize)
    return l_c1, l_c2, T.add(l_c1, l_c2)


def total_loss(
    l_s: Tensor | None,
    l_e: Tensor | None,
    l_cd: Tensor | None,
    weights: LossWeights,
    progress: float,
    *,
    l_c1: float = 0.0,
    l_c2: float = 0.0,
    n_hard: int = 0,
) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of the three objectives with the consistency gate applied.

    `progress` is current_iteration / total_iterations; the consistency term
    joins once it reaches the configured start fraction. Zero-weight or absent
    terms are skipped entirely, so they contribute neither value nor gradient.
    The keyword extras only annotate the returned breakdown.
    """
    if not 0.0 <= progress <= 1.0:
        raise ParameterError(f"progress must lie in [0, 1], got {progress}")
    active = progress >= weights.consistency_start_fraction

    total: Tensor | None = None
    for term, weight in (
        (l_s, weights.c_s),
        (l_e, weights.c_e),
        (l_cd if active else None, weights.c_c),
    ):
        if term is None or weight == 0.0:
            continue
        piece = T.scalar_mul(term, weight)
        total = piece if total is None else T.add(total, piece)
    if total is None:
        total = Tensor(np.asarray(0.0))

    breakdown = LossBreakdown(
        l_s=l_s.item() if l_s is not None else 0.0,
        l_e=l_e.item() if l_e is not None else 0.0,
        l_c1=l_c1 if active else 0.0,
        l_c2=l_c2 if active else 0.0,
        l_cd=l_cd.item() if (l_cd is not None and active) else 0.0,
        total=total.item(),
        n_hard=n_hard,
    )
    return total, breakdown
