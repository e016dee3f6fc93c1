"""Central finite-difference verification of every differentiable op and loss.

`grad_check` compares the taped gradient of a scalar function against
`(f(x+h) - f(x-h)) / 2h` element by element. The registry at the bottom
builds one named check per op and per loss; random inputs are sampled away
from the measure-zero kinks (abs/relu at 0, hard-example selection
boundaries, log clamp edges) so the comparison is meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import edges, losses, tensor as T
from .errors import ParameterError
from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    name: str
    max_rel_err: float
    tol: float
    passed: bool
    n_elements: int

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34} max_rel_err={self.max_rel_err:.3e} tol={self.tol:.0e} ({self.n_elements} elems)"


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
    name: str = "f",
) -> GradCheckReport:
    """Compare analytic and central-difference gradients of a scalar function.

    `f` must be deterministic and return a scalar tensor. Relative error per
    element is |a - n| / max(1, |a|, |n|); the report carries the maximum.
    """
    if step <= 0:
        raise ParameterError(f"finite difference step must be > 0, got {step}")
    saved_flags = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.zero_grad()
    try:
        with Tape() as tape:
            out = f(*inputs)
        if out.shape != ():
            raise ParameterError(f"grad_check needs a scalar-valued function, got output shape {out.shape}")
        tape.backward(out)
        analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]

        # numeric passes run outside any tape
        for t in inputs:
            t.requires_grad = False
        max_rel = 0.0
        n_elems = 0
        for t, a in zip(inputs, analytic):
            flat = t.data.reshape(-1)
            aflat = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp = f(*inputs).item()
                flat[i] = orig - step
                fm = f(*inputs).item()
                flat[i] = orig
                numeric = (fp - fm) / (2.0 * step)
                rel = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]), abs(numeric))
                max_rel = max(max_rel, rel)
                n_elems += 1
    finally:
        for t, flag in zip(inputs, saved_flags):
            t.requires_grad = flag
            t.zero_grad()
    return GradCheckReport(name=name, max_rel_err=max_rel, tol=tol, passed=max_rel < tol, n_elements=n_elems)


# ---------------------------------------------------------------------------
# kink-aware sampling helpers
# ---------------------------------------------------------------------------


def away_from_zero(rng: np.random.Generator, shape, margin: float = 1e-2) -> np.ndarray:
    """Uniform in [-1, 1] with |x| >= margin, so abs/relu kinks stay far away."""
    x = rng.uniform(-1.0, 1.0, size=shape)
    small = np.abs(x) < margin
    x[small] = margin * np.where(x[small] >= 0, 1.0, -1.0) * rng.uniform(1.0, 2.0, size=int(small.sum()))
    return x


def probabilities(rng: np.random.Generator, shape, lo: float = 0.05, hi: float = 0.95) -> np.ndarray:
    """Probabilities bounded away from the log clamp at eps and 1 - eps."""
    return rng.uniform(lo, hi, size=shape)


def _random_edge_target(rng: np.random.Generator, k: int, h: int, w: int) -> edges.EdgeTarget:
    labels = rng.integers(0, k, size=(h, w))
    return edges.derive_edge_targets(labels, num_classes=k, w=3)


def _ohem_logits_away_from_thresh(rng: np.random.Generator, k: int, h: int, w: int, thresh: float) -> tuple[np.ndarray, np.ndarray]:
    """Logits whose true-class probabilities keep a margin from the selection threshold."""
    while True:
        logits = rng.normal(0.0, 1.0, size=(k, h, w))
        labels = rng.integers(0, k, size=(h, w))
        m = logits.max(axis=0, keepdims=True)
        e = np.exp(logits - m)
        p = e / e.sum(axis=0, keepdims=True)
        ptrue = np.take_along_axis(p, labels[None], axis=0)[0]
        if np.all(np.abs(ptrue - thresh) > 1e-3) and np.all(ptrue < 0.99):
            return logits, labels


def build_registry(seed: int = 0) -> list[tuple[str, Callable[[], GradCheckReport]]]:
    """Named gradient checks covering every differentiable op and every loss."""
    rng = np.random.default_rng(seed)
    checks: list[tuple[str, Callable[[], GradCheckReport]]] = []

    def case(name, fn, *arrays, tol=1e-4):
        tensors = [Tensor(a) for a in arrays]
        checks.append((name, lambda: grad_check(fn, tensors, tol=tol, name=name)))

    # --- primitive ops ---
    case("conv2d/input+weight+bias",
         lambda x, w, b: T.conv2d(x, w, b, stride=1, padding=1).sum(),
         rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3))
    case("conv2d/stride2",
         lambda x, w, b: T.conv2d(x, w, b, stride=2, padding=1).sum(),
         rng.normal(size=(2, 2, 6, 6)), rng.normal(size=(2, 2, 3, 3)), rng.normal(size=2))
    case("avg_pool_window",
         lambda x: T.avg_pool_window(x, 3).sum(), rng.normal(size=(1, 2, 5, 5)))
    case("adaptive_avg_pool",
         lambda x: T.adaptive_avg_pool(x, 2, 2).sum(), rng.normal(size=(1, 2, 5, 5)))
    case("bilinear_resize/up",
         lambda x: T.bilinear_resize(x, 7, 6).sum(), rng.normal(size=(1, 2, 4, 4)))
    case("bilinear_resize/down",
         lambda x: T.bilinear_resize(x, 3, 3).sum(), rng.normal(size=(1, 2, 5, 5)))
    # fixed readout weights: summing softmax alone is constant (grad == 0)
    w_read = Tensor(rng.normal(size=(3, 4, 4)))
    case("softmax_channel",
         lambda x: (T.softmax_channel(x) * w_read).sum(),
         rng.normal(size=(3, 4, 4)))
    case("sigmoid", lambda x: T.sigmoid(x).sum(), rng.normal(size=(3, 4)))
    case("relu", lambda x: T.relu(x).sum(), away_from_zero(rng, (4, 5)))
    case("abs", lambda x: T.abs_val(x).sum(), away_from_zero(rng, (4, 5)))
    case("add/broadcast",
         lambda a, b: T.add(a, b).sum(), rng.normal(size=(2, 3, 4, 4)), rng.normal(size=3))
    case("sub/broadcast",
         lambda a, b: T.sub(a, b).sum(), rng.normal(size=(2, 3, 4, 4)), rng.normal(size=3))
    case("mul/elementwise",
         lambda a, b: T.mul(a, b).sum(), rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
    case("mul/broadcast",
         lambda a, b: T.mul(a, b).sum(), rng.normal(size=(2, 3, 4, 4)), rng.normal(size=3))
    case("scalar_mul", lambda x: T.scalar_mul(x, -2.5).sum(), rng.normal(size=(3, 3)))
    case("scalar_add", lambda x: T.scalar_add(x, 1.5).sum(), rng.normal(size=(3, 3)))
    case("log/eps", lambda x: T.log(x).sum(), probabilities(rng, (3, 4)))
    case("mean", lambda x: x.mean(), rng.normal(size=(4, 4)))
    case("reshape", lambda x: T.reshape(x, (2, 8)).sum(), rng.normal(size=(4, 4)))
    case("slice_channels",
         lambda x: T.slice_channels(x, 1, 3).sum(), rng.normal(size=(4, 3, 3)))

    # max_channels: resample so the per-pixel argmax has a clear margin
    xm = rng.normal(size=(3, 4, 4))
    top2 = np.sort(xm, axis=0)[-2:]
    while np.any(top2[1] - top2[0] < 1e-3):
        xm = rng.normal(size=(3, 4, 4))
        top2 = np.sort(xm, axis=0)[-2:]
    case("max_channels", lambda x: T.max_channels(x).sum(), xm)

    # --- edge detector ---
    case("spatial_gradient",
         lambda s: edges.spatial_gradient(s, 3).sum(),
         probabilities(rng, (2, 5, 5)))

    # --- losses (random 2-class 4x4 maps) ---
    thresh = 0.7
    logits, labels = _ohem_logits_away_from_thresh(rng, 2, 4, 4, thresh)
    lt = Tensor(logits)
    checks.append((
        "loss/ohem_cross_entropy",
        lambda: grad_check(
            lambda z: losses.ohem_cross_entropy(z, labels, thresh=thresh, min_kept=3)[0],
            [lt], tol=1e-4, name="loss/ohem_cross_entropy"),
    ))

    target = _random_edge_target(rng, 2, 4, 4)
    case("loss/multilabel_edge",
         lambda e: losses.multilabel_edge_loss(e, target), probabilities(rng, (2, 4, 4)))
    xb = probabilities(rng, (2, 4, 4))
    xb[np.abs(xb - target.g) < 1e-2] += 0.02  # keep |x - g| off the abs kink
    case("loss/boundary_aware_l1",
         lambda x: losses.boundary_aware_l1(x, target), xb)
    cc = probabilities(rng, (2, 4, 4))
    ee = probabilities(rng, (2, 4, 4))
    for arr in (cc, ee):
        arr[np.abs(arr - target.g) < 1e-2] += 0.02
    case("loss/consistency_c_and_e",
         lambda c, e: losses.decomposed_consistency_loss(c, e, target)[2], cc, ee)
    case("loss/total_weighted_sum",
         lambda a, b, c: losses.total_loss(a, b, c, losses.LossWeights(), progress=0.9)[0],
         np.asarray(0.7), np.asarray(0.3), np.asarray(0.1))

    return checks


def run_all(seed: int = 0) -> list[GradCheckReport]:
    return [build() for _, build in build_registry(seed)]
