"""SGD with momentum, the three learning-rate policies, and loss-weight search.

The update folds weight decay into the gradient before the momentum buffer
(v <- m*v + g + wd*p; p <- p - lr*v), which makes the scalar recurrence in the
tests exact. Schedules are pure functions of the iteration index.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

from .errors import ParameterError, ShapeError

if TYPE_CHECKING:  # pragma: no cover
    from .model import ParameterSet

__all__ = ["SgdState", "Schedule", "SCHEDULE_KINDS", "sgd_step", "lr_at", "GridResult", "grid_search", "write_grid_csv"]

SCHEDULE_KINDS = ("poly", "cosine_restarts", "two_cycle_sgdr_poly")


@dataclass
class SgdState:
    """Momentum-SGD hyperparameters plus per-parameter velocity buffers."""

    lr_base: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ParameterError(f"weight_decay must be >= 0, got {self.weight_decay}")


def sgd_step(params: "ParameterSet", state: SgdState, lr: float) -> None:
    """One in-place update over every parameter that has a gradient.

    Parameters with no accumulated gradient (detached branches, zero-weight
    loss terms that were skipped) are left untouched, velocity included.
    """
    for name, p in params.items():
        if p.grad is None:
            continue
        if p.grad.shape != p.data.shape:
            raise ShapeError(f"gradient shape {p.grad.shape} does not match parameter {name} {p.data.shape}")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        v = state.momentum * v + p.grad + state.weight_decay * p.data
        state.velocity[name] = v
        p.data -= lr * v


@dataclass
class Schedule:
    """Learning-rate policy: polynomial decay, cosine with equal restarts, or
    two polynomial cycles with a single full restart at the midpoint."""

    kind: str = "two_cycle_sgdr_poly"
    total_iters: int = 300
    lr_base: float = 0.01
    power: float = 0.9
    cycles: int = 2
    min_lr: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ParameterError(f"schedule kind must be one of {SCHEDULE_KINDS}, got {self.kind!r}")
        if self.total_iters < 1:
            raise ParameterError(f"total_iters must be >= 1, got {self.total_iters}")
        if self.lr_base <= 0.0:
            raise ParameterError(f"lr_base must be > 0, got {self.lr_base}")
        if self.cycles < 1:
            raise ParameterError(f"cycles must be >= 1, got {self.cycles}")
        if not 0.0 <= self.min_lr <= self.lr_base:
            raise ParameterError(f"min_lr must lie in [0, lr_base], got {self.min_lr}")


def lr_at(schedule: Schedule, t: int) -> float:
    """Learning rate at iteration t (0 <= t <= total_iters)."""
    T_total = schedule.total_iters
    if not 0 <= t <= T_total:
        raise ParameterError(f"iteration {t} outside [0, {T_total}]")
    base = schedule.lr_base
    if schedule.kind == "poly":
        return base * (1.0 - t / T_total) ** schedule.power
    if schedule.kind == "cosine_restarts":
        t_cycle = T_total / schedule.cycles
        c = min(int(t // t_cycle), schedule.cycles - 1)
        tc = t - c * t_cycle
        return schedule.min_lr + 0.5 * (base - schedule.min_lr) * (1.0 + math.cos(math.pi * tc / t_cycle))
    # two_cycle_sgdr_poly: two equal poly decays, restarting to lr_base at T/2
    half = T_total / 2.0
    tc = t if t < half else t - half
    return base * (1.0 - tc / half) ** schedule.power


@dataclass
class GridResult:
    c_s: float
    c_e: float
    c_c: float
    seed: int
    miou_val: float
    status: str  # "ok" or "failed"


def grid_search(
    config_template,
    c_s_values=(1.0,),
    c_e_values=(5.0, 10.0, 20.0),
    c_c_values=(5.0, 10.0, 20.0),
    budget_iters: int | None = None,
) -> list[GridResult]:
    """Train one fresh seeded model per weight combination and rank by val mIoU.

    A failing cell is recorded with status "failed" and the search continues.
    Results are sorted by mIoU descending (failures last), then by weights for
    a stable order.
    """
    from . import train as _train  # deferred: train imports this module

    if not (c_s_values and c_e_values and c_c_values):
        raise ParameterError("grid axes must be non-empty")
    results: list[GridResult] = []
    for c_s in c_s_values:
        for c_e in c_e_values:
            for c_c in c_c_values:
                cfg = config_template.with_weights(c_s=c_s, c_e=c_e, c_c=c_c)
                if budget_iters is not None:
                    cfg = replace(cfg, total_iters=int(budget_iters))
                try:
                    outcome = _train.train(cfg, write_artifacts=False)
                    results.append(GridResult(c_s, c_e, c_c, cfg.seed, outcome.val_miou, "ok"))
                except Exception:
                    results.append(GridResult(c_s, c_e, c_c, cfg.seed, float("nan"), "failed"))
    results.sort(key=lambda r: (r.status != "ok", -(r.miou_val if r.status == "ok" else 0.0), r.c_s, r.c_e, r.c_c))
    return results


def write_grid_csv(results: list[GridResult], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["c_s", "c_e", "c_c", "seed", "miou_val", "status"])
        for r in results:
            writer.writerow([repr(float(r.c_s)), repr(float(r.c_e)), repr(float(r.c_c)), r.seed, repr(float(r.miou_val)), r.status])
