"""Deterministic training loop tying the pieces together.

One seeded PCG64 generator drives batch sampling and augmentation; its state
is checkpointed, so resuming replays the exact byte-level trajectory of an
uninterrupted run. Per-iteration loss terms stream to ``losses.csv`` with
shortest-round-trip float formatting, which makes reruns byte-comparable.

The consistency term is gated: it only enters the objective once training
progress passes the configured fraction, and skipped terms are never
evaluated, so the logged columns are exactly zero before the gate opens.
"""

from __future__ import annotations

import csv
import datetime as _dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, config_hash
from .data import Sample, augment, load_split, normalize_image
from .edges import binary_edge_union, derive_edge_targets, spatial_gradient
from .errors import CheckpointError, DataError
from .losses import (
    decomposed_consistency_loss,
    multilabel_edge_loss,
    ohem_cross_entropy,
    total_loss,
)
from .metrics import ConfusionMatrix, accumulate, consistency_gap, iou_report, multiscale_infer, predict_labels
from .model import SegEdgeModel
from .optim import Schedule, SgdState, lr_at, sgd_step
from .tensor import Tape, Tensor

__all__ = ["TrainOutcome", "train", "evaluate", "build_schedule"]

LOSS_CSV_COLUMNS = ("iter", "lr", "l_s", "l_e", "l_c1", "l_c2", "l_cd", "total")


@dataclass
class TrainOutcome:
    run_dir: Path | None
    iterations: int
    val_miou: float
    val_report: dict | None
    model: SegEdgeModel
    state: SgdState


def build_schedule(config: TrainConfig) -> Schedule:
    sc = config.schedule
    return Schedule(
        kind=sc.kind,
        total_iters=max(1, config.total_iters),
        lr_base=config.lr_base,
        power=sc.power,
        cycles=sc.cycles,
        min_lr=sc.min_lr,
    )


def _mean_terms(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = T.add(acc, t)
    return T.scalar_mul(acc, 1.0 / len(terms))


def _image_target(sample: Sample, config: TrainConfig):
    target = derive_edge_targets(
        sample.labels, config.model.num_classes, config.edge_window, config.ignore_value
    )
    if config.model.edge_mode == "binary":
        target = binary_edge_union(target)
    return target


def train(config: TrainConfig, write_artifacts: bool = True, resume_from=None) -> TrainOutcome:
    """Run (or resume) one training job; returns the trained model and report.

    With `write_artifacts` the run directory receives the resolved config, a
    per-iteration loss CSV, checkpoints, and the evaluation report. Without
    it everything stays in memory (used by grid-search cells).
    """
    train_samples = load_split(config.data_root, "train")
    val_samples = load_split(config.data_root, "val")
    if not train_samples:
        raise DataError(f"training split under {config.data_root} is empty")

    model = SegEdgeModel(config.model)
    params = model.init_parameters(config.seed)
    state = SgdState(lr_base=config.lr_base, momentum=config.momentum, weight_decay=config.weight_decay)
    schedule = build_schedule(config)
    rng = np.random.default_rng(config.seed)

    start_iter = 0
    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        if ckpt.iteration > config.total_iters:
            raise CheckpointError(
                f"checkpoint is at iteration {ckpt.iteration}, beyond total_iters={config.total_iters}"
            )
        model.load_arrays(ckpt.params)
        state.velocity = {k: v.copy() for k, v in ckpt.velocity.items()}
        try:
            rng.bit_generator.state = ckpt.rng_state
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"checkpoint RNG state does not match PCG64: {e}") from None
        start_iter = ckpt.iteration

    run_dir: Path | None = None
    csv_file = writer = None
    if write_artifacts:
        if config.run_dir:
            run_dir = Path(config.run_dir)
        else:
            stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%d-%H%M%S")
            run_dir = Path(config.out_dir) / f"{stamp}-{config_hash(config)}"
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(config.to_json())
        csv_file = open(run_dir / "losses.csv", "w", newline="")
        writer = csv.writer(csv_file, lineterminator="\n")
        writer.writerow(LOSS_CSV_COLUMNS)

    in_h, in_w = config.model.input_size
    k = config.model.num_classes
    ke = config.model.edge_channels
    n_train = len(train_samples)

    try:
        for t in range(start_iter, config.total_iters):
            lr = lr_at(schedule, t)
            idx = rng.integers(0, n_train, size=config.batch_size)
            batch = [augment(train_samples[int(i)], rng, in_h, in_w) for i in idx]
            progress = t / config.total_iters
            consistency_on = (
                ke > 0
                and config.weights.c_c > 0
                and progress >= config.weights.consistency_start_fraction
            )
            edge_on = ke > 0 and config.weights.c_e > 0
            need_edges = edge_on or consistency_on

            params.zero_grads()
            with Tape() as tape:
                images = Tensor(np.stack([b.image for b in batch]))
                feats = model.encoder_forward(images)
                seg_logits = model.seg_head_forward(feats)
                seg_flat = T.reshape(seg_logits, (len(batch) * k,) + seg_logits.shape[2:])
                edge_flat = None
                if need_edges:
                    edge_logits = model.edge_head_forward(feats)
                    edge_flat = T.reshape(edge_logits, (len(batch) * ke,) + edge_logits.shape[2:])

                ls_terms, le_terms, c1_terms, c2_terms = [], [], [], []
                n_hard_total = 0
                for i, sample in enumerate(batch):
                    logits_i = T.slice_channels(seg_flat, i * k, (i + 1) * k)
                    n_valid = int(np.sum(sample.labels != config.ignore_value))
                    loss_i, n_hard = ohem_cross_entropy(
                        logits_i,
                        sample.labels,
                        thresh=config.ohem.thresh,
                        min_kept=config.ohem.min_kept(n_valid),
                        ignore_value=config.ignore_value,
                    )
                    ls_terms.append(loss_i)
                    n_hard_total += n_hard
                    if need_edges:
                        target = _image_target(sample, config)
                        e_i = T.sigmoid(T.slice_channels(edge_flat, i * ke, (i + 1) * ke))
                        if edge_on:
                            le_terms.append(multilabel_edge_loss(e_i, target))
                        if consistency_on:
                            c_i = spatial_gradient(T.softmax_channel(logits_i), config.edge_window)
                            if config.model.edge_mode == "binary":
                                c_i = T.max_channels(c_i)
                            l1, l2, _ = decomposed_consistency_loss(c_i, e_i, target)
                            c1_terms.append(l1)
                            c2_terms.append(l2)

                l_s = _mean_terms(ls_terms)
                l_e = _mean_terms(le_terms) if le_terms else None
                if c1_terms:
                    l_c1, l_c2 = _mean_terms(c1_terms), _mean_terms(c2_terms)
                    l_cd = T.add(l_c1, l_c2)
                else:
                    l_c1 = l_c2 = l_cd = None
                total, breakdown = total_loss(
                    l_s,
                    l_e,
                    l_cd,
                    config.weights,
                    progress,
                    l_c1=l_c1.item() if l_c1 is not None else 0.0,
                    l_c2=l_c2.item() if l_c2 is not None else 0.0,
                    n_hard=n_hard_total,
                )
                tape.backward(total)
            sgd_step(params, state, lr)

            if writer is not None:
                writer.writerow(
                    [
                        t,
                        repr(float(lr)),
                        repr(breakdown.l_s),
                        repr(breakdown.l_e),
                        repr(breakdown.l_c1),
                        repr(breakdown.l_c2),
                        repr(breakdown.l_cd),
                        repr(breakdown.total),
                    ]
                )
            if (
                run_dir is not None
                and config.checkpoint_every
                and (t + 1) % config.checkpoint_every == 0
                and (t + 1) < config.total_iters
            ):
                _save(run_dir / f"checkpoint_{t + 1:06d}.bin", t + 1, model, state, rng)
    finally:
        if csv_file is not None:
            csv_file.close()

    if run_dir is not None:
        _save(run_dir / "checkpoint_final.bin", config.total_iters, model, state, rng)

    val_report = evaluate(model, val_samples, config) if val_samples else None
    if run_dir is not None and val_report is not None:
        report = dict(val_report, split="val", seed=config.seed, config_hash=config_hash(config))
        (run_dir / "report.json").write_text(_dump_json(report))
    return TrainOutcome(
        run_dir=run_dir,
        iterations=config.total_iters,
        val_miou=val_report["miou"] if val_report else float("nan"),
        val_report=val_report,
        model=model,
        state=state,
    )


def _save(path, iteration: int, model: SegEdgeModel, state: SgdState, rng) -> None:
    save_checkpoint(
        path,
        Checkpoint(
            iteration=iteration,
            params={name: p.data for name, p in model.params.items()},
            velocity=state.velocity,
            rng_state=rng.bit_generator.state,
        ),
    )


def _dump_json(obj) -> str:
    import json

    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def evaluate(
    model: SegEdgeModel,
    samples: list[Sample],
    config: TrainConfig,
    multiscale: bool = False,
    scales=(0.75, 1.0, 1.25),
) -> dict:
    """mIoU report over un-augmented samples, plus the mean consistency gap.

    With `multiscale` the predicted labels come from scale-averaged
    probabilities; the consistency gap always uses the single-scale forward.
    """
    if not samples:
        raise DataError("no samples to evaluate")
    k = config.model.num_classes
    cm = ConfusionMatrix.zeros(k)
    gaps = []
    for sample in samples:
        image = normalize_image(sample.image)
        s, e, c = model.forward_full(Tensor(image), window=config.edge_window)
        probs = multiscale_infer(model, image, scales, config.edge_window) if multiscale else s.data
        accumulate(cm, predict_labels(probs), sample.labels, config.ignore_value)
        if e is not None:
            gaps.append(consistency_gap(c, e, _image_target(sample, config)))
    report = iou_report(cm)
    report["consistency_gap"] = float(np.mean(gaps)) if gaps else None
    report["num_images"] = len(samples)
    report["multiscale"] = bool(multiscale)
    return report
