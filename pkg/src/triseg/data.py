"""Synthetic shape corpus, dependency-free image I/O, and augmentations.

Images are flat-colored geometric shapes (circle / rectangle / triangle) on a
background, plus per-pixel Gaussian noise. Label boundaries are crisp by
construction — exactly the structure the boundary losses supervise. Every
image is generated from its own seed sequence (corpus seed, split, index), so
generation is reproducible file-by-file and parallelizable.

Images go to disk as binary PPM (P6), labels as binary PGM (P5) with the
class index as the pixel value and 255 reserved for "ignore".
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, MissingInputError, ParameterError
from .tensor import resize_array_bilinear

__all__ = [
    "IGNORE_VALUE",
    "DatasetSpec",
    "Sample",
    "generate",
    "load_split",
    "read_ppm",
    "write_ppm",
    "read_pgm",
    "write_pgm",
    "augment",
    "photometric_jitter",
    "hflip",
    "rescale",
    "crop_or_pad",
    "normalize_image",
]

IGNORE_VALUE = 255

SPLITS = ("train", "val", "test")

# class 0 is background; shape classes cycle circle, rectangle, triangle
_PALETTE = np.array(
    [
        (0.15, 0.15, 0.20),
        (0.80, 0.30, 0.25),
        (0.25, 0.75, 0.30),
        (0.25, 0.35, 0.85),
        (0.85, 0.75, 0.25),
        (0.70, 0.30, 0.75),
        (0.30, 0.75, 0.75),
        (0.80, 0.55, 0.30),
    ]
)

_MIN_SHAPE_PIXELS = 20


@dataclass
class Sample:
    """One image/label pair; image channels-first in [0, 1]."""

    image: np.ndarray
    labels: np.ndarray


@dataclass
class DatasetSpec:
    train_images: int = 40
    val_images: int = 8
    test_images: int = 8
    size: int = 64
    num_classes: int = 4
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if min(self.train_images, self.val_images, self.test_images) < 0:
            raise ParameterError("split sizes must be >= 0")
        if self.size < 16:
            raise ParameterError(f"image size must be >= 16, got {self.size}")
        if not 2 <= self.num_classes <= len(_PALETTE):
            raise ParameterError(f"num_classes must lie in [2, {len(_PALETTE)}], got {self.num_classes}")
        if self.noise_sigma < 0:
            raise ParameterError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    def split_count(self, split: str) -> int:
        return {"train": self.train_images, "val": self.val_images, "test": self.test_images}[split]


# ---------------------------------------------------------------------------
# PPM / PGM
# ---------------------------------------------------------------------------


def write_ppm(path, image: np.ndarray) -> None:
    """8-bit binary PPM from a (3, H, W) float image in [0, 1]."""
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DataError(f"PPM image must be (3, H, W), got shape {np.asarray(image).shape}")
    h, w = arr.shape[1:]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(arr.transpose(1, 2, 0).tobytes())


def write_pgm(path, labels: np.ndarray) -> None:
    """8-bit binary PGM; pixel value is the class index (255 = ignore)."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise DataError(f"PGM labels must be 2-D, got shape {arr.shape}")
    if arr.min() < 0 or arr.max() > 255:
        raise DataError("PGM labels must fit in [0, 255]")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(arr.astype(np.uint8).tobytes())


def _read_pnm(path, magic: bytes) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"no such image file: {path}")
    raw = path.read_bytes()
    if not raw.startswith(magic):
        raise DataError(f"{path} is not a {magic.decode()} file")
    # header = magic + three whitespace-separated integers, then one
    # whitespace byte before the raster; '#' comments allowed
    pos, fields = len(magic), []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated header")
        try:
            fields.append(int(raw[start:pos]))
        except ValueError:
            raise DataError(f"{path}: malformed header field {raw[start:pos]!r}") from None
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 is supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    data = raw[pos : pos + w * h * channels]
    if len(data) != w * h * channels:
        raise DataError(f"{path}: raster truncated ({len(data)} of {w * h * channels} bytes)")
    arr = np.frombuffer(data, dtype=np.uint8)
    return arr.reshape(h, w, channels) if channels == 3 else arr.reshape(h, w)


def read_ppm(path) -> np.ndarray:
    return _read_pnm(path, b"P6").transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path) -> np.ndarray:
    return _read_pnm(path, b"P5").astype(np.int64)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _draw_circle(labels, k, rng, s):
    cy, cx = rng.uniform(0.08 * s, 0.92 * s, size=2)
    r = rng.uniform(0.055 * s, 0.11 * s)
    yy, xx = np.mgrid[0:s, 0:s]
    labels[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = k


def _draw_rectangle(labels, k, rng, s):
    h = rng.uniform(0.09 * s, 0.20 * s)
    w = rng.uniform(0.09 * s, 0.20 * s)
    y0 = rng.uniform(0.02 * s, 0.96 * s - h)
    x0 = rng.uniform(0.02 * s, 0.96 * s - w)
    labels[int(y0) : int(y0 + h), int(x0) : int(x0 + w)] = k


def _draw_triangle(labels, k, rng, s):
    cy, cx = rng.uniform(0.10 * s, 0.90 * s, size=2)
    radius = rng.uniform(0.07 * s, 0.14 * s)
    angles = rng.uniform(0.0, 2.0 * np.pi) + np.array([0.0, 2.1, 4.2]) + rng.uniform(-0.3, 0.3, size=3)
    ys = cy + radius * np.sin(angles)
    xs = cx + radius * np.cos(angles)
    yy, xx = np.mgrid[0:s, 0:s]
    inside = np.ones((s, s), dtype=bool)
    for i in range(3):
        y0, x0 = ys[i], xs[i]
        y1, x1 = ys[(i + 1) % 3], xs[(i + 1) % 3]
        y2, x2 = ys[(i + 2) % 3], xs[(i + 2) % 3]
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        ref = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        inside &= cross * ref >= 0
    labels[inside] = k


_SHAPE_DRAWERS = (_draw_circle, _draw_rectangle, _draw_triangle)

# instances drawn per shape class; several small shapes per image keep the
# class boundaries dense, which is the structure the edge losses care about
_MIN_INSTANCES, _MAX_INSTANCES = 3, 6


def _render_labels(rng, spec: DatasetSpec) -> np.ndarray:
    """Label map with every shape class present (>= 20 px) and a background
    majority; resamples the whole layout until both hold."""
    s = spec.size
    for _ in range(200):
        labels = np.zeros((s, s), dtype=np.int64)
        for k in rng.permutation(np.arange(1, spec.num_classes)):
            draw = _SHAPE_DRAWERS[(int(k) - 1) % 3]
            for _instance in range(int(rng.integers(_MIN_INSTANCES, _MAX_INSTANCES + 1))):
                draw(labels, int(k), rng, s)
        counts = np.bincount(labels.ravel(), minlength=spec.num_classes)
        if counts[1:].min() >= _MIN_SHAPE_PIXELS and counts[0] > 0.5 * s * s:
            return labels
    raise DataError("could not place all shape classes; spec too crowded for the image size")


def make_sample(spec: DatasetSpec, split: str, index: int) -> Sample:
    """Deterministically generate one sample of a split."""
    split_id = SPLITS.index(split)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, split_id, index])))
    labels = _render_labels(rng, spec)
    image = _PALETTE[labels].transpose(2, 0, 1)
    image = image + rng.normal(0.0, spec.noise_sigma, size=image.shape)
    return Sample(image=np.clip(image, 0.0, 1.0), labels=labels)


def generate(spec: DatasetSpec, out_dir) -> dict[str, Path]:
    """Write all three splits plus per-split JSON manifests; returns manifest paths."""
    out_dir = Path(out_dir)
    manifests: dict[str, Path] = {}
    for split in SPLITS:
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        items = []
        for i in range(spec.split_count(split)):
            sample = make_sample(spec, split, i)
            image_rel = f"{split}/img_{i:05d}.ppm"
            labels_rel = f"{split}/lab_{i:05d}.pgm"
            write_ppm(out_dir / image_rel, sample.image)
            write_pgm(out_dir / labels_rel, sample.labels)
            items.append({"image": image_rel, "labels": labels_rel})
        manifest = {"split": split, "spec": asdict(spec), "items": items}
        path = out_dir / f"{split}.json"
        path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
        manifests[split] = path
    return manifests


def load_split(root, split: str) -> list[Sample]:
    if split not in SPLITS:
        raise ParameterError(f"split must be one of {SPLITS}, got {split!r}")
    root = Path(root)
    manifest_path = root / f"{split}.json"
    if not manifest_path.is_file():
        raise MissingInputError(f"missing split manifest {manifest_path}; run data generation first")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"malformed manifest {manifest_path}: {e}") from None
    samples = []
    for item in manifest.get("items", []):
        samples.append(Sample(image=read_ppm(root / item["image"]), labels=read_pgm(root / item["labels"])))
    return samples


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def photometric_jitter(image: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Contrast then brightness jitter, both within +/- 0.2, clipped to [0, 1]."""
    contrast = 1.0 + rng.uniform(-0.2, 0.2)
    brightness = rng.uniform(-0.2, 0.2)
    return np.clip((image - 0.5) * contrast + 0.5 + brightness, 0.0, 1.0)


def hflip(sample: Sample) -> Sample:
    return Sample(image=sample.image[:, :, ::-1].copy(), labels=sample.labels[:, ::-1].copy())


def _nearest_indices(n_in: int, n_out: int) -> np.ndarray:
    return np.clip(((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(np.int64), 0, n_in - 1)


def rescale(sample: Sample, factor: float) -> Sample:
    """Resize by a scale factor: bilinear for the image, nearest for labels."""
    if factor <= 0:
        raise ParameterError(f"scale factor must be > 0, got {factor}")
    h, w = sample.labels.shape
    th, tw = max(1, round(h * factor)), max(1, round(w * factor))
    image = resize_array_bilinear(sample.image, th, tw)
    ri, ci = _nearest_indices(h, th), _nearest_indices(w, tw)
    return Sample(image=image, labels=sample.labels[ri[:, None], ci[None, :]])


def crop_or_pad(sample: Sample, rng: np.random.Generator, out_h: int, out_w: int) -> Sample:
    """Randomly placed crop (if larger) or pad (if smaller) to out_h x out_w.

    Padded label pixels are ignore-valued; padded image pixels are zero.
    """
    image = np.zeros((3, out_h, out_w))
    labels = np.full((out_h, out_w), IGNORE_VALUE, dtype=sample.labels.dtype)
    h, w = sample.labels.shape
    # per axis: source range within the sample, destination offset in the output
    spans = []
    for cur, out in ((h, out_h), (w, out_w)):
        if cur >= out:
            src = int(rng.integers(0, cur - out + 1))
            spans.append((src, 0, out))
        else:
            dst = int(rng.integers(0, out - cur + 1))
            spans.append((0, dst, cur))
    (sy, dy, ny), (sx, dx, nx) = spans
    image[:, dy : dy + ny, dx : dx + nx] = sample.image[:, sy : sy + ny, sx : sx + nx]
    labels[dy : dy + ny, dx : dx + nx] = sample.labels[sy : sy + ny, sx : sx + nx]
    return Sample(image=image, labels=labels)


def normalize_image(image: np.ndarray) -> np.ndarray:
    """Map [0, 1] channels to mean 0.5 / std 0.5 network inputs."""
    return (np.asarray(image, dtype=np.float64) - 0.5) / 0.5


def augment(sample: Sample, rng: np.random.Generator, out_h: int, out_w: int) -> Sample:
    """Full training-time pipeline: jitter, flip, rescale, crop/pad, normalize."""
    image = photometric_jitter(sample.image, rng)
    sample = Sample(image=image, labels=sample.labels)
    if rng.random() < 0.5:
        sample = hflip(sample)
    sample = rescale(sample, rng.uniform(0.5, 2.0))
    sample = crop_or_pad(sample, rng, out_h, out_w)
    return Sample(image=normalize_image(sample.image), labels=sample.labels)
