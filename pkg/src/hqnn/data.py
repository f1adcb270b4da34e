"""Dataset ingestion, preprocessing, augmentation, splits, synthetic images.

Directory layout: ``<root>/<class-name>/*.png`` with class names ``normal``
(label 0) and ``malignant`` (label 1). An optional ``<root>/test/<class-name>/``
tree supplies a verbatim test split. Manifests are line-oriented TSV with a
seed/source header so splits carry their provenance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, ContractError, DataError
from .rng import STREAM_AUGMENT, STREAM_SPLIT, STREAM_SYNTH, make_rng
from .tensor import Tensor

CLASS_NAMES = ("normal", "malignant")
IMAGE_SIZE = 64
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406])
IMAGENET_STD = np.array([0.229, 0.224, 0.225])
SPLITS = ("train", "val", "test")


@dataclass
class ManifestRecord:
    path: str  # relative to the dataset root
    label: int
    split: str


@dataclass
class DatasetManifest:
    root: Path
    records: list[ManifestRecord] = field(default_factory=list)
    seed: int = 0
    source: str = ""

    def split_indices(self, split: str) -> list[int]:
        if split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS}, got {split!r}")
        return [i for i, r in enumerate(self.records) if r.split == split]

    def counts(self) -> dict[str, dict[int, int]]:
        out: dict[str, dict[int, int]] = {s: {0: 0, 1: 0} for s in SPLITS}
        for r in self.records:
            out[r.split][r.label] += 1
        return out

    def save(self, path) -> None:
        lines = [
            "# hqnn-manifest v1",
            f"# seed: {self.seed}",
            f"# source: {self.source}",
        ]
        lines += [f"{r.path}\t{r.label}\t{r.split}" for r in self.records]
        Path(path).write_text("\n".join(lines) + "\n")

    @staticmethod
    def load(path) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"manifest not found: {path}")
        seed, source, records = 0, "", []
        for line in path.read_text().splitlines():
            if line.startswith("# seed:"):
                seed = int(line.split(":", 1)[1].strip())
            elif line.startswith("# source:"):
                source = line.split(":", 1)[1].strip()
            elif line.startswith("#") or not line.strip():
                continue
            else:
                p, label, split = line.split("\t")
                records.append(ManifestRecord(p, int(label), split))
        return DatasetManifest(path.parent, records, seed, source)


# ---------------------------------------------------------------------------
# image loading and preprocessing


def _bilinear_gather(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample (C,H,W) image at fractional coordinates; edges are clamped."""
    _, H, W = img.shape
    ys = np.clip(ys, 0.0, H - 1.0)
    xs = np.clip(xs, 0.0, W - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    wy = ys - y0
    wx = xs - x0
    top = img[:, y0, x0] * (1 - wx) + img[:, y0, x1] * wx
    bot = img[:, y1, x0] * (1 - wx) + img[:, y1, x1] * wx
    return top * (1 - wy) + bot * wy


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Classic bilinear resize with pixel-center alignment."""
    _, H, W = img.shape
    ys = (np.arange(out_h) + 0.5) * (H / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (W / out_w) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear_gather(img, yy, xx)


def rotate_bilinear(img: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate about the image center; out-of-frame samples take edge values."""
    _, H, W = img.shape
    th = math.radians(angle_deg)
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64),
                         np.arange(W, dtype=np.float64), indexing="ij")
    c, s = math.cos(th), math.sin(th)
    sy = c * (yy - cy) + s * (xx - cx) + cy
    sx = -s * (yy - cy) + c * (xx - cx) + cx
    return _bilinear_gather(img, sy, sx)


def load_image_01(path) -> np.ndarray:
    """Decode PNG/PPM, resize to 64x64, scale to [0, 1]; returns (3,64,64)."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64)
    except DataError:
        raise
    except Exception as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    arr = arr.transpose(2, 0, 1)
    if arr.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE):
        arr = bilinear_resize(arr, IMAGE_SIZE, IMAGE_SIZE)
    return arr / 255.0


def normalize(x01: np.ndarray) -> np.ndarray:
    """Per-channel (x - mean) / std with ImageNet statistics."""
    return (x01 - IMAGENET_MEAN[:, None, None]) / IMAGENET_STD[:, None, None]


def denormalize(x: np.ndarray) -> np.ndarray:
    return x * IMAGENET_STD[:, None, None] + IMAGENET_MEAN[:, None, None]


def load_and_preprocess(path) -> np.ndarray:
    """Decode -> bilinear resize -> [0,1] -> ImageNet normalization."""
    return normalize(load_image_01(path))


def augment(x01: np.ndarray, rng: np.random.Generator, split: str = "train") -> np.ndarray:
    """Train-time augmentation on [0,1] pixels, before normalization.

    Draws, in fixed order: flip uniform, rotation angle U(-10, 10) degrees,
    brightness factor U(0.8, 1.2), contrast factor U(0.8, 1.2). Contrast
    blends against the image's mean intensity. Output is clamped to [0, 1].
    """
    if split != "train":
        raise ContractError(f"augment is train-only, got split {split!r}")
    u_flip = rng.random()
    angle = rng.uniform(-10.0, 10.0)
    brightness = rng.uniform(0.8, 1.2)
    contrast = rng.uniform(0.8, 1.2)
    out = x01
    if u_flip < 0.5:
        out = out[:, :, ::-1]
    if angle != 0.0:
        out = rotate_bilinear(out, angle)
    out = out * brightness
    m = out.mean()
    out = (out - m) * contrast + m
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# splitting and manifests


def stratified_split(labels, seed: int, train_fraction: float = 0.8) -> list[str]:
    """Per-class shuffled split at floor(train_fraction * count)."""
    labels = np.asarray(labels, dtype=np.int64)
    assignment = [""] * len(labels)
    for c in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            raise DataError(f"class {c} has {len(idx)} samples, need >= 2")
        perm = make_rng(seed, STREAM_SPLIT, 0, c).permutation(len(idx))
        n_train = int(math.floor(train_fraction * len(idx)))
        for j, k in enumerate(perm):
            assignment[idx[k]] = "train" if j < n_train else "val"
    return assignment


def build_manifest(root, seed: int) -> DatasetManifest:
    """Scan the documented layout and assign a seeded stratified split."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root not found: {root}")
    paths: list[str] = []
    labels: list[int] = []
    for label, name in enumerate(CLASS_NAMES):
        cdir = root / name
        if not cdir.is_dir():
            raise DataError(f"missing class directory: {cdir}")
        files = sorted(p.name for p in cdir.iterdir()
                       if p.suffix.lower() in (".png", ".ppm"))
        if not files:
            raise DataError(f"no images under {cdir}")
        paths += [f"{name}/{f}" for f in files]
        labels += [label] * len(files)
    splits = stratified_split(labels, seed)
    records = [ManifestRecord(p, l, s) for p, l, s in zip(paths, labels, splits)]
    # Optional verbatim test set at <root>/test/<class-name>/.
    test_root = root / "test"
    if test_root.is_dir():
        for label, name in enumerate(CLASS_NAMES):
            cdir = test_root / name
            if not cdir.is_dir():
                continue
            for f in sorted(p.name for p in cdir.iterdir()
                            if p.suffix.lower() in (".png", ".ppm")):
                records.append(ManifestRecord(f"test/{name}/{f}", label, "test"))
    return DatasetManifest(root, records, seed, f"directory({root})")


# ---------------------------------------------------------------------------
# synthetic thermography stand-in


def synth_image(rng: np.random.Generator, label: int):
    """One 64x64x3 synthetic thermal image in [0,1] plus hot-spot metadata.

    Class 0 is a smooth radial gradient with noise; class 1 adds 2-4
    localized Gaussian hot spots, making the classes separable by
    construction. Returns (image (3,64,64), list of (cy, cx, radius)).
    """
    size = IMAGE_SIZE
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64), indexing="ij")
    cy = size / 2 + rng.uniform(-6, 6)
    cx = size / 2 + rng.uniform(-6, 6)
    sigma = rng.uniform(18, 26)
    ambient = rng.uniform(0.12, 0.2)
    peak = rng.uniform(0.5, 0.62)
    r2 = (yy - cy) ** 2 + (xx - cx) ** 2
    field = ambient + (peak - ambient) * np.exp(-r2 / (2 * sigma**2))
    spots = []
    if label == 1:
        for _ in range(int(rng.integers(2, 5))):
            sy = cy + rng.uniform(-14, 14)
            sx = cx + rng.uniform(-14, 14)
            rad = rng.uniform(3.0, 6.0)
            amp = rng.uniform(0.3, 0.45)
            field = field + amp * np.exp(
                -((yy - sy) ** 2 + (xx - sx) ** 2) / (2 * rad**2)
            )
            spots.append((sy, sx, rad))
    field = field + rng.normal(0.0, 0.02, (size, size))
    img = np.stack([field, 0.75 * field + 0.05, 0.55 - 0.45 * field])
    return np.clip(img, 0.0, 1.0), spots


def synth_dataset(out_dir, n_per_class: int, seed: int) -> DatasetManifest:
    """Generate the synthetic dataset on disk plus its split manifest."""
    if n_per_class < 4:
        raise ConfigError(f"n_per_class must be >= 4, got {n_per_class}")
    out_dir = Path(out_dir)
    paths: list[str] = []
    labels: list[int] = []
    for label, name in enumerate(CLASS_NAMES):
        cdir = out_dir / name
        cdir.mkdir(parents=True, exist_ok=True)
        for i in range(n_per_class):
            idx = label * n_per_class + i
            img, _ = synth_image(make_rng(seed, STREAM_SYNTH, 0, idx), label)
            arr = np.round(img * 255.0).astype(np.uint8).transpose(1, 2, 0)
            rel = f"{name}/img_{i:04d}.png"
            Image.fromarray(arr).save(out_dir / rel)
            paths.append(rel)
            labels.append(label)
    splits = stratified_split(labels, seed)
    records = [ManifestRecord(p, l, s) for p, l, s in zip(paths, labels, splits)]
    manifest = DatasetManifest(
        out_dir, records, seed, f"synthetic(per_class={n_per_class}, seed={seed})"
    )
    manifest.save(out_dir / "manifest.tsv")
    return manifest


# ---------------------------------------------------------------------------
# batching


def batch_iter(
    manifest: DatasetManifest,
    split: str,
    batch_size: int = 16,
    shuffle: bool = False,
    rng: np.random.Generator | None = None,
    augment_train: bool = False,
    aug_seed: int = 0,
    epoch: int = 0,
    cache: dict | None = None,
):
    """Yield (pixels Tensor[B,3,64,64], labels int array) covering ``split`` once.

    Shuffle order is a pure function of ``rng``; augmentation substreams are
    keyed by (aug_seed, epoch, record index). ``cache`` maps record index to
    decoded [0,1] pixels and is filled on first use.
    """
    indices = manifest.split_indices(split)
    if not indices:
        raise DataError(f"split {split!r} is empty")
    if shuffle:
        if rng is None:
            raise ContractError("shuffle=True requires an rng")
        order = [indices[k] for k in rng.permutation(len(indices))]
    else:
        order = indices
    if cache is None:
        cache = {}
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        pixels = np.empty((len(chunk), 3, IMAGE_SIZE, IMAGE_SIZE))
        labels = np.empty(len(chunk), dtype=np.int64)
        for row, idx in enumerate(chunk):
            rec = manifest.records[idx]
            x01 = cache.get(idx)
            if x01 is None:
                x01 = load_image_01(manifest.root / rec.path)
                cache[idx] = x01
            if augment_train:
                x01 = augment(x01, make_rng(aug_seed, STREAM_AUGMENT, epoch, idx),
                              rec.split)
            pixels[row] = normalize(x01)
            labels[row] = rec.label
        yield Tensor(pixels), labels
