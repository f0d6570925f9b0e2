"""Synthetic real/fake "face" domains with a controllable domain shift.

Every sample pair shares one base image: a smooth elliptical blob on a
coloured background plus faint pixel noise. The fake (label 1) copy has one
square artifact patch pasted over the blob; outside that square the two
images are identical. Domains differ in the patch texture (uniform noise vs.
a low-contrast checkerboard) and in a global style transform, so the class
signal (patch present or not) carries over while its appearance shifts.

Datasets are stored on disk as 8-bit PPM files plus an ``index.tsv``
manifest (``path, label, domain, split``).
"""
from __future__ import annotations

import colorsys
import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, IoError, ManifestError
from .ppm import decode_ppm, encode_ppm, quantize

ARTIFACT_KINDS = ("noise-patch", "checkerboard-patch")
SPLITS = ("train", "val", "test")
MANIFEST = "index.tsv"
MANIFEST_HEADER = ("path", "label", "domain", "split")

NOISE_STD = 0.02
HUE_STEPS = 8
CHECKER_CELL = 2
CHECKER_AMPLITUDE = (0.04, 0.12)


@dataclass(frozen=True)
class DomainStyle:
    brightness: float = 0.0
    contrast: float = 1.0
    hue: int = 0


@dataclass(frozen=True)
class DomainSpec:
    domain_id: str
    image_size: int = 32
    per_class_train: int = 500
    per_class_test: int = 100
    per_class_val: int = 0
    artifact_kind: str = "noise-patch"
    style: DomainStyle = field(default_factory=DomainStyle)
    seed: int = 0

    def validate(self):
        if not self.domain_id or any(c in self.domain_id for c in "\t\n/"):
            raise ConfigError(f"bad domain id {self.domain_id!r}")
        if self.image_size < 16 or self.image_size % 2:
            raise ConfigError(f"image size must be even and >= 16, got {self.image_size}")
        if self.per_class_train < 1 or self.per_class_test < 1 or self.per_class_val < 0:
            raise ConfigError("per-class train/test counts must be >= 1 and val >= 0")
        if self.artifact_kind not in ARTIFACT_KINDS:
            raise ConfigError(f"artifact kind must be one of {ARTIFACT_KINDS}")
        st = self.style
        if not (-0.2 <= st.brightness <= 0.2 and 0.8 <= st.contrast <= 1.2):
            raise ConfigError("style brightness must lie in [-0.2, 0.2] and contrast in [0.8, 1.2]")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


def preset(name: str, seed: int = 0, per_class_train: int = 500, per_class_test: int = 100,
           per_class_val: int = 0, image_size: int = 32) -> DomainSpec:
    """Stock domains: ``A`` (noise patches, neutral style) and ``B``
    (checkerboard patches, brighter, higher contrast, shifted hue)."""
    styles = {
        "A": ("noise-patch", DomainStyle(0.0, 1.0, 0)),
        "B": ("checkerboard-patch", DomainStyle(0.1, 1.1, 3)),
    }
    if name not in styles:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(styles)}")
    kind, style = styles[name]
    return DomainSpec(name, image_size, per_class_train, per_class_test, per_class_val, kind, style, seed)


@dataclass(frozen=True)
class LabeledSample:
    image: np.ndarray
    label: int
    domain: str
    split: str


@dataclass
class Dataset:
    """Column-oriented sample store: ``images`` is (N, H, W, 3) float64."""

    images: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    splits: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.domains = np.asarray(self.domains, dtype=object)
        self.splits = np.asarray(self.splits, dtype=object)
        n = len(self.labels)
        if not (len(self.images) == len(self.domains) == len(self.splits) == n):
            raise ConfigError("dataset columns have different lengths")

    def __len__(self):
        return len(self.labels)

    @property
    def samples(self):
        return [LabeledSample(img, int(y), d, s)
                for img, y, d, s in zip(self.images, self.labels, self.domains, self.splits)]

    def select(self, index) -> "Dataset":
        return Dataset(self.images[index], self.labels[index], self.domains[index], self.splits[index])

    def split(self, name: str) -> "Dataset":
        return self.select(np.flatnonzero(self.splits == name))

    def has_split(self, name: str) -> bool:
        return bool(np.any(self.splits == name))

    def class_pool(self, split: str = "train") -> dict:
        """Images of ``split`` grouped by label."""
        part = self.split(split)
        return {int(c): part.images[part.labels == c] for c in np.unique(part.labels)}

    @classmethod
    def concat(cls, parts) -> "Dataset":
        parts = list(parts)
        return cls(np.concatenate([p.images for p in parts]), np.concatenate([p.labels for p in parts]),
                   np.concatenate([p.domains for p in parts]), np.concatenate([p.splits for p in parts]))


def _background(rng, hue: int):
    """Background colour around the domain's hue, jittered per sample."""
    h = (hue + rng.uniform(-0.5, 0.5)) / HUE_STEPS
    return np.array(colorsys.hsv_to_rgb(h % 1.0, rng.uniform(0.3, 0.6), rng.uniform(0.3, 0.6)))


_FACE_RGB = np.array([0.85, 0.66, 0.52])


def _base_image(rng, size, hue):
    """Blob on a background, with noise. Returns image and blob geometry."""
    background = _background(rng, hue)
    tone = _FACE_RGB * rng.uniform(0.85, 1.1)
    cx = size / 2 + rng.uniform(-2.0, 2.0)
    cy = size / 2 + rng.uniform(-2.0, 2.0)
    rx = size * rng.uniform(0.30, 0.38)
    ry = size * rng.uniform(0.36, 0.44)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    r = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    # soft edge over the outer 15% of the radius
    alpha = np.clip((1.0 - r) / 0.15, 0.0, 1.0)
    alpha = alpha * alpha * (3.0 - 2.0 * alpha)
    shade = 0.75 + 0.25 * np.clip(1.0 - r, 0.0, 1.0)
    face = tone[None, None, :] * shade[:, :, None]
    img = background[None, None, :] * (1.0 - alpha[:, :, None]) + face * alpha[:, :, None]
    img = img + rng.normal(0.0, NOISE_STD, img.shape)
    return img, (cx, cy, rx, ry)


def _patch_location(rng, size, geom):
    cx, cy, rx, ry = geom
    ps = size // 4
    x0 = int(round(cx + rng.uniform(-0.5, 0.5) * rx - ps / 2))
    y0 = int(round(cy + rng.uniform(-0.5, 0.5) * ry - ps / 2))
    return min(max(x0, 0), size - ps), min(max(y0, 0), size - ps), ps


def _patch_content(rng, kind, region):
    ps = region.shape[0]
    if kind == "noise-patch":
        return rng.uniform(0.0, 1.0, region.shape)
    yy, xx = np.mgrid[0:ps, 0:ps]
    sign = np.where(((yy // CHECKER_CELL) + (xx // CHECKER_CELL)) % 2 == 0, 1.0, -1.0)
    amplitude = rng.uniform(*CHECKER_AMPLITUDE)
    return region.mean(axis=(0, 1))[None, None, :] + amplitude * sign[:, :, None]


def _style(img, style):
    return np.clip((img - 0.5) * style.contrast + 0.5 + style.brightness, 0.0, 1.0)


def generate_pair(spec: DomainSpec, split: str, index: int):
    """Real and fake image built from the same base; also returns the patch box."""
    rng = np.random.default_rng([spec.seed, SPLITS.index(split), index])
    size = spec.image_size
    base, geom = _base_image(rng, size, spec.style.hue)
    x0, y0, ps = _patch_location(rng, size, geom)
    fake = base.copy()
    fake[y0:y0 + ps, x0:x0 + ps] = _patch_content(rng, spec.artifact_kind, base[y0:y0 + ps, x0:x0 + ps])
    return _style(base, spec.style), _style(fake, spec.style), (y0, x0, ps)


def generate_domain(spec: DomainSpec) -> Dataset:
    """Deterministic dataset: per split, pairs (real j, fake j) in index order."""
    spec.validate()
    counts = {"train": spec.per_class_train, "val": spec.per_class_val, "test": spec.per_class_test}
    images, labels, splits = [], [], []
    for split in SPLITS:
        for j in range(counts[split]):
            real, fake, _ = generate_pair(spec, split, j)
            images += [real, fake]
            labels += [0, 1]
            splits += [split, split]
    n = len(labels)
    return Dataset(np.stack(images), np.array(labels), np.full(n, spec.domain_id, dtype=object),
                   np.array(splits, dtype=object))


def quantize_dataset(ds: Dataset) -> Dataset:
    """The dataset as it reads back from disk (8-bit pixel values)."""
    return Dataset(quantize(ds.images).astype(np.float64) / 255.0, ds.labels.copy(), ds.domains.copy(),
                   ds.splits.copy())


def write_dataset(ds: Dataset, directory) -> Path:
    """Write PPM images under ``directory/<split>/`` and the manifest; returns its path."""
    root = Path(directory)
    rows = []
    try:
        for split in SPLITS:
            if np.any(ds.splits == split):
                (root / split).mkdir(parents=True, exist_ok=True)
        counters = {}
        for img, y, dom, split in zip(ds.images, ds.labels, ds.domains, ds.splits):
            key = (dom, split)
            idx = counters.get(key, 0)
            counters[key] = idx + 1
            rel = f"{split}/{dom}_{idx:06d}_c{int(y)}.ppm"
            (root / rel).write_bytes(encode_ppm(img))
            rows.append((rel, str(int(y)), str(dom), str(split)))
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)
        manifest = root / MANIFEST
        manifest.write_bytes(buf.getvalue().encode("utf-8"))
    except OSError as exc:
        raise IoError(f"cannot write dataset to {root}: {exc}") from exc
    return manifest


def load_dataset(directory) -> Dataset:
    root = Path(directory)
    manifest = root / MANIFEST
    try:
        text = manifest.read_bytes().decode("utf-8")
    except OSError as exc:
        raise IoError(f"cannot read manifest {manifest}: {exc}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or tuple(lines[0].split("\t")) != MANIFEST_HEADER:
        raise ManifestError(f"{manifest}: header must be the tab-separated columns {', '.join(MANIFEST_HEADER)}")
    images, labels, domains, splits = [], [], [], []
    shape = None
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != 4:
            raise ManifestError(f"{manifest} row {lineno}: expected 4 columns, got {len(fields)}")
        rel, label, domain, split = fields
        if label not in ("0", "1"):
            raise ManifestError(f"{manifest} row {lineno}: label must be 0 or 1, got {label!r}")
        if split not in SPLITS:
            raise ManifestError(f"{manifest} row {lineno}: unknown split {split!r}")
        path = root / rel
        if not path.is_file():
            raise ManifestError(f"{manifest} row {lineno}: missing file {rel}")
        try:
            img = decode_ppm(path.read_bytes())
        except FormatError as exc:
            raise FormatError(f"{path}: {exc}") from None
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise ManifestError(f"{manifest} row {lineno}: image size {img.shape} differs from {shape}")
        images.append(img)
        labels.append(int(label))
        domains.append(domain)
        splits.append(split)
    if not images:
        raise ManifestError(f"{manifest}: no samples")
    return Dataset(np.stack(images), np.array(labels), np.array(domains, dtype=object),
                   np.array(splits, dtype=object))


def patch_energy(images, patch=None):
    """Max over square windows of the mean high-pass energy (grayscale).

    A cheap hand-made detector feature: artifact patches carry more
    high-frequency energy than the smooth blob around them.
    """
    images = np.atleast_3d(np.asarray(images, dtype=np.float64))
    if images.ndim == 3:
        images = images[None]
    gray = images.mean(axis=3)
    blur = gray.copy()
    blur[:, 1:-1, 1:-1] = sum(gray[:, 1 + dy:gray.shape[1] - 1 + dy, 1 + dx:gray.shape[2] - 1 + dx]
                              for dy in (-1, 0, 1) for dx in (-1, 0, 1)) / 9.0
    energy = (gray - blur) ** 2
    ps = patch or images.shape[2] // 4
    # summed-area table for window means
    sat = np.pad(energy.cumsum(1).cumsum(2), ((0, 0), (1, 0), (1, 0)))
    win = sat[:, ps:, ps:] - sat[:, :-ps, ps:] - sat[:, ps:, :-ps] + sat[:, :-ps, :-ps]
    return win.reshape(len(images), -1).max(axis=1) / (ps * ps)
