"""Dataset discovery, label maps, manifests and synthetic data generation.

Datasets are laid out one folder per class::

    <root>/<class_name>/<image_file>

Class indices are assigned by sorting folder names, so two machines that
see the same folders always agree on the label map.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, ImageDraw, UnidentifiedImageError

from .errors import (
    ClassCountMismatchError,
    DatasetIOError,
    DuplicateClassError,
    EmptyClassError,
    EmptyDatasetError,
    ImageDecodeError,
)

logger = logging.getLogger(__name__)


class DatasetKind(str, enum.Enum):
    ARSL2018 = "arsl2018"
    AASL = "aasl"
    SYNTHETIC = "synthetic"

    @classmethod
    def parse(cls, value: "str | DatasetKind") -> "DatasetKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            return cls[str(value).upper()]


# Class counts of the two public datasets.
EXPECTED_CLASSES = {DatasetKind.ARSL2018: 32, DatasetKind.AASL: 31}
# Image counts of the public releases; used only to warn on partial copies.
EXPECTED_SAMPLES = {DatasetKind.ARSL2018: 54_049, DatasetKind.AASL: 7_857}


@dataclass(frozen=True)
class LabelMap:
    dataset_kind: DatasetKind
    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            dup = sorted({n for n in self.names if self.names.count(n) > 1})
            raise DuplicateClassError(f"duplicate class names: {dup}")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(self.names)})

    @property
    def num_classes(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        return self._index[name]

    def name_of(self, index: int) -> str:
        return self.names[index]

    def to_dict(self) -> dict:
        return {"dataset_kind": self.dataset_kind.value, "names": list(self.names)}

    @classmethod
    def from_dict(cls, data: dict) -> "LabelMap":
        return cls(DatasetKind.parse(data["dataset_kind"]), tuple(data["names"]))


def build_label_map(dataset_kind, class_names: Iterable[str] | None = None) -> LabelMap:
    """Build a contiguous, lexicographically ordered label map.

    For the real datasets ``class_names`` are the folder names found on
    disk and their count is checked against the published class count.
    """
    kind = DatasetKind.parse(dataset_kind)
    if class_names is None:
        raise ValueError("class_names are required (folder names for real datasets)")
    names = list(class_names)
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise DuplicateClassError(f"duplicate class names: {dup}")
    if kind in EXPECTED_CLASSES:
        if len(names) != EXPECTED_CLASSES[kind]:
            raise ClassCountMismatchError(EXPECTED_CLASSES[kind], len(names))
    elif len(names) < 2:
        raise ValueError(f"need at least 2 classes, got {len(names)}")
    return LabelMap(kind, tuple(sorted(names)))


@dataclass(frozen=True)
class SampleRef:
    """One labelled image.

    ``key`` is the path relative to the dataset root (``class/file``), which
    is what orders and identifies samples. Oversampled copies share the
    original's path and key but get ``copy_index > 0`` and ``duplicate_of``.
    """

    path: Path
    key: str
    class_name: str
    class_index: int
    source_id: str = ""
    duplicate_of: str | None = None
    copy_index: int = 0

    @property
    def sample_id(self) -> str:
        if self.copy_index == 0:
            return self.key
        return f"{self.key}#dup{self.copy_index}"

    def to_dict(self) -> dict:
        d = {
            "path": self.key,
            "class_name": self.class_name,
            "class_index": self.class_index,
        }
        if self.source_id:
            d["source_id"] = self.source_id
        if self.copy_index:
            d["duplicate_of"] = self.duplicate_of
            d["copy_index"] = self.copy_index
        return d

    @classmethod
    def from_dict(cls, data: dict, root: Path) -> "SampleRef":
        return cls(
            path=Path(root) / data["path"],
            key=data["path"],
            class_name=data["class_name"],
            class_index=int(data["class_index"]),
            source_id=data.get("source_id", ""),
            duplicate_of=data.get("duplicate_of"),
            copy_index=int(data.get("copy_index", 0)),
        )


def manifest_checksum(samples: Sequence[SampleRef]) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(f"{s.sample_id}\t{s.class_name}\t{s.class_index}\n".encode("utf-8"))
    return h.hexdigest()


@dataclass(frozen=True)
class DatasetManifest:
    dataset_kind: DatasetKind
    root: Path
    label_map: LabelMap
    samples: tuple[SampleRef, ...]
    skipped: tuple[tuple[str, str], ...] = ()
    class_counts: tuple[int, ...] = field(init=False)
    checksum: str = field(init=False)

    def __post_init__(self):
        counts = [0] * self.label_map.num_classes
        for s in self.samples:
            if self.label_map.index_of(s.class_name) != s.class_index:
                raise ValueError(f"{s.key}: class index does not match label map")
            counts[s.class_index] += 1
        object.__setattr__(self, "class_counts", tuple(counts))
        object.__setattr__(self, "checksum", manifest_checksum(self.samples))

    def __len__(self):
        return len(self.samples)

    def with_samples(self, samples: Iterable[SampleRef]) -> "DatasetManifest":
        return replace(self, samples=tuple(samples))

    def by_class(self) -> list[list[SampleRef]]:
        groups: list[list[SampleRef]] = [[] for _ in self.label_map.names]
        for s in self.samples:
            groups[s.class_index].append(s)
        return groups

    def to_dict(self) -> dict:
        return {
            "dataset_kind": self.dataset_kind.value,
            "root": str(self.root),
            "label_map": self.label_map.to_dict(),
            "samples": [s.to_dict() for s in self.samples],
            "class_counts": list(self.class_counts),
            "checksum": self.checksum,
            "skipped": [{"path": p, "reason": r} for p, r in self.skipped],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        root = Path(data["root"])
        m = cls(
            dataset_kind=DatasetKind.parse(data["dataset_kind"]),
            root=root,
            label_map=LabelMap.from_dict(data["label_map"]),
            samples=tuple(SampleRef.from_dict(s, root) for s in data["samples"]),
            skipped=tuple((s["path"], s["reason"]) for s in data.get("skipped", [])),
        )
        if "checksum" in data and data["checksum"] != m.checksum:
            raise ValueError("manifest checksum does not match its sample list")
        return m

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class RawImage:
    """Decoded pixels, ``uint8`` with shape (H, W, K) and K in {1, 3}."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 3 or p.shape[2] not in (1, 3) or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"invalid raw image shape {p.shape}")
        if p.dtype != np.uint8:
            if p.size and (p.min() < 0 or p.max() > 255):
                raise ValueError("raw image values must lie in [0, 255]")
            p = p.astype(np.uint8)
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def load_image(sample) -> RawImage:
    """Decode a ``SampleRef`` (or a plain path) to a :class:`RawImage`."""
    path = Path(sample.path if isinstance(sample, SampleRef) else sample)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "RGB"):
                pass
            elif im.mode in ("1", "LA", "I", "I;16", "F"):
                im = im.convert("L")
            else:
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError, ValueError, UnidentifiedImageError, Image.DecompressionBombError) as exc:
        raise ImageDecodeError(path, str(exc)) from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return RawImage(arr)


def _try_decode(path: Path) -> str | None:
    try:
        load_image(path)
    except ImageDecodeError as exc:
        return str(exc)
    return None


def scan_dataset(root_path, dataset_kind, workers: int | None = None) -> DatasetManifest:
    """Catalogue every decodable image under ``root_path``.

    Undecodable files are left out and listed in ``manifest.skipped``.
    Decoding may run on a thread pool; the result order is always the
    lexicographic order of relative paths.
    """
    kind = DatasetKind.parse(dataset_kind)
    root = Path(root_path).resolve()
    if not root.is_dir():
        raise EmptyDatasetError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not class_dirs:
        raise EmptyDatasetError(f"no class folders under {root}")
    label_map = build_label_map(kind, class_dirs)

    candidates: list[tuple[str, str]] = []
    for name in label_map.names:
        files = sorted(
            f.name for f in (root / name).iterdir() if f.is_file() and not f.name.startswith(".")
        )
        if not files:
            raise EmptyClassError(name)
        candidates.extend((name, f) for f in files)
    if not candidates:
        raise EmptyDatasetError(f"no files under {root}")

    paths = [root / c / f for c, f in candidates]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            failures = list(pool.map(_try_decode, paths))
    else:
        failures = [_try_decode(p) for p in paths]

    samples, skipped = [], []
    for (cls, fname), path, failure in zip(candidates, paths, failures):
        key = f"{cls}/{fname}"
        if failure is not None:
            skipped.append((key, failure))
            logger.warning("skipping %s", failure)
            continue
        samples.append(SampleRef(path, key, cls, label_map.index_of(cls)))
    samples.sort(key=lambda s: s.key)

    present = {s.class_name for s in samples}
    for name in label_map.names:
        if name not in present:
            raise EmptyClassError(name)

    expected = EXPECTED_SAMPLES.get(kind)
    if expected is not None and len(samples) != expected:
        logger.warning("%s: found %d images, the public release has %d", kind.value, len(samples), expected)
    return DatasetManifest(kind, root, label_map, tuple(samples), tuple(skipped))


# -- synthetic data ---------------------------------------------------------

def _glyph_strokes(class_index: int) -> list[tuple[float, float, float, float]]:
    # Per-class structure is independent of the sample seed.
    rng = np.random.default_rng([class_index, 0x5A])
    pts = rng.uniform(0.15, 0.85, size=(4, 2))
    return [(pts[i, 0], pts[i, 1], pts[i + 1, 0], pts[i + 1, 1]) for i in range(3)]


def render_glyph(class_index: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Render one noisy sample of the glyph for ``class_index``."""
    background = int(rng.integers(10, 60))
    foreground = int(rng.integers(170, 250))
    max_shift = max(1, size // 10)
    dx, dy = rng.integers(-max_shift, max_shift + 1, size=2)

    canvas = Image.new("L", (size, size), color=background)
    draw = ImageDraw.Draw(canvas)
    width = max(2, size // 12)
    for x0, y0, x1, y1 in _glyph_strokes(class_index):
        draw.line(
            [(x0 * size + dx, y0 * size + dy), (x1 * size + dx, y1 * size + dy)],
            fill=foreground,
            width=width,
        )
    arr = np.asarray(canvas, dtype=np.float64)
    arr = arr + rng.normal(0.0, 12.0, size=arr.shape)
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def generate_synthetic_dataset(
    out_dir,
    num_classes: int,
    per_class_counts: int | Sequence[int],
    image_size: int = 64,
    seed: int = 0,
    class_names: Sequence[str] | None = None,
) -> DatasetManifest:
    """Write a class-per-folder dataset of parametric grayscale glyphs.

    Each class is a fixed three-stroke polyline; samples add position,
    brightness and pixel-noise jitter drawn from ``seed``. Output files are
    byte-identical for identical arguments.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if isinstance(per_class_counts, int):
        counts = [per_class_counts] * num_classes
    else:
        counts = [int(c) for c in per_class_counts]
    if len(counts) != num_classes:
        raise ValueError("per_class_counts length must equal num_classes")
    if min(counts) < 1:
        raise ValueError("every class needs at least one sample")
    if image_size < 8:
        raise ValueError("image_size must be >= 8")
    names = list(class_names) if class_names is not None else [f"class_{i:02d}" for i in range(num_classes)]
    label_map = build_label_map(DatasetKind.SYNTHETIC, names)

    out = Path(out_dir)
    try:
        if out.exists():
            stray = [p.name for p in out.iterdir() if p.name not in label_map.names]
            if stray:
                raise DatasetIOError(f"{out} already holds unrelated entries: {sorted(stray)[:5]}")
        out.mkdir(parents=True, exist_ok=True)
        for i, name in enumerate(label_map.names):
            cdir = out / name
            if cdir.exists():
                shutil.rmtree(cdir)
            cdir.mkdir()
            for j in range(counts[i]):
                rng = np.random.default_rng([seed, i, j])
                pixels = render_glyph(i, image_size, rng)
                Image.fromarray(pixels).save(cdir / f"{name}_{j:05d}.png", optimize=False)
    except DatasetIOError:
        raise
    except OSError as exc:
        raise DatasetIOError(f"cannot write synthetic dataset to {out}: {exc}") from exc
    return scan_dataset(out, DatasetKind.SYNTHETIC, workers=min(8, os.cpu_count() or 1))
