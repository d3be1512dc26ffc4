"""Preprocessing: class balancing, grayscale, resize, [0, 1] scaling, splits.

Everything here is a pure function of its inputs and seed. Balancing runs
before splitting, so an oversampled copy and its original may end up in
different splits; :func:`duplicate_leakage` counts how often that happens.
"""

from __future__ import annotations

import enum
import json
import math
import statistics
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset_ingest import DatasetManifest, RawImage, SampleRef, load_image
from .errors import (
    ChannelPolicyError,
    ConfigError,
    EmptyClassError,
    InfeasibleOverSamplingError,
    InfeasibleUnderSamplingError,
    StratificationError,
)

SPLIT_NAMES = ("train", "val", "test")
GRAY_WEIGHTS = (0.299, 0.587, 0.114)


class BalanceStrategy(str, enum.Enum):
    NONE = "none"
    UNDER = "under"
    OVER = "over"
    HYBRID_TO_MEDIAN = "hybrid_to_median"

    @classmethod
    def parse(cls, value) -> "BalanceStrategy":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            return cls[str(value).upper()]


class ChannelPolicy(str, enum.Enum):
    REPLICATE_GRAY_TO_3 = "replicate_gray_to_3"


@dataclass(frozen=True)
class PreprocessConfig:
    balance_strategy: BalanceStrategy = BalanceStrategy.HYBRID_TO_MEDIAN
    target_count: int | None = None
    image_size: tuple[int, int] = (224, 224)
    channel_policy: ChannelPolicy = ChannelPolicy.REPLICATE_GRAY_TO_3
    split_ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "balance_strategy", BalanceStrategy.parse(self.balance_strategy))
        object.__setattr__(self, "channel_policy", ChannelPolicy(self.channel_policy))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        object.__setattr__(self, "split_ratios", tuple(float(v) for v in self.split_ratios))
        validate_ratios(self.split_ratios)
        if len(self.image_size) != 2 or min(self.image_size) < 8:
            raise ConfigError(f"image_size components must be >= 8, got {self.image_size}")
        if self.target_count is not None and self.target_count < 1:
            raise ConfigError("target_count must be >= 1")


def validate_ratios(ratios: Sequence[float]) -> None:
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigError(f"split ratios must be three positive numbers, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)!r}")


# -- class imbalance --------------------------------------------------------

def default_target(counts: Sequence[int], strategy: BalanceStrategy) -> int:
    if strategy is BalanceStrategy.UNDER:
        return min(counts)
    if strategy is BalanceStrategy.OVER:
        return max(counts)
    # Even class counts can give a half-integer median; round it down.
    return math.floor(statistics.median(counts))


def balance_classes(
    manifest: DatasetManifest,
    balance_strategy=BalanceStrategy.HYBRID_TO_MEDIAN,
    target_count: int | None = None,
    seed: int = 0,
) -> DatasetManifest:
    """Resample every class to exactly ``target_count`` samples.

    Under-sampling keeps a seeded subset in original order; over-sampling
    appends seeded draws (with replacement) as copies tagged with
    ``duplicate_of``. Without a target, UNDER uses the smallest class,
    OVER the largest and HYBRID_TO_MEDIAN the (floored) median.
    """
    strategy = BalanceStrategy.parse(balance_strategy)
    if strategy is BalanceStrategy.NONE:
        return manifest
    groups = manifest.by_class()
    for name, g in zip(manifest.label_map.names, groups):
        if not g:
            raise EmptyClassError(name)
    counts = [len(g) for g in groups]
    target = default_target(counts, strategy) if target_count is None else int(target_count)
    if target < 1:
        raise ValueError("target_count must be >= 1")
    if strategy is BalanceStrategy.UNDER and target > min(counts):
        raise InfeasibleUnderSamplingError(
            f"cannot under-sample to {target}: smallest class has {min(counts)} samples"
        )
    if strategy is BalanceStrategy.OVER and target < max(counts):
        raise InfeasibleOverSamplingError(
            f"cannot over-sample to {target}: largest class has {max(counts)} samples"
        )

    rng = np.random.default_rng(seed)
    out: list[SampleRef] = []
    for g in groups:
        n = len(g)
        if n > target:
            keep = np.sort(rng.choice(n, size=target, replace=False))
            out.extend(g[i] for i in keep)
        elif n < target:
            out.extend(g)
            draws = rng.choice(n, size=target - n, replace=True)
            copies: dict[str, int] = {}
            for s in g:
                copies[s.key] = max(copies.get(s.key, 0), s.copy_index)
            for i in draws:
                src = g[int(i)]
                copies[src.key] += 1
                out.append(replace(src, duplicate_of=src.key, copy_index=copies[src.key]))
        else:
            out.extend(g)
    return manifest.with_samples(out)


# -- per-image transforms ---------------------------------------------------

def to_grayscale(raw: RawImage) -> RawImage:
    if raw.channels == 1:
        return raw
    rgb = raw.pixels.astype(np.float64)
    y = GRAY_WEIGHTS[0] * rgb[..., 0] + GRAY_WEIGHTS[1] * rgb[..., 1] + GRAY_WEIGHTS[2] * rgb[..., 2]
    y = np.floor(y + 0.5)
    return RawImage(np.clip(y, 0, 255).astype(np.uint8)[..., None])


def _sample_grid(n_in: int, n_out: int):
    # Corner-aligned sampling: first and last output pixels hit the input corners.
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.floor(pos).astype(np.intp)
    lo = np.minimum(lo, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resize(image: RawImage, h: int, w: int) -> RawImage:
    """Bilinear resize to exactly ``(h, w)`` without preserving aspect.

    Sampling is corner-aligned, so the four corner pixels are reproduced
    exactly. Pipeline sizes below 8 are rejected by :class:`PreprocessConfig`.
    """
    if h < 1 or w < 1:
        raise ValueError(f"target size must be positive, got {(h, w)}")
    src = image.pixels
    if src.shape[:2] == (h, w):
        return image
    y0, y1, fy = _sample_grid(src.shape[0], h)
    x0, x1, fx = _sample_grid(src.shape[1], w)
    a = src.astype(np.float64)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bottom = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return RawImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def normalize(image) -> np.ndarray:
    pixels = image.pixels if isinstance(image, RawImage) else np.asarray(image)
    return pixels.astype(np.float32) / np.float32(255.0)


def replicate_channels(gray: np.ndarray) -> np.ndarray:
    """(1, H, W) -> (3, H, W) with identical channels."""
    gray = np.asarray(gray)
    if gray.ndim != 3 or gray.shape[0] != 1:
        raise ChannelPolicyError(f"expected a single-channel (1, H, W) array, got {gray.shape}")
    return np.repeat(gray, 3, axis=0)


@dataclass(frozen=True)
class PreprocessedSample:
    tensor: np.ndarray
    class_index: int
    origin: SampleRef
    duplicate_of: str | None = None


def preprocess_array(raw: RawImage, image_size: tuple[int, int] = (224, 224)) -> np.ndarray:
    gray = to_grayscale(raw)
    gray = resize(gray, *image_size)
    scaled = normalize(gray)  # (H, W, 1)
    return replicate_channels(np.transpose(scaled, (2, 0, 1)))


def preprocess_sample(sample_ref: SampleRef, config: PreprocessConfig | None = None) -> PreprocessedSample:
    config = config or PreprocessConfig()
    tensor = preprocess_array(load_image(sample_ref), config.image_size)
    return PreprocessedSample(tensor, sample_ref.class_index, sample_ref, sample_ref.duplicate_of)


# -- splitting --------------------------------------------------------------

@dataclass(frozen=True)
class SplitAssignment:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "ratios": dict(zip(SPLIT_NAMES, self.ratios)),
            "train": list(self.train),
            "val": list(self.val),
            "test": list(self.test),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SplitAssignment":
        r = data["ratios"]
        return cls(
            tuple(data["train"]),
            tuple(data["val"]),
            tuple(data["test"]),
            int(data["seed"]),
            tuple(float(r[k]) for k in SPLIT_NAMES),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SplitAssignment":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Floors for train and val; test takes the remainder.

    Ratios are converted to exact fractions first so that products like
    0.7 * 70 floor to 49 rather than 48.
    """
    r_train = Fraction(str(ratios[0]))
    r_val = Fraction(str(ratios[1]))
    n_train = math.floor(r_train * n)
    n_val = math.floor(r_val * n)
    return n_train, n_val, n - n_train - n_val


def split_dataset(manifest: DatasetManifest, split_ratios=(0.70, 0.15, 0.15), seed: int = 0) -> SplitAssignment:
    """Stratified split: per class, a seeded shuffle cut by :func:`split_sizes`."""
    ratios = tuple(float(r) for r in split_ratios)
    validate_ratios(ratios)
    groups = manifest.by_class()
    for name, g in zip(manifest.label_map.names, groups):
        if len(g) < 3:
            raise StratificationError(f"class {name!r} has {len(g)} samples; need >= 3 to stratify")
    rng = np.random.default_rng(seed)
    parts: dict[str, list[str]] = {k: [] for k in SPLIT_NAMES}
    for g in groups:
        order = rng.permutation(len(g))
        n_train, n_val, _ = split_sizes(len(g), ratios)
        ids = [g[i].sample_id for i in order]
        parts["train"].extend(ids[:n_train])
        parts["val"].extend(ids[n_train:n_train + n_val])
        parts["test"].extend(ids[n_train + n_val:])
    return SplitAssignment(tuple(parts["train"]), tuple(parts["val"]), tuple(parts["test"]), seed, ratios)


def resolve_split(manifest: DatasetManifest, assignment: SplitAssignment) -> dict[str, list[SampleRef]]:
    lookup = {s.sample_id: s for s in manifest.samples}
    try:
        return {name: [lookup[i] for i in getattr(assignment, name)] for name in SPLIT_NAMES}
    except KeyError as exc:
        raise ValueError(f"split refers to unknown sample {exc.args[0]!r}") from None


def duplicate_leakage(manifest: DatasetManifest, assignment: SplitAssignment) -> int:
    """Number of source images whose copies land in more than one split."""
    splits = resolve_split(manifest, assignment)
    seen: dict[str, set[str]] = {}
    for name, refs in splits.items():
        for ref in refs:
            seen.setdefault(ref.key, set()).add(name)
    return sum(1 for names in seen.values() if len(names) > 1)


def preprocess_refs(refs: Sequence[SampleRef], config: PreprocessConfig | None = None, workers: int | None = None):
    """Stack preprocessed samples into ``(X, y)``; X is (N, 3, H, W) float32.

    Per-sample work may run on a thread pool; rows always follow ``refs``.
    """
    config = config or PreprocessConfig()
    h, w = config.image_size
    x = np.empty((len(refs), 3, h, w), dtype=np.float32)
    y = np.fromiter((r.class_index for r in refs), dtype=np.int64, count=len(refs))

    def fill(i):
        x[i] = preprocess_sample(refs[i], config).tensor

    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(len(refs))))
    else:
        for i in range(len(refs)):
            fill(i)
    return x, y
