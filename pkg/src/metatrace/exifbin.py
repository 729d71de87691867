"""Exif parsing, acquisition-label binning, and photographer-disjoint splits.

Binning configs are data: each acquisition family ships a versioned JSON
config enumerating canonical class values (matched on canonical string or
numerically with relative tolerance 1e-3) or numeric intervals. The split
builder enforces photographer disjointness between train/val and test, with
balanced undersampling for the large families and the 4:1 protocol for the
camera-model families.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

from metatrace.coredata import SampleRecord
from metatrace.labels import (
    ACQUISITION_FAMILIES,
    FAMILY_CLASS_COUNTS,
    NONSMART_MAKERS,
    SMART_MAKERS,
    builtin_space,
)
from metatrace.seeding import derive_rng

NUMERIC_REL_TOL = 1e-3

# Default split-protocol thresholds.
LARGE_FAMILY_MIN_IMAGES = 5000
LARGE_FAMILY_TEST_PER_CLASS = 500
LARGE_FAMILY_VAL_PER_CLASS = 200
MODEL_FAMILY_MIN_IMAGES = 500
MODEL_FAMILY_SAMPLE_PER_CLASS = 500
MODEL_FAMILY_TRAIN_TEST_RATIO = 4  # 4:1 train:test
MODEL_FAMILY_VAL_FRACTION = 0.2

MODEL_FAMILIES = ("model_all", "model_smart")

_FAMILY_TAGS = {
    "make": ("Make",),
    "model_all": ("Model",),
    "model_smart": ("Model",),
    "model_smart_vs_nonsmart": ("Make",),
    "exposure": ("ExposureTime",),
    "aperture": ("FNumber",),
    "iso": ("ISOSpeedRatings", "PhotographicSensitivity", "ISO"),
    "focal": ("FocalLength",),
}


class BinningError(ValueError):
    """Raised on malformed binning configs."""


class SplitError(RuntimeError):
    """Raised when a valid split cannot be constructed."""


@dataclass(frozen=True)
class Bin:
    """One class matcher: canonical strings + numeric values, or an interval."""

    name: str
    canonical: tuple[str, ...] = ()
    values: tuple[float, ...] = ()
    interval: tuple[float, float] | None = None

    def matches(self, raw: str, value: float | None) -> bool:
        if raw in self.canonical:
            return True
        if value is None:
            return False
        if self.interval is not None:
            lo, hi = self.interval
            return lo <= value < hi
        for v in self.values:
            denom = max(abs(v), 1e-12)
            if abs(value - v) / denom <= NUMERIC_REL_TOL:
                return True
        return False


@dataclass(frozen=True)
class BinningConfig:
    """Ordered class bins for one acquisition family."""

    family: str
    bins: tuple[Bin, ...]
    version: str = "1"

    def __post_init__(self):
        if self.family not in ACQUISITION_FAMILIES:
            raise BinningError(f"{self.family!r} is not an acquisition family")
        expected = FAMILY_CLASS_COUNTS[self.family]
        if len(self.bins) != expected:
            raise BinningError(
                f"family {self.family!r} requires {expected} bins, got {len(self.bins)}"
            )
        names = [b.name for b in self.bins]
        if len(set(names)) != len(names):
            raise BinningError("bin names must be unique")
        intervals = sorted(b.interval for b in self.bins if b.interval is not None)
        for (lo1, hi1), (lo2, hi2) in zip(intervals, intervals[1:]):
            if hi1 > lo2:
                raise BinningError(f"overlapping intervals {(lo1, hi1)} and {(lo2, hi2)}")

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(b.name for b in self.bins)


def _bins_from_json(obj: dict) -> BinningConfig:
    bins = tuple(
        Bin(
            name=b["name"],
            canonical=tuple(b.get("canonical", ())),
            values=tuple(b.get("values", ())),
            interval=tuple(b["interval"]) if "interval" in b else None,
        )
        for b in obj["bins"]
    )
    return BinningConfig(family=obj["family"], bins=bins, version=str(obj.get("version", "1")))


def load_binning_config(path) -> BinningConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return _bins_from_json(json.load(fh))


def default_binning_config(family: str) -> BinningConfig:
    """Load the shipped config for a numeric or categorical family."""
    if family not in ACQUISITION_FAMILIES:
        raise BinningError(f"{family!r} is not an acquisition family")
    ref = resources.files("metatrace.configs").joinpath(f"{family}.json")
    with ref.open("r", encoding="utf-8") as fh:
        return _bins_from_json(json.load(fh))


def parse_numeric(raw: str) -> float | None:
    """Parse an Exif numeric value: rational '1/250', decimal, or unit-suffixed."""
    text = raw.strip().lower()
    for suffix in ("mm", "sec", "s"):
        if text.endswith(suffix):
            text = text[: -len(suffix)].strip()
    try:
        if "/" in text:
            return float(Fraction(text))
        return float(text)
    except (ValueError, ZeroDivisionError):
        return None


def _raw_value(record: SampleRecord, family: str) -> str | None:
    if not record.exif:
        return None
    for tag in _FAMILY_TAGS[family]:
        if tag in record.exif:
            return record.exif[tag]
    return None


def derive_smart_vs_nonsmart(record: SampleRecord) -> str | None:
    """Classify by maker allowlists; None when the maker is in neither list."""
    raw = _raw_value(record, "model_smart_vs_nonsmart")
    if raw is None:
        return None
    make = raw.strip().lower()
    if any(maker.lower() in make for maker in SMART_MAKERS):
        return "smart"
    if any(maker.lower() in make for maker in NONSMART_MAKERS):
        return "non-smart"
    return None


def bin_exif(record: SampleRecord, config: BinningConfig) -> int | None:
    """Map a record's raw Exif value to its class index, or None if unbinned."""
    if config.family == "model_smart_vs_nonsmart":
        cls = derive_smart_vs_nonsmart(record)
        return None if cls is None else config.class_names.index(cls)
    raw = _raw_value(record, config.family)
    if raw is None:
        return None
    raw = raw.strip()
    if config.family in ("make", "model_all", "model_smart"):
        value = None
    else:
        value = parse_numeric(raw)
    for idx, b in enumerate(config.bins):
        if b.matches(raw, value):
            return idx
    return None


def read_exif_tags(path) -> dict[str, str]:
    """Best-effort Exif tag reader for JPEG files (stringified values)."""
    from PIL import Image
    from PIL.ExifTags import TAGS

    with Image.open(path) as img:
        raw = img.getexif()
        tags = {}
        for tag_id, value in raw.items():
            name = TAGS.get(tag_id, str(tag_id))
            tags[name] = str(value)
        return tags


@dataclass(frozen=True)
class AcquisitionSplit:
    """Photographer-disjoint train/val/test assignment for one family."""

    family: str
    train: tuple[tuple[str, int], ...]
    val: tuple[tuple[str, int], ...]
    test: tuple[tuple[str, int], ...]
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "train": [list(t) for t in self.train],
            "val": [list(t) for t in self.val],
            "test": [list(t) for t in self.test],
            "provenance": self.provenance,
        }


def _sorted_sample(pool: list[str], k: int, rng) -> list[str]:
    pool = sorted(pool)
    idx = rng.choice(len(pool), size=k, replace=False)
    return [pool[i] for i in sorted(idx)]


def _group_by_photographer(binned):
    by_photo: dict[str, list[tuple[str, int]]] = {}
    for sid, cls, photo in binned:
        by_photo.setdefault(photo, []).append((sid, cls))
    return by_photo


def build_acquisition_split(
    records: list[SampleRecord],
    family: str,
    config: BinningConfig | None = None,
    seed: int = 0,
    min_class_images: int | None = None,
    test_per_class: int | None = None,
    val_per_class: int | None = None,
) -> AcquisitionSplit:
    """Construct a balanced, photographer-disjoint split for a family.

    Large families: classes with >= 5,000 binned images are retained; whole
    photographers are greedily assigned to the test side until every class
    can fill 500 test images; validation takes 200 per class from the rest,
    and train is undersampled to the minority class. Model families use the
    500-image 4:1 protocol instead. Raises SplitError when the constraints
    are unsatisfiable, naming the blocking class.
    """
    if config is None:
        config = default_binning_config(family)
    if config.family != family:
        raise BinningError(f"config family {config.family!r} != {family!r}")

    dropped = {"no_photographer": 0, "unbinned": 0}
    binned = []
    for rec in records:
        if rec.photographer_id is None:
            dropped["no_photographer"] += 1
            continue
        cls = bin_exif(rec, config)
        if cls is None:
            dropped["unbinned"] += 1
            continue
        binned.append((rec.sample_id, cls, rec.photographer_id))

    class_counts: dict[int, int] = {}
    for _, cls, _ in binned:
        class_counts[cls] = class_counts.get(cls, 0) + 1

    is_model_family = family in MODEL_FAMILIES
    if is_model_family:
        min_images = min_class_images or MODEL_FAMILY_MIN_IMAGES
    else:
        min_images = min_class_images or LARGE_FAMILY_MIN_IMAGES
    retained = sorted(c for c, cnt in class_counts.items() if cnt >= min_images)
    if not retained:
        raise SplitError(
            f"no class of family {family!r} has >= {min_images} binned images "
            f"(counts: { {config.class_names[c]: n for c, n in sorted(class_counts.items())} })"
        )
    retained_set = set(retained)
    binned = [(s, c, p) for s, c, p in binned if c in retained_set]

    if is_model_family:
        n_test = (
            test_per_class
            or MODEL_FAMILY_SAMPLE_PER_CLASS // (MODEL_FAMILY_TRAIN_TEST_RATIO + 1)
        )
        n_train_total = MODEL_FAMILY_SAMPLE_PER_CLASS - n_test
        n_val = int(round(n_train_total * MODEL_FAMILY_VAL_FRACTION))
        n_train = n_train_total - n_val
    else:
        n_test = test_per_class or LARGE_FAMILY_TEST_PER_CLASS
        n_val = val_per_class or LARGE_FAMILY_VAL_PER_CLASS
        n_train = None  # minority-class size, decided below

    by_photo = _group_by_photographer(binned)

    # Greedy: move whole photographers to the test side, class of largest
    # remaining need first, richest photographer in that class first.
    test_pool: dict[int, list[str]] = {c: [] for c in retained}
    test_photos: set[str] = set()
    photo_class_counts = {
        p: {c: sum(1 for _, cc in items if cc == c) for c in retained}
        for p, items in by_photo.items()
    }
    while True:
        needs = {c: n_test - len(test_pool[c]) for c in retained}
        pending = [c for c in retained if needs[c] > 0]
        if not pending:
            break
        target = max(pending, key=lambda c: (needs[c], -c))
        candidates = [
            p
            for p in by_photo
            if p not in test_photos and photo_class_counts[p][target] > 0
        ]
        if not candidates:
            raise SplitError(
                f"class {config.class_names[target]!r} cannot reach {n_test} "
                f"test images: all contributing photographers exhausted"
            )
        chosen = max(candidates, key=lambda p: (photo_class_counts[p][target], p))
        test_photos.add(chosen)
        for sid, cls in by_photo[chosen]:
            test_pool[cls].append(sid)

    test: list[tuple[str, int]] = []
    for c in retained:
        rng = derive_rng(seed, f"split-test:{family}", c)
        for sid in _sorted_sample(test_pool[c], n_test, rng):
            test.append((sid, c))

    # Remaining photographers feed train and validation.
    rest_pool: dict[int, list[str]] = {c: [] for c in retained}
    for p, items in by_photo.items():
        if p in test_photos:
            continue
        for sid, cls in items:
            rest_pool[cls].append(sid)

    val: list[tuple[str, int]] = []
    train_candidates: dict[int, list[str]] = {}
    for c in retained:
        if len(rest_pool[c]) < n_val + 1:
            raise SplitError(
                f"class {config.class_names[c]!r} has only {len(rest_pool[c])} "
                f"non-test images; needs > {n_val} for validation "
                f"(blocking photographers moved to test: {sorted(test_photos)[:10]})"
            )
        rng = derive_rng(seed, f"split-val:{family}", c)
        chosen = set(_sorted_sample(rest_pool[c], n_val, rng))
        for sid in sorted(chosen):
            val.append((sid, c))
        train_candidates[c] = sorted(set(rest_pool[c]) - chosen)

    if is_model_family:
        per_class_train = n_train
        short = [
            config.class_names[c]
            for c in retained
            if len(train_candidates[c]) < per_class_train
        ]
        if short:
            raise SplitError(
                f"classes {short} cannot fill {per_class_train} train images "
                f"after photographer assignment"
            )
    else:
        per_class_train = min(len(train_candidates[c]) for c in retained)
        if per_class_train == 0:
            empty = [
                config.class_names[c] for c in retained if not train_candidates[c]
            ]
            raise SplitError(f"classes {empty} have no train images left")

    train: list[tuple[str, int]] = []
    for c in retained:
        rng = derive_rng(seed, f"split-train:{family}", c)
        for sid in _sorted_sample(train_candidates[c], per_class_train, rng):
            train.append((sid, c))

    provenance = {
        "seed": seed,
        "family": family,
        "config_version": config.version,
        "rule": "model-4to1" if is_model_family else "large-balanced",
        "retained_classes": [config.class_names[c] for c in retained],
        "per_class_counts": {
            config.class_names[c]: class_counts[c] for c in retained
        },
        "dropped": dropped,
        "test_photographers": len(test_photos),
        "train_per_class": per_class_train,
        "val_per_class": n_val,
        "test_per_class": n_test,
    }
    return AcquisitionSplit(
        family=family,
        train=tuple(train),
        val=tuple(val),
        test=tuple(test),
        provenance=provenance,
    )
