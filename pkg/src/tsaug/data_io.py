"""Dataset files, manifests and synthetic generators.

CSV files are long form, one row per time step::

    series_id,label,t,ch0,ch1,...

sorted by ``(series_id, t)``. Floats are written with ``%.17g`` and read with
pandas' round-trip parser, so a save/load cycle reproduces every double
exactly. Lines starting with ``#`` are header comments.

A manifest is a small JSON document (``"version": 1``) naming the three split
files, the declared shape and the class count.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError, DataFormatError, ValidationError
from .series_core import Dataset, RngStream, TimeSeries, apply_zscore, derive_stream, fit_zscore

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
FLOAT_FORMAT = "%.17g"
SPLIT_FRACTIONS = (0.6, 0.2, 0.2)
SINE_FREQUENCIES = (2.0, 5.0)
SIGN_OFFSET = 0.5


@dataclass(frozen=True)
class DatasetManifest:
    """Declared shape and file locations of a train/val/test dataset.

    Relative file paths are resolved against ``base_dir``.
    """

    name: str
    length: int
    channels: int
    num_classes: int
    train: Path
    val: Path
    test: Path
    normalize: bool = False
    base_dir: Path = Path(".")

    def path(self, split: str) -> Path:
        raw = {"train": self.train, "val": self.val, "test": self.test}[split]
        return raw if raw.is_absolute() else self.base_dir / raw

    def to_dict(self) -> Dict[str, object]:
        return {
            "version": MANIFEST_VERSION,
            "name": self.name,
            "length": self.length,
            "channels": self.channels,
            "num_classes": self.num_classes,
            "train": self.train.as_posix(),
            "val": self.val.as_posix(),
            "test": self.test.as_posix(),
            "normalize": self.normalize,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object], base_dir: Path = Path(".")) -> "DatasetManifest":
        version = int(data.get("version", MANIFEST_VERSION))
        if version != MANIFEST_VERSION:
            raise ConfigError(f"unsupported manifest version {version}")
        try:
            manifest = cls(
                name=str(data.get("name", "dataset")),
                length=int(data["length"]),
                channels=int(data["channels"]),
                num_classes=int(data["num_classes"]),
                train=Path(str(data["train"])),
                val=Path(str(data["val"])),
                test=Path(str(data["test"])),
                normalize=bool(data.get("normalize", False)),
                base_dir=base_dir,
            )
        except KeyError as exc:
            raise ConfigError(f"manifest is missing field {exc.args[0]!r}") from exc
        if manifest.length < 2 or manifest.channels < 1 or manifest.num_classes < 1:
            raise ConfigError("manifest needs length >= 2, channels >= 1 and num_classes >= 1")
        return manifest


def load_manifest(path: Path) -> DatasetManifest:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"manifest {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {path} is not valid JSON: {exc}") from exc
    return DatasetManifest.from_dict(raw, base_dir=path.parent)


def write_manifest(manifest: DatasetManifest, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        json.dump(manifest.to_dict(), handle, indent=2)
        handle.write("\n")


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def dataset_frame(d: Dataset) -> pd.DataFrame:
    """Long-form frame of ``d``; series ids are zero-padded sample indices."""
    if not len(d):
        return pd.DataFrame(columns=["series_id", "label", "t", "ch0"])
    length, channels = d.shape
    count = len(d)
    width = max(5, len(str(count - 1)))
    frame = pd.DataFrame(
        {
            "series_id": np.repeat([f"{i:0{width}d}" for i in range(count)], length),
            "label": np.repeat(d.labels, length),
            "t": np.tile(np.arange(length), count),
        }
    )
    flat = d.values.reshape(count * length, channels)
    for c in range(channels):
        frame[f"ch{c}"] = flat[:, c]
    return frame


def write_csv_table(frame: pd.DataFrame, path: Path, comments: Iterable[str] = ()) -> None:
    """Write ``frame`` with ``# ...`` header comments and round-trip-exact floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        for line in comments:
            handle.write(f"# {line}\n")
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def save_dataset_csv(d: Dataset, path: Path, comments: Iterable[str] = ()) -> None:
    write_csv_table(dataset_frame(d), path, comments)


def _channel_columns(columns: List[str]) -> List[str]:
    channels = [name for name in columns if name.startswith("ch")]
    expected = [f"ch{c}" for c in range(len(channels))]
    if not channels or channels != expected:
        raise DataFormatError(f"expected channel columns ch0..ch{{C-1}} in order, got {channels}")
    return channels


def read_dataset_csv(
    path: Path,
    *,
    num_classes: Optional[int] = None,
    length: Optional[int] = None,
    channels: Optional[int] = None,
    split_tag: str = "train",
) -> Dataset:
    """Parse a long-form CSV into a :class:`Dataset`.

    Args:
        path: CSV file.
        num_classes: Declared class count; inferred as ``max(label) + 1`` if omitted.
        length: Declared series length, checked per series when given.
        channels: Declared channel count, checked when given.
        split_tag: Tag of the returned dataset.

    Raises:
        DataFormatError: On missing columns, non-numeric cells, gaps in ``t``,
            inconsistent labels, length mismatches or labels outside the
            declared classes. Row numbers count data rows from 1.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, comment="#", float_precision="round_trip", dtype={"series_id": str})
    except FileNotFoundError as exc:
        raise DataFormatError(f"{path} does not exist") from exc
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataFormatError(f"{path} is not a readable CSV: {exc}") from exc
    missing = [name for name in ("series_id", "label", "t") if name not in frame.columns]
    if missing:
        raise DataFormatError(f"{path} is missing columns {missing}")
    channel_columns = _channel_columns(list(frame.columns))
    if channels is not None and len(channel_columns) != channels:
        raise DataFormatError(f"{path} has {len(channel_columns)} channels, expected {channels}")

    numeric = frame[["label", "t", *channel_columns]].apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1) | ~np.isfinite(numeric.to_numpy(dtype=np.float64)).all(axis=1)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataFormatError("non-numeric or non-finite value", row=row + 1, series_id=frame["series_id"].iloc[row])
    if frame["series_id"].isna().any():
        row = int(np.flatnonzero(frame["series_id"].isna().to_numpy())[0])
        raise DataFormatError("missing series_id", row=row + 1)

    samples: List[TimeSeries] = []
    declared = num_classes
    for series_id, rows in numeric.groupby(frame["series_id"], sort=False):
        rows = rows.sort_values("t", kind="stable")
        first_row = int(rows.index[0]) + 1
        steps = rows["t"].to_numpy()
        if not np.array_equal(steps, np.arange(len(steps))):
            raise DataFormatError("time steps must run 0..T-1 without gaps", row=first_row, series_id=series_id)
        if length is not None and len(steps) != length:
            raise DataFormatError(
                f"series has {len(steps)} steps, expected {length}", row=first_row, series_id=series_id
            )
        labels = rows["label"].unique()
        if len(labels) != 1 or labels[0] != int(labels[0]) or labels[0] < 0:
            raise DataFormatError(f"invalid or inconsistent label {labels.tolist()}", row=first_row, series_id=series_id)
        label = int(labels[0])
        if declared is not None and label >= declared:
            raise DataFormatError(f"unknown label {label} (num_classes={declared})", row=first_row, series_id=series_id)
        try:
            samples.append(TimeSeries(values=rows[channel_columns].to_numpy(dtype=np.float64), label=label))
        except ValidationError as exc:
            raise DataFormatError(str(exc), row=first_row, series_id=series_id) from exc

    if declared is None:
        declared = max((s.label for s in samples), default=0) + 1
    try:
        return Dataset(samples=tuple(samples), num_classes=declared, split_tag=split_tag)
    except ValidationError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def load_dataset(manifest: DatasetManifest) -> Tuple[Dataset, Dataset, Dataset]:
    """Read the three splits; with ``normalize`` set, z-score with train statistics."""
    splits = tuple(
        read_dataset_csv(
            manifest.path(split),
            num_classes=manifest.num_classes,
            length=manifest.length,
            channels=manifest.channels,
            split_tag=split,
        )
        for split in ("train", "val", "test")
    )
    train, val, test = splits
    if manifest.normalize:
        stats = fit_zscore(train)
        train, val, test = (apply_zscore(d, stats) for d in (train, val, test))
    logger.info("loaded %s: %d/%d/%d series", manifest.name, len(train), len(val), len(test))
    return train, val, test


def save_dataset(
    out_dir: Path,
    name: str,
    splits: Tuple[Dataset, Dataset, Dataset],
    *,
    normalize: bool = False,
    comments: Iterable[str] = (),
) -> Path:
    """Write ``<name>_{train,val,test}.csv`` and ``<name>.json`` into ``out_dir``; returns the manifest path."""
    out_dir = Path(out_dir)
    comments = tuple(comments)
    train = splits[0]
    length, channels = train.shape
    files = {}
    for split, d in zip(("train", "val", "test"), splits):
        filename = Path(f"{name}_{split}.csv")
        save_dataset_csv(d, out_dir / filename, comments)
        files[split] = filename
    manifest = DatasetManifest(
        name=name,
        length=length,
        channels=channels,
        num_classes=train.num_classes,
        normalize=normalize,
        base_dir=out_dir,
        **files,
    )
    manifest_path = out_dir / f"{name}.json"
    write_manifest(manifest, manifest_path)
    return manifest_path


# --------------------------------------------------------------------------
# Synthetic data
# --------------------------------------------------------------------------


class SyntheticKind(Enum):
    SINE = "sine-vs-frequency"
    TREND = "trend-vs-flat"
    SIGN = "sign-of-mean"

    @classmethod
    def parse(cls, name: str) -> "SyntheticKind":
        normalized = (name or "").strip().lower().replace("_", "-")
        aliases = {"sine": cls.SINE, "trend": cls.TREND, "sign": cls.SIGN}
        if normalized in aliases:
            return aliases[normalized]
        try:
            return cls(normalized)
        except ValueError as exc:
            known = ", ".join(kind.value for kind in cls)
            raise ValidationError(f"unknown generator {name!r}; expected one of {known}") from exc


@dataclass(frozen=True)
class SyntheticSpec:
    kind: SyntheticKind = SyntheticKind.SINE
    length: int = 64
    channels: int = 1
    samples_per_class: int = 100
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.length < 2 or self.channels < 1 or self.samples_per_class < 1:
            raise ValidationError("synthetic spec needs length >= 2, channels >= 1, samples_per_class >= 1")
        if not np.isfinite(self.noise) or self.noise < 0:
            raise ValidationError(f"noise must be >= 0, got {self.noise}")

    def to_dict(self) -> Dict[str, object]:
        return {
            "kind": self.kind.value,
            "length": self.length,
            "channels": self.channels,
            "samples_per_class": self.samples_per_class,
            "noise": self.noise,
            "seed": self.seed,
        }


def _class_signal(kind: SyntheticKind, label: int, length: int) -> np.ndarray:
    t = np.arange(length, dtype=np.float64)
    if kind is SyntheticKind.SINE:
        return np.sin(2.0 * np.pi * SINE_FREQUENCIES[label] * t / length)
    if kind is SyntheticKind.TREND:
        return np.zeros(length) if label == 0 else np.linspace(-1.0, 1.0, length)
    return np.full(length, SIGN_OFFSET if label == 1 else -SIGN_OFFSET)


def split_sizes(total: int) -> Tuple[int, int, int]:
    """60/20/20 split sizes; the test split takes the rounding remainder."""
    train = int(np.floor(total * SPLIT_FRACTIONS[0] + 0.5))
    val = int(np.floor(total * SPLIT_FRACTIONS[1] + 0.5))
    return train, val, total - train - val


def generate_synthetic(spec: SyntheticSpec) -> Tuple[Dataset, Dataset, Dataset]:
    """Two-class synthetic splits, fully determined by ``spec.seed``.

    * sine-vs-frequency: class 0 is ``sin(2 pi 2 t / T)``, class 1 ``sin(2 pi 5 t / T)``.
    * trend-vs-flat: class 0 is flat at 0, class 1 a ramp from -1 to +1.
    * sign-of-mean: ``-0.5`` or ``+0.5`` everywhere; the label is ``mean > 0``
      of the noisy series.

    Every channel carries the class signal plus independent ``Normal(0, noise^2)``.
    """
    root = RngStream(spec.seed)
    noise_gen = derive_stream(root, 0).generator()
    total = 2 * spec.samples_per_class
    values = np.empty((total, spec.length, spec.channels))
    labels = np.empty(total, dtype=np.int64)
    for index in range(total):
        label = index // spec.samples_per_class
        base = _class_signal(spec.kind, label, spec.length)
        values[index] = base[:, None] + spec.noise * noise_gen.standard_normal((spec.length, spec.channels))
        if spec.kind is SyntheticKind.SIGN:
            label = int(values[index].mean() > 0)
        labels[index] = label
    order = derive_stream(root, 1).generator().permutation(total)
    n_train, n_val, _ = split_sizes(total)
    cuts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return tuple(
        Dataset.from_arrays(values[index], labels[index], num_classes=2, split_tag=tag)
        for index, tag in zip(cuts, ("train", "val", "test"))
    )
