"""Run configuration: the JSON document every CLI command reads."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .augmentations import AugOpKind, OpParams, params_for_level, parse_op_kind
from .auto_augment import SearchConfig
from .data_io import SyntheticKind, SyntheticSpec
from .errors import ConfigError, ValidationError
from .metrics import AugmentationRef, default_sweep
from .model_zoo import ModelKind, TrainConfig
from .rand_augment import RandAugmentConfig
from .resources import data_dir as packaged_data_dir

CURRENT_VERSION = 1
SEED_ENV = "TSAUG_SEED"
HASH_EXCLUDED = ("threads", "out_dir")


@dataclass(frozen=True)
class GridSettings:
    ops: Tuple[AugOpKind, ...] = tuple(AugOpKind)
    include_identity: bool = False
    include_rand: bool = False
    include_auto: bool = False

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "GridSettings":
        return cls(
            ops=tuple(parse_op_kind(str(name)) for name in data.get("ops", [k.value for k in AugOpKind])),
            include_identity=bool(data.get("include_identity", False)),
            include_rand=bool(data.get("include_rand", False)),
            include_auto=bool(data.get("include_auto", False)),
        )

    def to_dict(self) -> Dict[str, object]:
        return {
            "ops": [kind.value for kind in self.ops],
            "include_identity": self.include_identity,
            "include_rand": self.include_rand,
            "include_auto": self.include_auto,
        }


@dataclass(frozen=True)
class SweepSettings:
    j_values: Tuple[int, ...] = (0, 1, 2, 3, 4)
    m_values: Tuple[int, ...] = (0, 6, 12, 18, 24, 30)
    fixed_j: int = 2
    fixed_m: int = 12

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "SweepSettings":
        base = cls()
        return cls(
            j_values=tuple(int(j) for j in data.get("j_values", base.j_values)),
            m_values=tuple(int(m) for m in data.get("m_values", base.m_values)),
            fixed_j=int(data.get("fixed_j", base.fixed_j)),
            fixed_m=int(data.get("fixed_m", base.fixed_m)),
        )

    def to_dict(self) -> Dict[str, object]:
        return {
            "j_values": list(self.j_values),
            "m_values": list(self.m_values),
            "fixed_j": self.fixed_j,
            "fixed_m": self.fixed_m,
        }


def _augmentation_from_entry(entry: object) -> AugmentationRef:
    if entry == "identity":
        return AugmentationRef.identity()
    if not isinstance(entry, dict):
        raise ConfigError(f"augmentation entries must be objects or 'identity', got {entry!r}")
    if "rand" in entry:
        rand = RandAugmentConfig.from_dict(entry["rand"])
        return AugmentationRef(name=str(entry.get("name", f"rand J={rand.num_ops} M={rand.magnitude}")), rand=rand)
    kind = parse_op_kind(str(entry.get("op", "")))
    if "params" in entry:
        params = OpParams.from_dict(entry["params"])
        name = str(entry.get("name", f"{kind.value}({params.describe(kind)})"))
        return AugmentationRef(name=name, ops=((kind, params),))
    level = float(entry.get("level", 0.0))
    if "name" in entry:
        return AugmentationRef(name=str(entry["name"]), ops=((kind, params_for_level(kind, level)),))
    return AugmentationRef.at_level(kind, level)


@dataclass(frozen=True)
class MetricsSettings:
    backbone: ModelKind = ModelKind.MLP
    augmentations: object = "default"

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "MetricsSettings":
        return cls(backbone=ModelKind(str(data.get("backbone", "mlp"))), augmentations=data.get("augmentations", "default"))

    def to_dict(self) -> Dict[str, object]:
        return {"backbone": self.backbone.value, "augmentations": self.augmentations}

    def resolve(self) -> List[AugmentationRef]:
        if self.augmentations == "default":
            return default_sweep()
        if self.augmentations == "identity":
            return [AugmentationRef.identity()]
        if not isinstance(self.augmentations, list) or not self.augmentations:
            raise ConfigError("metrics.augmentations must be 'default', 'identity' or a non-empty list")
        return [_augmentation_from_entry(entry) for entry in self.augmentations]


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs; ``dataset`` is a manifest path relative to the config file."""

    schema_version: int = CURRENT_VERSION
    dataset: Optional[Path] = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    normalize: bool = True
    backbones: Tuple[ModelKind, ...] = (ModelKind.MLP, ModelKind.CONV1D)
    width: float = 1.0
    seeds: Tuple[int, ...] = (0, 1, 2)
    seed: Optional[int] = None
    out_dir: Path = Path("results")
    threads: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    rand: RandAugmentConfig = field(default_factory=RandAugmentConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    grid: GridSettings = field(default_factory=GridSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    metrics: MetricsSettings = field(default_factory=MetricsSettings)

    def to_dict(self) -> Dict[str, object]:
        return {
            "schema_version": self.schema_version,
            "dataset": None if self.dataset is None else self.dataset.as_posix(),
            "synthetic": self.synthetic.to_dict(),
            "normalize": self.normalize,
            "backbones": [kind.value for kind in self.backbones],
            "width": self.width,
            "seeds": list(self.seeds),
            "seed": self.seed,
            "out_dir": self.out_dir.as_posix(),
            "threads": self.threads,
            "train": self.train.to_dict(),
            "rand": self.rand.to_dict(),
            "search": self.search.to_dict(),
            "grid": self.grid.to_dict(),
            "sweep": self.sweep.to_dict(),
            "metrics": self.metrics.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object], base_dir: Path = Path(".")) -> "RunConfig":
        try:
            synthetic = dict(data.get("synthetic") or {})
            dataset = data.get("dataset")
            seed = data.get("seed")
            cfg = cls(
                schema_version=int(data.get("schema_version", CURRENT_VERSION)),
                dataset=None if dataset is None else base_dir / str(dataset),
                synthetic=SyntheticSpec(
                    kind=SyntheticKind.parse(str(synthetic.get("kind", SyntheticKind.SINE.value))),
                    length=int(synthetic.get("length", 64)),
                    channels=int(synthetic.get("channels", 1)),
                    samples_per_class=int(synthetic.get("samples_per_class", 100)),
                    noise=float(synthetic.get("noise", 0.1)),
                    seed=int(synthetic.get("seed", 0)),
                ),
                normalize=bool(data.get("normalize", True)),
                backbones=tuple(ModelKind(str(kind)) for kind in data.get("backbones", ["mlp", "conv1d"])),
                width=float(data.get("width", 1.0)),
                seeds=tuple(int(s) for s in data.get("seeds", [0, 1, 2])),
                seed=None if seed is None else int(seed),
                out_dir=Path(str(data.get("out_dir", "results"))),
                threads=int(data.get("threads", 1)),
                train=TrainConfig.from_dict(data.get("train") or {}),
                rand=RandAugmentConfig.from_dict(data.get("rand") or {}),
                search=SearchConfig.from_dict(data.get("search") or {}),
                grid=GridSettings.from_dict(data.get("grid") or {}),
                sweep=SweepSettings.from_dict(data.get("sweep") or {}),
                metrics=MetricsSettings.from_dict(data.get("metrics") or {}),
            )
        except ConfigError:
            raise
        except (ValidationError, ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"invalid run configuration: {exc}") from exc
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.schema_version != CURRENT_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")
        if not self.backbones:
            raise ConfigError("backbones must not be empty")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if self.width <= 0:
            raise ConfigError(f"width must be positive, got {self.width}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        try:
            for j in self.sweep.j_values:
                RandAugmentConfig(num_ops=j, magnitude=self.sweep.fixed_m)
            for m in self.sweep.m_values:
                RandAugmentConfig(num_ops=self.sweep.fixed_j, magnitude=m)
        except ValidationError as exc:
            raise ConfigError(f"invalid sweep settings: {exc}") from exc

    def top_seed(self) -> Optional[int]:
        """Explicit seed, else ``TSAUG_SEED``, else ``None``."""
        if self.seed is not None:
            return self.seed
        raw = os.environ.get(SEED_ENV)
        if raw is None or not raw.strip():
            return None
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc

    def hash(self) -> str:
        """SHA-256 of the canonical JSON rendering, ignoring worker count and output location."""
        payload = {key: value for key, value in self.to_dict().items() if key not in HASH_EXCLUDED}
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class RunConfigLoader:
    """Load run configurations, filling keys older files lack."""

    def __init__(self, path: Optional[Path] = None) -> None:
        self.path = path

    def load(self) -> RunConfig:
        defaults = self._read(packaged_data_dir() / "default_run.json")
        if self.path is None:
            return RunConfig.from_dict(defaults)
        raw = self._read(Path(self.path))
        migrated = self._migrate(raw, defaults)
        return RunConfig.from_dict(migrated, base_dir=Path(self.path).parent)

    @staticmethod
    def _read(path: Path) -> Dict[str, object]:
        try:
            with path.open("r", encoding="utf-8") as handle:
                raw = json.load(handle)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} does not exist") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return raw

    def _migrate(self, data: Dict[str, object], defaults: Dict[str, object]) -> Dict[str, object]:
        data.setdefault("schema_version", CURRENT_VERSION)
        for key, value in defaults.items():
            if isinstance(value, dict) and isinstance(data.get(key), dict):
                for inner_key, inner_value in value.items():
                    data[key].setdefault(inner_key, inner_value)
            else:
                data.setdefault(key, value)
        return data


def load_run_config(path: Optional[Path] = None) -> RunConfig:
    return RunConfigLoader(path).load()
