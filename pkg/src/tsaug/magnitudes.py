"""Magnitude ranges and the level-to-parameter mapping for each operation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional

from .errors import ConfigError, ValidationError
from .resources import data_dir as packaged_data_dir

TABLE_VERSION = 1


@dataclass(frozen=True)
class MagnitudeRange:
    """Parameter range for one operation; ops without a magnitude carry ``None``."""

    op: str
    param: Optional[str]
    range_lo: Optional[float]
    range_hi: Optional[float]
    default: Optional[float]

    @classmethod
    def from_dict(cls, op: str, data: Dict[str, object]) -> "MagnitudeRange":
        param = data.get("param")

        def _number(key: str) -> Optional[float]:
            value = data.get(key)
            return None if value is None else float(value)

        entry = cls(
            op=op,
            param=None if param is None else str(param),
            range_lo=_number("range_lo"),
            range_hi=_number("range_hi"),
            default=_number("default"),
        )
        if entry.param is not None:
            if entry.range_lo is None or entry.range_hi is None or entry.default is None:
                raise ConfigError(f"magnitude entry {op!r} needs range_lo, range_hi and default")
            if entry.range_lo > entry.range_hi:
                raise ConfigError(f"magnitude entry {op!r} has range_lo > range_hi")
        return entry

    @property
    def has_magnitude(self) -> bool:
        return self.param is not None


class MagnitudeTable:
    """Versioned table mapping integer levels onto per-operation parameters.

    A level ``m`` in ``[0, max_level]`` maps linearly onto ``[range_lo, range_hi]``:
    ``lo + (m / max_level) * (hi - lo)``. Fractional levels are accepted, which
    the policy search relies on.
    """

    def __init__(self, entries: List[MagnitudeRange], max_level: int = 30, version: int = TABLE_VERSION) -> None:
        if max_level <= 0:
            raise ConfigError(f"max_level must be positive, got {max_level}")
        self.entries = entries
        self.max_level = max_level
        self.version = version
        self._by_op: Dict[str, MagnitudeRange] = {entry.op: entry for entry in entries}

    def get(self, op: str) -> MagnitudeRange:
        entry = self._by_op.get(op)
        if entry is None:
            raise ValidationError(f"no magnitude entry for operation {op!r}")
        return entry

    def ops(self) -> List[str]:
        return [entry.op for entry in self.entries]

    def value_at_level(self, op: str, level: float) -> Optional[float]:
        """Parameter value for ``op`` at magnitude ``level``; ``None`` for magnitude-free ops."""
        if not 0.0 <= level <= self.max_level:
            raise ValidationError(f"level must lie in [0, {self.max_level}], got {level}")
        entry = self.get(op)
        if not entry.has_magnitude:
            return None
        lo = float(entry.range_lo)  # type: ignore[arg-type]
        hi = float(entry.range_hi)  # type: ignore[arg-type]
        return lo + (level / self.max_level) * (hi - lo)

    def to_dict(self) -> Dict[str, object]:
        return {
            "version": self.version,
            "max_level": self.max_level,
            "ops": {
                entry.op: {
                    "param": entry.param,
                    "range_lo": entry.range_lo,
                    "range_hi": entry.range_hi,
                    "default": entry.default,
                }
                for entry in self.entries
            },
        }


def load_magnitude_table(data_dir: Path, filename: str = "magnitudes.json") -> MagnitudeTable:
    """Load the magnitude table from JSON."""
    path = data_dir / filename
    with path.open("r", encoding="utf-8") as handle:
        raw = json.load(handle)
    version = int(raw.get("version", TABLE_VERSION))
    if version != TABLE_VERSION:
        raise ConfigError(f"unsupported magnitude table version {version} in {path}")
    entries = [MagnitudeRange.from_dict(op, payload) for op, payload in raw.get("ops", {}).items()]
    return MagnitudeTable(entries, max_level=int(raw.get("max_level", 30)), version=version)


@lru_cache(maxsize=1)
def default_magnitude_table() -> MagnitudeTable:
    return load_magnitude_table(packaged_data_dir())
