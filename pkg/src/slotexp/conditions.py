"""Operating-condition envelopes for downsampled experiments."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

from .errors import ConfigError


@dataclass(frozen=True)
class ConditionEnvelope:
    """Inclusive parameter ranges under which a skip period was validated."""

    ranges: Mapping[str, tuple[float, float]]
    probe_id: Optional[str] = None
    min_safe_period: Optional[int] = None
    extra: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.ranges:
            raise ConfigError("condition envelope needs at least one parameter range")
        for name, bounds in self.ranges.items():
            try:
                lo, hi = bounds
            except (TypeError, ValueError):
                raise ConfigError(f"range for {name!r} must be [lo, hi], got {bounds!r}") from None
            if not lo <= hi:
                raise ConfigError(f"empty range for {name!r}: [{lo}, {hi}]")
        object.__setattr__(
            self, "ranges", {name: (float(lo), float(hi)) for name, (lo, hi) in sorted(self.ranges.items())}
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "probe_id": self.probe_id,
            "min_safe_period": self.min_safe_period,
            "ranges": {name: [lo, hi] for name, (lo, hi) in self.ranges.items()},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ConditionEnvelope:
        if "ranges" not in data:
            raise ConfigError("envelope document has no 'ranges'")
        return cls(
            ranges={k: tuple(v) for k, v in data["ranges"].items()},
            probe_id=data.get("probe_id"),
            min_safe_period=data.get("min_safe_period"),
        )

    @classmethod
    def load(cls, path: Path) -> ConditionEnvelope:
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError:
            raise ConfigError(f"envelope file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"envelope file {path} is not valid JSON: {exc}") from None


def check_conditions(envelope: ConditionEnvelope, current: Mapping[str, float]) -> bool:
    """True iff every enveloped parameter lies inside its inclusive range."""
    for name in envelope.ranges:
        if name not in current:
            raise ConfigError(f"envelope parameter {name!r} unknown to the scenario")
    return all(lo <= current[name] <= hi for name, (lo, hi) in envelope.ranges.items())
