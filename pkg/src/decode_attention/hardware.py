"""Hardware roofline profiles (peak FLOP/s, memory bandwidth, ridge point)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class HardwareProfile:
    name: str
    peak_flops: float  # FLOP/s
    mem_bw: float  # bytes/s
    ridge: float | None = None  # FLOP/byte; derived when omitted

    def __post_init__(self):
        if self.peak_flops <= 0 or self.mem_bw <= 0:
            raise ConfigError("peak_flops and mem_bw must be positive")
        derived = self.peak_flops / self.mem_bw
        if self.ridge is None:
            object.__setattr__(self, "ridge", derived)
        elif abs(self.ridge - derived) / derived >= 1e-9:
            raise ConfigError(f"ridge {self.ridge} disagrees with peak_flops/mem_bw = {derived}")

    @classmethod
    def from_dict(cls, d: dict) -> "HardwareProfile":
        try:
            return cls(
                name=str(d["name"]),
                peak_flops=float(d["peak_flops"]),
                mem_bw=float(d["mem_bw"]),
                ridge=None if d.get("ridge") is None else float(d["ridge"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad hardware profile: {exc}") from exc


def shipped_profiles() -> dict[str, Path]:
    """Profile name -> path for the JSON files bundled with the package."""
    root = resources.files("decode_attention") / "data" / "hardware"
    out = {}
    for entry in sorted(root.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".json"):
            doc = json.loads(entry.read_text())
            out[doc["name"]] = Path(str(entry))
            out[entry.name[: -len(".json")]] = Path(str(entry))
    return out


def load_profile(name_or_path) -> HardwareProfile:
    """Load a profile from a JSON path or by shipped name (``h100``, ``h100-sxm``, ...)."""
    path = Path(name_or_path)
    if not path.exists():
        known = shipped_profiles()
        if str(name_or_path) not in known:
            raise FileNotFoundError(f"no hardware profile {name_or_path!r}")
        path = known[str(name_or_path)]
    return HardwareProfile.from_dict(json.loads(path.read_text()))


H100 = HardwareProfile("h100-sxm", 989e12, 3.35e12)
