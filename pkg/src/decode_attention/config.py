"""Attention configuration shared by the numeric, cache, sharding and roofline code."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .errors import ConfigError


class Variant(str, Enum):
    MHA = "MHA"
    MQA = "MQA"
    GQA = "GQA"
    GTA = "GTA"
    MLA = "MLA"
    GLA = "GLA"

    @property
    def latent(self) -> bool:
        return self in (Variant.MLA, Variant.GLA)


@dataclass(frozen=True)
class AttnConfig:
    """Head and width parameters for one attention layer.

    Unset fields are filled with the variant's defaults: ``h_kv`` is ``h_q``
    for MHA and 1 for MQA; latent variants use ``d_c = 4*d_h`` (MLA) or
    ``2*d_h`` (GLA) and a decoupled RoPE width ``d_R = d_h/2``. For
    MHA/MQA/GQA ``d_R`` is the rotated slice of each head (default ``d_h``).
    ``q_rank`` switches the latent variants to a low-rank query path.
    """

    variant: Variant
    d_model: int
    h_q: int
    d_h: int
    h_kv: int | None = None
    h_c: int | None = None
    d_c: int | None = None
    d_R: int | None = None
    m_kv: int | None = None
    q_rank: int | None = None
    rope_base: float = 10000.0

    def __post_init__(self):
        v = Variant(self.variant)
        object.__setattr__(self, "variant", v)
        for name in ("d_model", "h_q", "d_h"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.d_h % 2:
            raise ConfigError(f"d_h must be even, got {self.d_h}")

        if v is Variant.MHA:
            self._default("h_kv", self.h_q)
            if self.h_kv != self.h_q:
                raise ConfigError("MHA needs h_kv == h_q")
        elif v is Variant.MQA:
            self._default("h_kv", 1)
            if self.h_kv != 1:
                raise ConfigError("MQA needs h_kv == 1")
        elif v is Variant.MLA:
            self._default("h_c", 1)
            if self.h_c != 1:
                raise ConfigError("MLA has exactly one latent head")
        if v in (Variant.GQA, Variant.GTA) and self.h_kv is None:
            raise ConfigError(f"{v.value} needs h_kv")
        if v is Variant.GLA and self.h_c is None:
            raise ConfigError("GLA needs h_c")

        if v.latent:
            self._default("h_kv", self.h_c)
            self._default("d_c", (4 if v is Variant.MLA else 2) * self.d_h)
            self._default("d_R", self.d_h // 2)
            self._default("m_kv", 1)
            if self.h_kv != self.h_c:
                raise ConfigError("latent variants key their groups on h_c; h_kv must equal h_c")
        else:
            self._default("h_c", 0)
            self._default("d_c", 0)
            if v is Variant.GTA:
                self._default("d_R", self.d_h // 2)
                if self.d_R != self.d_h // 2:
                    raise ConfigError("GTA rotates exactly half of each head (d_R = d_h/2)")
            else:
                self._default("d_R", self.d_h)
            self._default("m_kv", 1 if v is Variant.GTA else 2)

        if self.h_kv < 1 or self.h_q % self.h_kv:
            raise ConfigError(f"h_kv={self.h_kv} must divide h_q={self.h_q}")
        if self.d_R < 0 or self.d_R % 2:
            raise ConfigError(f"d_R must be even and nonnegative, got {self.d_R}")
        if not v.latent and self.d_R > self.d_h:
            raise ConfigError("rotated width exceeds head width")
        if v.latent and self.d_c < 1:
            raise ConfigError("d_c must be positive")
        expected_m = 1 if v in (Variant.GTA, Variant.MLA, Variant.GLA) else 2
        if self.m_kv != expected_m:
            raise ConfigError(f"{v.value} has KV multiplicity {expected_m}, got {self.m_kv}")
        if self.q_rank is not None and (not v.latent or self.q_rank < 1):
            raise ConfigError("q_rank applies to MLA/GLA only and must be positive")

    def _default(self, name, value):
        if getattr(self, name) is None:
            object.__setattr__(self, name, value)

    @property
    def g_q(self) -> int:
        """Query heads per distinct KV (or latent) head."""
        return self.h_q // self.h_kv

    @property
    def n_kv_heads(self) -> int:
        """Number of distinct cached heads (KV heads or latent heads)."""
        return self.h_kv

    @property
    def d_qk(self) -> int:
        """Per-head dot-product width seen by the score (decode path)."""
        return self.d_c + self.d_R if self.variant.latent else self.d_h

    @property
    def d_v(self) -> int:
        return self.d_c if self.variant.latent else self.d_h

    @property
    def score_scale(self) -> float:
        return 1.0 / float(self.d_qk) ** 0.5

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttnConfig":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - fields
        if unknown:
            raise ConfigError(f"unknown AttnConfig fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def load_model_file(path) -> tuple[dict, list[tuple[str, AttnConfig]]]:
    """Read a config JSON document.

    Two layouts are accepted: a bare AttnConfig object, or a model document
    with shared fields plus a ``variants`` list, each entry carrying a
    ``label`` and the fields that differ. Returns the raw document and the
    labelled configs in file order.
    """
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    if "variants" not in doc:
        fields = {k: v for k, v in doc.items() if k not in ("label", "name", "description")}
        cfg = AttnConfig.from_dict(fields)
        return doc, [(doc.get("label", cfg.variant.value), cfg)]
    base = {k: v for k, v in doc.items() if k not in ("variants", "name", "reference", "units", "description")}
    out = []
    for entry in doc["variants"]:
        entry = dict(entry)
        label = entry.pop("label", entry.get("variant"))
        out.append((label, AttnConfig.from_dict({**base, **entry})))
    return doc, out
