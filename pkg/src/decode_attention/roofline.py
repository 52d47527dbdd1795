"""Arithmetic intensity of attention decoding and roofline classification.

Two accountings live here and are cross-checked rather than merged:

* ``ai_closed_form`` -- per-variant closed forms that count only KV-cache
  traffic (valid when L >> h_q);
* ``decode_flops_bytes`` -- explicit MAC-only FLOPs plus cache, query and
  output bytes for a concrete config.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .config import AttnConfig, Variant
from .errors import ConfigError, UsageError
from .hardware import HardwareProfile
from .kvcache import DTYPE_BYTES, cache_bytes


def _check_variant_params(variant: Variant, h_q: int, g_q: int, m_kv: int) -> None:
    if min(h_q, g_q) < 1 or h_q % g_q:
        raise ConfigError(f"g_q={g_q} must be a positive divisor of h_q={h_q}")
    need = {
        Variant.MHA: (1, 2),
        Variant.MQA: (h_q, 2),
        Variant.MLA: (h_q, 1),
    }
    if variant in need:
        want_g, want_m = need[variant]
        if (g_q, m_kv) != (want_g, want_m):
            raise ConfigError(f"{variant.value} needs g_q={want_g}, m_kv={want_m}; got g_q={g_q}, m_kv={m_kv}")
    elif variant is Variant.GQA and m_kv != 2:
        raise ConfigError("GQA keeps separate K and V (m_kv=2)")
    elif variant in (Variant.GTA, Variant.GLA) and m_kv != 1:
        raise ConfigError(f"{variant.value} shares one state for K and V (m_kv=1)")


def ai_general(L: float, g_q: float, m_kv: int) -> float:
    """2L / (2 + (m_kv/g_q) L)."""
    return 2.0 * L / (2.0 + m_kv / g_q * L)


def ai_asymptote(g_q: float, m_kv: int) -> float:
    return 2.0 * g_q / m_kv


def ai_closed_form(variant, L: float, h_q: int, g_q: int, m_kv: int) -> float:
    """Closed-form decode arithmetic intensity for one variant (cache traffic only).

    For GLA, ``g_q = h_q / h_c``; GLA with two latent heads therefore tends
    to ``h_q``.
    """
    variant = Variant(variant)
    if L < 1:
        raise ConfigError("L must be at least 1")
    _check_variant_params(variant, h_q, g_q, m_kv)
    L = float(L)
    if variant is Variant.MHA:
        return L / (1.0 + L)
    if variant is Variant.MQA:
        return L * h_q / (h_q + L)
    if variant is Variant.GQA:
        return L * h_q / (h_q + h_q / g_q * L)
    if variant is Variant.GTA:
        return 2.0 * L * h_q / (2.0 * h_q + h_q / g_q * L)
    if variant is Variant.MLA:
        return L / (1.0 + L / (2.0 * h_q))
    return L / (1.0 + L / (2.0 * g_q))


def closed_form_for(cfg: AttnConfig, L: float) -> float:
    return ai_closed_form(cfg.variant, L, cfg.h_q, cfg.g_q, cfg.m_kv)


def decode_flops_bytes(
    cfg: AttnConfig, L: int, Lq: int, B: int, d_qk_eff: int | None = None, d_v_eff: int | None = None
) -> tuple[float, float]:
    """MAC-only FLOPs and bytes for one decode step of ``Lq`` query tokens over ``L`` cached tokens.

    FLOPs: ``2*B*Lq*h_q*L*(d_qk + d_v)`` (scores plus value reduction;
    softmax is not counted). Bytes: the stored cache plus query and output
    traffic ``B*Lq*h_q*(d_qk + d_v)`` at the accounting dtype.
    """
    if min(L, Lq, B) < 0:
        raise ConfigError("L, Lq and B must be nonnegative")
    dqk = cfg.d_qk if d_qk_eff is None else d_qk_eff
    dv = cfg.d_v if d_v_eff is None else d_v_eff
    width = dqk + dv
    flops = 2.0 * B * Lq * cfg.h_q * L * width
    if flops == 0 and B == 0:
        return 0.0, 0.0
    nbytes = float(cache_bytes(cfg, L, B)) + float(B * Lq * cfg.h_q * width * DTYPE_BYTES)
    return flops, nbytes


@dataclass(frozen=True)
class WorkloadPoint:
    variant: str
    L: int
    Lq: int
    B: int
    flops: float
    bytes: float
    ai: float
    bound: str  # "memory" or "compute"
    predicted_time: float  # seconds


def classify(variant: str, L: int, Lq: int, B: int, flops: float, nbytes: float, hw: HardwareProfile) -> WorkloadPoint:
    """Place one workload on the roofline of ``hw``."""
    ai = flops / nbytes if nbytes else float("inf")
    bound = "memory" if ai < hw.ridge else "compute"
    t = max(flops / hw.peak_flops, nbytes / hw.mem_bw)
    return WorkloadPoint(str(variant), int(L), int(Lq), int(B), float(flops), float(nbytes), ai, bound, t)


def roofline_point(cfg: AttnConfig, L: int, Lq: int, B: int, hw: HardwareProfile, label: str | None = None) -> WorkloadPoint:
    flops, nbytes = decode_flops_bytes(cfg, L, Lq, B)
    return classify(label or cfg.variant.value, L, Lq, B, flops, nbytes, hw)


CSV_HEADER = ["variant", "L", "Lq", "B", "flops", "bytes", "ai", "bound", "predicted_us", "ridge"]


def _g6(x: float) -> str:
    return f"{x:.6g}"


def emit_roofline_csv(points: list[WorkloadPoint], hw: HardwareProfile) -> str:
    """CSV text, one row per point in input order, reals at 6 significant digits."""
    if not points:
        raise UsageError("no workload points to emit")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for p in points:
        writer.writerow(
            [
                p.variant,
                p.L,
                p.Lq,
                p.B,
                _g6(p.flops),
                _g6(p.bytes),
                _g6(p.ai),
                p.bound,
                _g6(p.predicted_time * 1e6),
                _g6(hw.ridge),
            ]
        )
    return buf.getvalue()
