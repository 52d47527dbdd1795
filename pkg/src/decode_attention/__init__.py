"""Reference numerics and hardware-efficiency analysis for decode-time attention variants."""

from .attention import (
    AttnWeights,
    KvState,
    decode_reference_materialized,
    decode_step,
    gta_build_kv,
    init_weights,
    prefill,
)
from .config import AttnConfig, Variant
from .hardware import H100, HardwareProfile, load_profile
from .kvcache import PagedCache, cache_bytes, gather_cooperative, gather_naive
from .numerics import SeededRng
from .roofline import ai_closed_form, classify, decode_flops_bytes, emit_roofline_csv, roofline_point
from .sharding import duplication_factor, kv_bytes_per_device, make_plan, shard_decode_simulate, straggler_step_time

__version__ = "0.1.0"
