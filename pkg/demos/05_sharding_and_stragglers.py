"""Tensor versus data parallelism when requests have uneven lengths.

With data parallelism each group must wait for the slowest group at every
step. One very long request therefore sets the pace for everyone. Pure
tensor parallelism spreads that request over all ranks, which only works
without duplication if there are enough latent heads to go around.
"""

import numpy as np

from decode_attention import attention as attn
from decode_attention.config import AttnConfig
from decode_attention.hardware import H100
from decode_attention.numerics import SeededRng
from decode_attention.sharding import load_scenario, ordering_verdict, shard_decode_simulate
from decode_attention.verify import data_path

# 1. Sharded GLA decode: each rank attends with its own latent head, partial outputs are summed.
cfg = AttnConfig("GLA", d_model=64, h_q=16, d_h=16, h_c=4)
rng = SeededRng(3)
w = attn.init_weights(cfg, rng)
x = rng.normal((1, 21, 64))
_, cache = attn.prefill(cfg, w, x[:, :20])
ref, _ = attn.decode_step(cfg, w, cache, x[:, 20:])
for N in (1, 2, 4, 8):
    out = shard_decode_simulate(cfg, w, cache, x[:, 20:], N)
    print(f"GLA-4 over TP={N}: max abs diff vs single device {np.abs(out - ref).max():.2e}")

# 2. Straggler model on the shipped scenarios.
for name in ("uniform", "kernel_imbalance", "imbalance_131k"):
    scn = load_scenario(data_path("workloads", f"{name}.json"))
    times = scn.times(H100)
    lens = sorted({r.kv_len for r in scn.workload.requests})
    print(f"\n{scn.name}: {len(scn.workload.requests)} requests, KV lengths {lens}")
    for label, t in times.items():
        print(f"  {label:14s} {t * 1e6:9.2f} us/step")
    print("  " + ordering_verdict(scn, times)[1])
