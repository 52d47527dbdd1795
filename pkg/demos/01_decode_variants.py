"""Decode with every attention variant and watch the cache footprint.

Each variant gets the same input. We prefill 32 tokens, take one decode
step, and print what the cache stores per token next to the output norm.
For MLA and GLA we also compare the absorbed decode path (queries projected
into latent space) with the materialized one (keys and values rebuilt).
"""

import numpy as np

from decode_attention import attention as attn
from decode_attention.config import AttnConfig
from decode_attention.numerics import SeededRng

variants = {
    "MHA": AttnConfig("MHA", d_model=128, h_q=8, d_h=16),
    "GQA-2": AttnConfig("GQA", d_model=128, h_q=8, d_h=16, h_kv=2),
    "MQA": AttnConfig("MQA", d_model=128, h_q=8, d_h=16),
    "GTA-2": AttnConfig("GTA", d_model=128, h_q=8, d_h=16, h_kv=2),
    "MLA": AttnConfig("MLA", d_model=128, h_q=8, d_h=16),
    "GLA-2": AttnConfig("GLA", d_model=128, h_q=8, d_h=16, h_c=2),
}

x = SeededRng(0).normal((1, 33, 128))

print(f"{'variant':8s} {'cached arrays':28s} {'bytes/token':>11s} {'|out|':>8s} {'absorbed vs materialized':>26s}")
for label, cfg in variants.items():
    w = attn.init_weights(cfg, SeededRng(1))
    _, cache = attn.prefill(cfg, w, x[:, :32])
    out, cache = attn.decode_step(cfg, w, cache, x[:, 32:])
    shapes = ", ".join(f"{k}{list(a.shape[2:])}" for k, a in cache.arrays().items())
    per_token = cache.nbytes_accounted() // cache.length
    gap = ""
    if cfg.variant.latent:
        _, prev = attn.prefill(cfg, w, x[:, :32])
        ref = attn.decode_reference_materialized(cfg, w, prev, x[:, 32:])
        gap = f"{np.abs(out - ref).max():.2e}"
    print(f"{label:8s} {shapes:28s} {per_token:11d} {np.linalg.norm(out):8.4f} {gap:>26s}")

# Speculative decoding: two query tokens at once give the same answer as two single steps.
cfg = variants["GLA-2"]
w = attn.init_weights(cfg, SeededRng(1))
_, cache = attn.prefill(cfg, w, x[:, :31])
both, _ = attn.decode_step(cfg, w, cache, x[:, 31:33])
a, c1 = attn.decode_step(cfg, w, cache, x[:, 31:32])
b, _ = attn.decode_step(cfg, w, c1, x[:, 32:33])
print("\nGLA-2, Lq=2 vs two Lq=1 steps, max abs diff:", np.abs(both - np.concatenate([a, b], 1)).max())
