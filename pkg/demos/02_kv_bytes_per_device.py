"""How many cache bytes does each device hold per token?

Sharding heads across tensor-parallel ranks shrinks the per-device cache
until each rank holds a single head. Past that point heads are duplicated
instead of split, and the single decoupled RoPE key is copied on every rank.
This walks the shipped 8B-class model across TP degrees.
"""

from decode_attention.config import load_model_file
from decode_attention.sharding import kv_bytes_per_device, make_plan
from decode_attention.verify import data_path

doc, variants = load_model_file(data_path("models", "llama8b.json"))
tps = (1, 2, 4, 8)

print("bytes per token per device (multiples of d_h in brackets)")
print(f"{'':7s}" + "".join(f"{'TP=' + str(t):>16s}" for t in tps))
for label, cfg in variants:
    cells = []
    for tp in tps:
        b = kv_bytes_per_device(cfg, tp)
        cells.append(f"{b:>7d} [{b / (2 * cfg.d_h):4.1f}]  ")
    print(f"{label:7s}" + "".join(f"{c:>16s}" for c in cells))

print("\nduplication factor D at TP=8 (copies of each cached head):")
for label, cfg in variants:
    plan = make_plan(cfg, 8)
    note = "zero redundancy" if plan.zero_redundancy else f"{plan.D} copies"
    print(f"  {label:7s} heads={cfg.n_kv_heads:2d} g_q={cfg.g_q:2d} -> D={plan.D} ({note})")
