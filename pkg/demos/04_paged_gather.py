"""Loading a 128-row block from a paged cache, one address per lane.

A warp of 128 lanes loads 128 rows. Naively each of the 16 lanes that
share a row would compute its address: 2048 page-table lookups. The
cooperative scheme has each lane compute exactly one address and hand it to
its group-mates by shuffle. We emulate both and check they agree.
"""

import numpy as np

from decode_attention.kvcache import PagedCache, gather_cooperative, gather_naive, lane_row, shuffle_source
from decode_attention.numerics import SeededRng

rng = SeededRng(7)
cache = PagedCache(d=128, page_size=8, rng=rng)
seq = cache.new_sequence()
rows = rng.normal((300, 128))
cache.append_tokens(seq, rows)
print("first page-table entries:", cache.page_tables[seq][:10], "...")

block, trace = gather_cooperative(cache, seq, block_start=100)
naive = gather_naive(cache, seq, range(100, 228))
print("cooperative == naive:", np.array_equal(block, naive))
print("address computations:", trace.address_computations, "vs naive", trace.naive_computations())
print("offsets stored per lane:", set(trace.offsets_per_lane))

print("\nlane -> row it computes, row -> lane it is shuffled from:")
for t in (0, 1, 16, 17, 127):
    print(f"  lane {t:3d} computes row {lane_row(t):3d}")
for r in (0, 8, 9, 127):
    print(f"  row {r:3d} comes from lane {shuffle_source(r):3d}")

# Page size 1 lets a second sequence alias the first one's prefix token by token.
shared = PagedCache(d=4, page_size=1)
a = shared.new_sequence()
shared.append_tokens(a, np.arange(20, dtype=np.float32).reshape(5, 4))
b = shared.new_sequence()
shared.share_prefix(a, b, 3)
print("\nprefix-shared page tables:", shared.page_tables[a], shared.page_tables[b])
