"""Paged KV storage and an emulation of warp-cooperative address calculation.

Rows live in a flat pool of fixed-size pages. A row's address is a 64-bit
byte offset into that pool, with each element counted at the 2-byte stored
dtype used for all byte accounting (compute stays float32).

``gather_cooperative`` emulates the 128-thread, 128x128-block loading
scheme: eight groups of sixteen consecutive lanes, group ``g`` owning rows
``g, g+8, ..., g+120``. Each lane computes one row's address and keeps it in
its register; every other lane that needs that address fetches it with an
intra-group shuffle. ``gather_naive`` computes each address independently
and is the oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import AttnConfig, Variant
from .errors import CacheIndexError, CapacityError, DimensionError, ParameterError
from .numerics import FLOAT, SeededRng

DTYPE_BYTES = 2

BLOCK_ROWS = 128
BLOCK_COLS = 128
N_LANES = 128
LANES_PER_GROUP = 16
N_GROUPS = N_LANES // LANES_PER_GROUP


class PagedCache:
    """Page-table indexed row storage shared by any number of sequences.

    ``capacity`` fixes the pool size in pages; ``None`` lets the pool grow.
    ``rng`` (optional) shuffles the free list so page tables come out
    non-contiguous, which is what the address tests want.
    """

    def __init__(self, d: int, page_size: int, capacity: int | None = None, rng: SeededRng | None = None):
        if d < 1 or page_size < 1:
            raise ParameterError("row width and page size must be positive")
        if capacity is not None and capacity < 0:
            raise ParameterError("capacity must be nonnegative")
        self.d = d
        self.page_size = page_size
        self.capacity = capacity
        self._rng = rng
        initial = capacity if capacity is not None else 0
        self.pool = np.zeros((initial, page_size, d), dtype=FLOAT)
        order = np.arange(initial)
        if rng is not None and initial:
            order = rng.permutation(initial)
        self._free = [int(i) for i in order[::-1]]  # pop() from the end
        self.page_tables: dict[int, list[int]] = {}
        self.lengths: dict[int, int] = {}

    @property
    def row_stride_bytes(self) -> int:
        return self.d * DTYPE_BYTES

    def _grow(self, n_pages: int) -> None:
        start = self.pool.shape[0]
        extra = max(n_pages, start, 1)
        self.pool = np.concatenate([self.pool, np.zeros((extra, self.page_size, self.d), dtype=FLOAT)])
        order = np.arange(start, start + extra)
        if self._rng is not None:
            order = order[self._rng.permutation(extra)]
        self._free = [int(i) for i in order[::-1]] + self._free

    def _alloc(self) -> int:
        if not self._free:
            if self.capacity is not None:
                raise CapacityError(f"page pool exhausted ({self.capacity} pages)")
            self._grow(1)
        return self._free.pop()

    def new_sequence(self, seq: int | None = None) -> int:
        if seq is None:
            seq = max(self.page_tables, default=-1) + 1
        if seq in self.page_tables:
            raise ParameterError(f"sequence {seq} already exists")
        self.page_tables[seq] = []
        self.lengths[seq] = 0
        return seq

    def share_prefix(self, src: int, dst: int, n_pages: int) -> None:
        """Make ``dst`` start with the first ``n_pages`` full pages of ``src`` (aliased, not copied)."""
        if n_pages * self.page_size > self.lengths[src]:
            raise CacheIndexError("shared prefix longer than the source sequence")
        if self.lengths.get(dst, 0):
            raise ParameterError("prefix sharing needs an empty destination sequence")
        self.page_tables[dst] = list(self.page_tables[src][:n_pages])
        self.lengths[dst] = n_pages * self.page_size

    def append_tokens(self, seq: int, rows) -> "PagedCache":
        """Store ``rows`` (``[n, d]``) at logical positions L .. L+n-1 of ``seq``."""
        rows = np.asarray(rows, dtype=FLOAT)
        if rows.ndim != 2 or rows.shape[1] != self.d:
            raise DimensionError(f"expected rows [n, {self.d}], got {rows.shape}")
        if seq not in self.page_tables:
            self.new_sequence(seq)
        table = self.page_tables[seq]
        length = self.lengths[seq]
        n = rows.shape[0]
        need = -(-(length + n) // self.page_size) - len(table)
        if self.capacity is not None and need > len(self._free):
            raise CapacityError(f"need {need} pages, {len(self._free)} free")
        for _ in range(need):
            table.append(self._alloc())
        for i in range(n):
            r = length + i
            self.pool[table[r // self.page_size], r % self.page_size] = rows[i]
        self.lengths[seq] = length + n
        return self

    def _check_rows(self, seq: int, rows: np.ndarray) -> None:
        n = self.lengths.get(seq)
        if n is None:
            raise CacheIndexError(f"unknown sequence {seq}")
        if rows.size and (rows.min() < 0 or rows.max() >= n):
            raise CacheIndexError(f"rows outside [0, {n}) for sequence {seq}")

    def load_row(self, address: int) -> np.ndarray:
        flat = address // self.row_stride_bytes
        return self.pool[flat // self.page_size, flat % self.page_size]


def naive_addresses(cache: PagedCache, seq: int, rows) -> list[int]:
    """Byte offset of every requested row, each computed on its own."""
    rows = np.asarray(rows, dtype=np.int64)
    cache._check_rows(seq, rows)
    table = cache.page_tables[seq]
    out = []
    for r in rows.tolist():
        page = table[r // cache.page_size]
        out.append((page * cache.page_size + r % cache.page_size) * cache.row_stride_bytes)
    return out


def gather_naive(cache: PagedCache, seq: int, rows) -> np.ndarray:
    """Rows in request order, addressed independently (the reference path)."""
    addrs = naive_addresses(cache, seq, rows)
    if not addrs:
        return np.zeros((0, cache.d), dtype=FLOAT)
    return np.stack([cache.load_row(a) for a in addrs]).astype(FLOAT)


@dataclass
class AddressTrace:
    """What the emulated warp did while loading one block.

    ``registers`` holds one ``(lane, row, address)`` triple per register write;
    ``loads`` holds one ``(source_lane, row, address)`` triple per row;
    ``shuffles`` counts lane reads served by another lane's register.
    """

    block_start: int
    registers: list[tuple[int, int, int]] = field(default_factory=list)
    loads: list[tuple[int, int, int]] = field(default_factory=list)
    address_computations: int = 0
    shuffles: int = 0

    @property
    def offsets_per_lane(self) -> list[int]:
        counts = [0] * N_LANES
        for lane, _, _ in self.registers:
            counts[lane] += 1
        return counts

    def computed_row(self, lane: int) -> int:
        for t, r, _ in self.registers:
            if t == lane:
                return r
        raise KeyError(lane)

    def source_lane(self, row: int) -> int:
        for lane, r, _ in self.loads:
            if r == row:
                return lane
        raise KeyError(row)

    def address_of(self, row: int) -> int:
        for _, r, a in self.loads:
            if r == row:
                return a
        raise KeyError(row)

    @staticmethod
    def naive_computations() -> int:
        """Address computations if every lane loading a row computed it itself."""
        return BLOCK_ROWS * LANES_PER_GROUP


def lane_row(t: int) -> int:
    """Block-relative row whose address lane ``t`` computes: g + (t mod 16) * 8."""
    g = t // LANES_PER_GROUP
    return g + (t % LANES_PER_GROUP) * N_GROUPS


def shuffle_source(r: int) -> int:
    """Lane holding row ``r``'s address within its group: g*16 + (r - g)/8."""
    g = r % N_GROUPS
    return g * LANES_PER_GROUP + (r - g) // N_GROUPS


def group_rows(g: int) -> range:
    return range(g, BLOCK_ROWS, N_GROUPS)


def gather_cooperative(cache: PagedCache, seq: int, block_start: int) -> tuple[np.ndarray, AddressTrace]:
    """Load the 128x128 block starting at row ``block_start`` the cooperative way."""
    if cache.d != BLOCK_COLS:
        raise DimensionError(f"cooperative gather is defined for row width {BLOCK_COLS}, cache has {cache.d}")
    n = cache.lengths.get(seq)
    if n is None:
        raise CacheIndexError(f"unknown sequence {seq}")
    if block_start < 0 or block_start + BLOCK_ROWS > n:
        raise CacheIndexError(f"block [{block_start}, {block_start + BLOCK_ROWS}) crosses sequence end {n}")

    table = cache.page_tables[seq]
    trace = AddressTrace(block_start)
    stride = np.int64(cache.row_stride_bytes)
    page_size = np.int64(cache.page_size)

    # each lane: one page-table read and one 64-bit address for one row
    registers = np.zeros(N_LANES, dtype=np.int64)
    for t in range(N_LANES):
        r = lane_row(t)
        logical = np.int64(block_start + r)
        page = np.int64(table[int(logical // page_size)])
        registers[t] = (page * page_size + logical % page_size) * stride
        trace.registers.append((t, r, int(registers[t])))
        trace.address_computations += 1

    out = np.empty((BLOCK_ROWS, BLOCK_COLS), dtype=FLOAT)
    for g in range(N_GROUPS):
        group_lanes = range(g * LANES_PER_GROUP, (g + 1) * LANES_PER_GROUP)
        for r in group_rows(g):
            src = shuffle_source(r)
            assert src in group_lanes
            addr = int(registers[src])
            # every lane of the group reads the broadcast; the owner reads its own register
            trace.shuffles += LANES_PER_GROUP - 1
            trace.loads.append((src, r, addr))
            out[r] = cache.load_row(addr)
    return out, trace


def cache_bytes(cfg: AttnConfig, L: int, B: int, dtype_bytes: int = DTYPE_BYTES) -> int:
    """Stored KV bytes for ``B`` sequences of ``L`` tokens on one device.

    ``m_kv * B * L * n_heads * width * dtype_bytes`` (width is ``d_h``, or
    ``d_c`` for latent heads) plus the single decoupled RoPE key head:
    ``d_h/2`` for GTA, ``d_R`` for MLA/GLA.
    """
    return B * L * per_token_elements(cfg) * dtype_bytes


def per_token_elements(cfg: AttnConfig, heads: int | None = None) -> int:
    """Cached elements per token, optionally for only ``heads`` of the KV/latent heads."""
    n = cfg.n_kv_heads if heads is None else heads
    v = cfg.variant
    if v.latent:
        return n * cfg.d_c + cfg.d_R
    if v is Variant.GTA:
        return cfg.m_kv * n * cfg.d_h + cfg.d_h // 2
    return cfg.m_kv * n * cfg.d_h
