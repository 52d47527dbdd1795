import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decode_attention.config import AttnConfig
from decode_attention.errors import CacheIndexError, CapacityError, DimensionError, ParameterError
from decode_attention.kvcache import (
    AddressTrace,
    PagedCache,
    cache_bytes,
    gather_cooperative,
    gather_naive,
    lane_row,
    naive_addresses,
    shuffle_source,
)
from decode_attention.numerics import SeededRng


def filled(page_size, n, d=128, seed=0, capacity=None):
    rng = SeededRng(seed)
    cache = PagedCache(d, page_size, capacity=capacity, rng=rng)
    seq = cache.new_sequence()
    rows = rng.normal((n, d))
    cache.append_tokens(seq, rows)
    return cache, seq, rows


def test_page_size_one_gives_one_entry_per_token():
    cache, seq, _ = filled(1, 37, d=8)
    assert len(cache.page_tables[seq]) == 37


def test_sixty_four_tokens_fill_one_page():
    cache, seq, _ = filled(64, 64, d=8)
    assert len(cache.page_tables[seq]) == 1
    cache.append_tokens(seq, np.zeros((1, 8)))
    assert len(cache.page_tables[seq]) == 2


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([1, 2, 3, 8, 64]), st.integers(1, 200), st.integers(0, 1000))
def test_round_trip_any_page_size(page_size, n, seed):
    cache, seq, rows = filled(page_size, n, d=4, seed=seed)
    np.testing.assert_array_equal(gather_naive(cache, seq, np.arange(n)), rows)


def test_gather_respects_request_order():
    cache, seq, rows = filled(4, 20, d=8)
    order = SeededRng(1).permutation(20)
    np.testing.assert_array_equal(gather_naive(cache, seq, order), rows[order])


def test_address_is_byte_offset_into_pool():
    cache, seq, rows = filled(8, 30, d=16)
    stride = 16 * 2
    assert cache.row_stride_bytes == stride
    for r, a in zip(range(30), naive_addresses(cache, seq, range(30))):
        page = cache.page_tables[seq][r // 8]
        assert a == (page * 8 + r % 8) * stride
        np.testing.assert_array_equal(cache.load_row(a), rows[r])


def test_shuffled_free_list_scatters_pages():
    cache, seq, _ = filled(1, 64, d=4, seed=3)
    table = cache.page_tables[seq]
    assert sorted(table) == list(range(len(table)))
    assert table != sorted(table)


def test_shared_prefix_aliases_pages():
    cache, a, rows = filled(2, 10, d=4)
    cache.new_sequence(7)
    cache.share_prefix(a, 7, 3)
    assert cache.page_tables[7] == cache.page_tables[a][:3]
    tail = np.ones((2, 4), np.float32)
    cache.append_tokens(7, tail)
    np.testing.assert_array_equal(gather_naive(cache, 7, range(8)), np.concatenate([rows[:6], tail]))
    np.testing.assert_array_equal(gather_naive(cache, a, range(10)), rows)
    with pytest.raises(CacheIndexError):
        cache.share_prefix(a, cache.new_sequence(), 6)


def test_capacity_exhaustion():
    cache = PagedCache(4, 2, capacity=3)
    seq = cache.new_sequence()
    cache.append_tokens(seq, np.zeros((6, 4)))
    with pytest.raises(CapacityError):
        cache.append_tokens(seq, np.zeros((1, 4)))
    assert cache.lengths[seq] == 6


def test_index_and_shape_errors():
    cache, seq, _ = filled(2, 5, d=4)
    with pytest.raises(CacheIndexError):
        gather_naive(cache, seq, [5])
    with pytest.raises(CacheIndexError):
        gather_naive(cache, 99, [0])
    with pytest.raises(DimensionError):
        cache.append_tokens(seq, np.zeros((2, 5)))
    with pytest.raises(ParameterError):
        PagedCache(0, 4)
    with pytest.raises(ParameterError):
        cache.new_sequence(seq)


def test_lane_formulas_spot_and_bijection():
    assert lane_row(17) == 9
    assert shuffle_source(9) == 17
    assert sorted(lane_row(t) for t in range(128)) == list(range(128))
    for r in range(128):
        assert lane_row(shuffle_source(r)) == r
        assert shuffle_source(r) // 16 == r % 8  # shuffles stay inside a group


@pytest.mark.parametrize("page_size", [1, 2, 8, 64])
def test_cooperative_matches_naive(page_size):
    cache, seq, rows = filled(page_size, 300, seed=page_size)
    for start in (0, 37, 172):
        data, trace = gather_cooperative(cache, seq, start)
        np.testing.assert_array_equal(data, rows[start : start + 128])
        assert [trace.address_of(r) for r in range(128)] == naive_addresses(cache, seq, range(start, start + 128))


def test_trace_counts():
    cache, seq, _ = filled(8, 128)
    _, trace = gather_cooperative(cache, seq, 0)
    assert trace.offsets_per_lane == [1] * 128
    assert trace.address_computations == 128 < AddressTrace.naive_computations() == 2048
    assert trace.shuffles == 128 * 15
    assert trace.computed_row(17) == 9 and trace.source_lane(9) == 17


def test_cooperative_rejects_bad_blocks():
    cache, seq, _ = filled(8, 130)
    with pytest.raises(CacheIndexError):
        gather_cooperative(cache, seq, 3)
    small, s2, _ = filled(8, 200, d=64)
    with pytest.raises(DimensionError):
        gather_cooperative(small, s2, 0)


def test_cache_bytes_closed_forms():
    mha = AttnConfig("MHA", d_model=2048, h_q=16, d_h=128)
    gta = AttnConfig("GTA", d_model=2048, h_q=16, d_h=128, h_kv=4)
    mla = AttnConfig("MLA", d_model=2048, h_q=16, d_h=128, d_c=512, d_R=64)
    assert cache_bytes(mha, 1, 1) == 8192
    assert cache_bytes(gta, 1, 1) == 1152
    assert cache_bytes(mla, 1, 1) == 1152
    assert cache_bytes(mha, 0, 4) == 0
    assert cache_bytes(gta, 100, 3) == 300 * 1152
