import csv
import io
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from decode_attention.config import AttnConfig
from decode_attention.errors import ConfigError, UsageError
from decode_attention.hardware import H100, HardwareProfile, load_profile, shipped_profiles
from decode_attention.roofline import (
    CSV_HEADER,
    ai_asymptote,
    ai_closed_form,
    ai_general,
    classify,
    closed_form_for,
    decode_flops_bytes,
    emit_roofline_csv,
    roofline_point,
)
from decode_attention.verify import roofline_family, table_columns


@pytest.mark.parametrize("label,variant,g_q,m_kv,asym", table_columns())
def test_closed_forms_reach_asymptote(label, variant, g_q, m_kv, asym):
    ai = ai_closed_form(variant, 1e6, 128, g_q, m_kv)
    assert abs(ai - asym) / asym < 5e-3
    assert ai_asymptote(g_q, m_kv) == asym
    assert ai_closed_form(variant, 1e6, 128, g_q, m_kv) == pytest.approx(ai_general(1e6, g_q, m_kv), rel=1e-12)


@given(st.integers(1, 10**7), st.sampled_from([1, 2, 4, 8, 16, 32, 64, 128]), st.sampled_from([1, 2]))
def test_general_form_monotone_and_bounded(L, g_q, m_kv):
    a, b = ai_general(L, g_q, m_kv), ai_general(L + 1, g_q, m_kv)
    assert a < b < ai_asymptote(g_q, m_kv)


def test_mla_value_at_8192():
    assert ai_closed_form("MLA", 8192, 128, 128, 1) == pytest.approx(248.24, abs=0.01)


def test_closed_form_rejects_inconsistent_parameters():
    with pytest.raises(ConfigError):
        ai_closed_form("MHA", 100, 8, 2, 2)
    with pytest.raises(ConfigError):
        ai_closed_form("GTA", 100, 8, 2, 2)
    with pytest.raises(ConfigError):
        ai_closed_form("GQA", 100, 8, 3, 2)
    with pytest.raises(ConfigError):
        ai_closed_form("MLA", 0, 8, 8, 1)


def test_flops_bytes_by_hand():
    cfg = AttnConfig("GQA", d_model=64, h_q=8, d_h=16, h_kv=2)
    flops, nbytes = decode_flops_bytes(cfg, L=100, Lq=2, B=3)
    assert flops == 2 * 3 * 2 * 8 * 100 * 32
    cache = 3 * 100 * 2 * 2 * 16 * 2
    assert nbytes == cache + 3 * 2 * 8 * 32 * 2
    assert decode_flops_bytes(cfg, 100, 1, 0) == (0.0, 0.0)
    with pytest.raises(ConfigError):
        decode_flops_bytes(cfg, -1, 1, 1)


def test_explicit_accounting_tracks_closed_form_at_large_L():
    for label, cfg in roofline_family():
        f, b = decode_flops_bytes(cfg, 65536, 1, 1)
        assert abs(f / b - closed_form_for(cfg, 65536)) / closed_form_for(cfg, 65536) < 0.05, label


def test_speculative_queries_raise_intensity():
    cfg = dict(roofline_family())["MLA"]
    one = roofline_point(cfg, 8192, 1, 1, H100)
    two = roofline_point(cfg, 8192, 2, 1, H100)
    assert two.ai > 1.9 * one.ai


def test_classify_boundaries():
    hw = HardwareProfile("toy", 100.0, 10.0)
    assert classify("x", 1, 1, 1, 99.0, 10.0, hw).bound == "memory"
    p = classify("x", 1, 1, 1, 100.0, 10.0, hw)
    assert p.bound == "compute" and p.predicted_time == pytest.approx(1.0)


def test_csv_round_trip():
    fam = dict(roofline_family())
    pts = [roofline_point(fam[v], L, Lq, 1, H100, v) for v in ("MLA", "GLA-2") for L in (1024, 65536) for Lq in (1, 2)]
    text = emit_roofline_csv(pts, H100)
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == CSV_HEADER
    assert len(rows) == 1 + len(pts)
    for row, p in zip(rows[1:], pts):
        assert row[0] == p.variant and int(row[1]) == p.L and int(row[2]) == p.Lq
        assert float(row[6]) == pytest.approx(p.ai, rel=1e-5)
        assert row[7] == p.bound
        assert float(row[9]) == pytest.approx(H100.ridge, rel=1e-5)
    assert emit_roofline_csv(pts, H100) == text
    with pytest.raises(UsageError):
        emit_roofline_csv([], H100)


def test_hardware_profiles(tmp_path):
    h100 = load_profile("h100")
    assert h100.ridge == pytest.approx(295.22, abs=0.01)
    assert h100 == load_profile("h100-sxm")
    assert {"h100", "a100", "b200"} <= set(shipped_profiles())
    with pytest.raises(ConfigError):
        HardwareProfile("x", 1.0, 1.0, ridge=2.0)
    with pytest.raises(ConfigError):
        HardwareProfile("x", 0.0, 1.0)
    p = tmp_path / "hw.json"
    p.write_text(json.dumps({"name": "mine", "peak_flops": 2e12, "mem_bw": 1e12}))
    assert load_profile(p).ridge == 2.0
    with pytest.raises(FileNotFoundError):
        load_profile("no-such-device")
