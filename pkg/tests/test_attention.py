import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decode_attention import attention as attn
from decode_attention.config import AttnConfig, Variant
from decode_attention.errors import ConfigError, DimensionError, StateError
from decode_attention.numerics import SeededRng
from oracle import reference_forward, rel_err

CONFIGS = {
    "MHA": AttnConfig("MHA", d_model=32, h_q=4, d_h=8),
    "MQA": AttnConfig("MQA", d_model=32, h_q=4, d_h=8),
    "GQA-2": AttnConfig("GQA", d_model=32, h_q=4, d_h=8, h_kv=2),
    "GQA-partial": AttnConfig("GQA", d_model=32, h_q=4, d_h=8, h_kv=2, d_R=4),
    "GTA-2": AttnConfig("GTA", d_model=32, h_q=4, d_h=8, h_kv=2),
    "MLA": AttnConfig("MLA", d_model=32, h_q=4, d_h=8),
    "GLA-2": AttnConfig("GLA", d_model=32, h_q=8, d_h=8, h_c=2),
    "GLA_q-2": AttnConfig("GLA", d_model=32, h_q=8, d_h=8, h_c=2, q_rank=12),
}


def setup(cfg, seed=0, B=2, L=10):
    rng = SeededRng(seed)
    w = attn.init_weights(cfg, rng)
    return w, rng.normal((B, L, cfg.d_model))


@pytest.mark.parametrize("name", CONFIGS)
def test_prefill_matches_reference(name):
    cfg = CONFIGS[name]
    w, x = setup(cfg)
    out, cache = attn.prefill(cfg, w, x)
    assert out.shape == x.shape and out.dtype == np.float32
    assert cache.length == x.shape[1]
    assert rel_err(out, reference_forward(cfg, w, x)) < 1e-5


@pytest.mark.parametrize("name", CONFIGS)
@pytest.mark.parametrize("Lq", [1, 2])
def test_decode_matches_reference(name, Lq):
    cfg = CONFIGS[name]
    w, x = setup(cfg, seed=3, L=9 + Lq)
    _, cache = attn.prefill(cfg, w, x[:, :9])
    out, cache = attn.decode_step(cfg, w, cache, x[:, 9:])
    assert cache.length == 9 + Lq
    assert rel_err(out, reference_forward(cfg, w, x)[:, 9:]) < 1e-5


def test_weight_shapes_gla():
    cfg = AttnConfig("GLA", d_model=64, h_q=8, d_h=16, h_c=2)
    shapes = attn.weight_shapes(cfg)
    assert shapes["wdkv"] == (64, 2 * 32)
    assert shapes["wuk"] == (2, 32, 64)
    assert shapes["wuv"] == (2, 32, 64)
    assert shapes["wkr"] == (64, 8)
    w = attn.init_weights(cfg, SeededRng(0))
    attn.check_weights(cfg, w)
    bound = 1 / np.sqrt(64)
    assert np.abs(w.wdkv).max() <= bound


def test_weight_shapes_gta_rope_width():
    cfg = AttnConfig("GTA", d_model=256, h_q=16, d_h=128, h_kv=4)
    shapes = attn.weight_shapes(cfg)
    assert shapes["wkr"] == (256, 64)
    assert shapes["wkv"] == (256, 4 * 128)
    assert "wk" not in shapes and "wv" not in shapes


def test_check_weights_rejects_wrong_layout():
    cfg = CONFIGS["MHA"]
    w = attn.init_weights(cfg, SeededRng(0))
    with pytest.raises(ConfigError):
        attn.check_weights(cfg, w.replace(wq=np.zeros((3, 3), np.float32)))
    with pytest.raises(ConfigError):
        attn.check_weights(CONFIGS["GTA-2"], w)


@pytest.mark.parametrize("name", CONFIGS)
def test_single_token_prefill_equals_decode_from_empty(name):
    cfg = CONFIGS[name]
    w, x = setup(cfg, L=1)
    pre, _ = attn.prefill(cfg, w, x)
    dec, _ = attn.decode_step(cfg, w, attn.KvState.empty(cfg, 2), x)
    if cfg.variant.latent:
        assert rel_err(dec, pre) < 1e-5
    else:
        np.testing.assert_array_equal(dec, pre)


@pytest.mark.parametrize("name", CONFIGS)
def test_speculative_step_equals_two_single_steps(name):
    cfg = CONFIGS[name]
    w, x = setup(cfg, seed=5, L=8)
    _, cache = attn.prefill(cfg, w, x[:, :6])
    both, _ = attn.decode_step(cfg, w, cache, x[:, 6:8])
    one, c1 = attn.decode_step(cfg, w, cache, x[:, 6:7])
    two, _ = attn.decode_step(cfg, w, c1, x[:, 7:8])
    np.testing.assert_allclose(both, np.concatenate([one, two], axis=1), atol=1e-5)


def test_identity_up_projection_collapses_mla_to_mqa():
    d_h, h_q = 8, 4
    mla = AttnConfig("MLA", d_model=24, h_q=h_q, d_h=d_h, d_c=d_h, d_R=0)
    mqa = AttnConfig("MQA", d_model=24, h_q=h_q, d_h=d_h, d_R=0)
    rng = SeededRng(11)
    w = attn.init_weights(mla, rng)
    eye = np.tile(np.eye(d_h, dtype=np.float32), (1, h_q))[None]
    w = w.replace(wuk=eye, wuv=eye)
    w_mqa = attn.AttnWeights(wq=w.wq, wk=w.wdkv, wv=w.wdkv, wo=w.wo)
    x = rng.normal((2, 7, 24))
    o_mla, _ = attn.prefill(mla, w, x)
    o_mqa, _ = attn.prefill(mqa, w_mqa, x)
    np.testing.assert_allclose(o_mla, o_mqa, atol=1e-6)
    _, cache = attn.prefill(mla, w, x[:, :6])
    step, _ = attn.decode_step(mla, w, cache, x[:, 6:])
    np.testing.assert_allclose(step, o_mqa[:, 6:], atol=1e-6)


@pytest.mark.parametrize("name", ["MHA", "GTA-2", "MLA"])
def test_zero_query_attends_uniformly(name):
    """With a zero query every score is equal, so each head returns the mean value."""
    cfg = CONFIGS[name]
    w, x = setup(cfg, L=6)
    zq = {n: np.zeros_like(getattr(w, n)) for n in ("wq", "wqr") if getattr(w, n) is not None}
    w0 = w.replace(**zq)
    res = attn.attend(cfg, w0, attn.KvState.empty(cfg, 2), x, absorbed=True)
    last = res.probs[..., -1, :]
    np.testing.assert_allclose(last, np.full_like(last, 1 / 6), rtol=1e-6)


def test_cache_is_append_only():
    cfg = CONFIGS["GQA-2"]
    w, x = setup(cfg, L=5)
    _, cache = attn.prefill(cfg, w, x[:, :4])
    before = {n: a.copy() for n, a in cache.arrays().items()}
    _, after = attn.decode_step(cfg, w, cache, x[:, 4:])
    for n, a in cache.arrays().items():
        np.testing.assert_array_equal(a, before[n])
        np.testing.assert_array_equal(after.arrays()[n][:, :4], before[n])
    assert after.length == 5 and cache.length == 4


def test_cache_layouts_and_accounted_bytes():
    B, L = 2, 5
    for name, expect in [("MHA", {"k", "v"}), ("GTA-2", {"kv", "kr"}), ("GLA-2", {"c", "kr"})]:
        cfg = CONFIGS[name]
        w, x = setup(cfg, B=B, L=L)
        _, cache = attn.prefill(cfg, w, x)
        assert set(cache.arrays()) == expect
    cfg = CONFIGS["GTA-2"]
    w, x = setup(cfg, B=B, L=L)
    _, cache = attn.prefill(cfg, w, x)
    assert cache.kr.shape == (B, L, 1, 4)
    assert cache.nbytes_accounted() == B * L * (2 * 8 + 4) * 2


def test_position_conflict_raises():
    cfg = CONFIGS["MHA"]
    w, x = setup(cfg, L=5)
    _, cache = attn.prefill(cfg, w, x[:, :4])
    with pytest.raises(StateError):
        attn.decode_step(cfg, w, cache, x[:, 4:], positions=[3])
    out, _ = attn.decode_step(cfg, w, cache, x[:, 4:], positions=[4])
    assert out.shape == (2, 1, cfg.d_model)


def test_bad_inputs():
    cfg = CONFIGS["MHA"]
    w, x = setup(cfg)
    with pytest.raises(DimensionError):
        attn.prefill(cfg, w, x[..., :5])
    with pytest.raises(DimensionError):
        attn.decode_step(cfg, w, attn.KvState.empty(cfg, 3), x[:, :1])
    with pytest.raises(ConfigError):
        attn.gta_build_kv(cfg, w, x)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 2, 4]), st.sampled_from([0, 4, 8]))
def test_gla_absorbed_equals_materialized(seed, h_c, d_R):
    cfg = AttnConfig("GLA", d_model=16, h_q=8, d_h=8, h_c=h_c, d_R=d_R)
    w, x = setup(cfg, seed=seed, L=6)
    _, cache = attn.prefill(cfg, w, x[:, :5])
    a, _ = attn.decode_step(cfg, w, cache, x[:, 5:])
    m = attn.decode_reference_materialized(cfg, w, cache, x[:, 5:])
    assert rel_err(a, m) < 1e-4


def test_gta_structure_and_rotation_confinement():
    cfg = CONFIGS["GTA-2"]
    w, x = setup(cfg, L=6)
    kv, k, v, k_rope = attn.gta_build_kv(cfg, w, x)
    np.testing.assert_array_equal(v, kv)
    np.testing.assert_array_equal(k[..., :4], kv[..., :4])
    assert k.shape[-1] == cfg.d_h and k_rope.shape == (2, 6, 1, 4)
    # position 0 carries no rotation, so the shared half equals the raw projection there
    np.testing.assert_array_equal(k[:, 0, 0, 4:], k_rope[:, 0, 0])
    np.testing.assert_array_equal(k[:, :, 0, 4:], k[:, :, 1, 4:])


def test_config_defaults_and_validation():
    mla = AttnConfig("MLA", d_model=64, h_q=8, d_h=16)
    assert (mla.h_c, mla.d_c, mla.d_R, mla.m_kv, mla.g_q) == (1, 64, 8, 1, 8)
    assert mla.score_scale == pytest.approx((64 + 8) ** -0.5)
    gla = AttnConfig("GLA", d_model=64, h_q=8, d_h=16, h_c=2)
    assert (gla.d_c, gla.g_q) == (32, 4)
    assert AttnConfig("GQA", 64, 8, 16, h_kv=2).m_kv == 2
    assert AttnConfig.from_dict(gla.to_dict()) == gla
    assert Variant("GLA").latent and not Variant("GTA").latent
    for bad in (
        dict(variant="GQA", d_model=8, h_q=8, d_h=16, h_kv=3),
        dict(variant="MHA", d_model=8, h_q=8, d_h=15),
        dict(variant="GTA", d_model=8, h_q=8, d_h=16, h_kv=2, d_R=4),
        dict(variant="MQA", d_model=8, h_q=8, d_h=16, h_kv=2),
        dict(variant="GLA", d_model=8, h_q=8, d_h=16),
        dict(variant="MHA", d_model=8, h_q=8, d_h=16, q_rank=4),
    ):
        with pytest.raises(ConfigError):
            AttnConfig(**bad)
    with pytest.raises(ConfigError):
        AttnConfig.from_dict({"variant": "MHA", "d_model": 8, "h_q": 2, "d_h": 4, "colour": 1})
