"""Reference prefill and decode for MHA, MQA, GQA, GTA, MLA and GLA.

All tensors are float32, laid out ``[batch, seq, head, channel]`` at the
module surface. Weight matrices are stored ``[in, out]`` so projections are
``x @ W``. Internally query heads are grouped ``[B, n_kv, g_q, seq, d]``
so that each cached head is read once per group.

MLA and GLA share one code path (MLA is GLA with a single latent head).
Decode uses the absorbed form: queries are pulled into latent space with
``W_uk`` and outputs leave it through ``W_uv``, so per-head keys and values
never exist at decode time. :func:`decode_reference_materialized` rebuilds
them explicitly and is the oracle for the absorbed path.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .config import AttnConfig, Variant
from .errors import ConfigError, DimensionError, StateError
from .numerics import FLOAT, SeededRng, broadcast_head, concat_last, matmul, softmax_rows
from .rope import RopeParams, apply_rope


@dataclass(frozen=True)
class AttnWeights:
    """Projection matrices for one layer; which fields are set depends on the variant.

    ``wuk`` and ``wuv`` are ``[h_c, d_c, g_q*d_h]``, one up-projection per
    latent head. Everything else is a 2-D ``[in, out]`` matrix.
    """

    wo: np.ndarray
    wq: np.ndarray | None = None
    wk: np.ndarray | None = None
    wv: np.ndarray | None = None
    wkv: np.ndarray | None = None
    wkr: np.ndarray | None = None
    wqr: np.ndarray | None = None
    wdq: np.ndarray | None = None
    wuq: np.ndarray | None = None
    wuqr: np.ndarray | None = None
    wdkv: np.ndarray | None = None
    wuk: np.ndarray | None = None
    wuv: np.ndarray | None = None

    def items(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is not None:
                yield f.name, value

    def replace(self, **changes) -> "AttnWeights":
        return dataclasses.replace(self, **changes)


def weight_shapes(cfg: AttnConfig) -> dict[str, tuple[int, ...]]:
    """Expected shape of every weight for ``cfg``, in initialisation order."""
    dm, hq, dh = cfg.d_model, cfg.h_q, cfg.d_h
    v = cfg.variant
    if v in (Variant.MHA, Variant.MQA, Variant.GQA):
        return {
            "wq": (dm, hq * dh),
            "wk": (dm, cfg.h_kv * dh),
            "wv": (dm, cfg.h_kv * dh),
            "wo": (hq * dh, dm),
        }
    if v is Variant.GTA:
        return {
            "wq": (dm, hq * dh),
            "wkv": (dm, cfg.h_kv * dh),
            "wkr": (dm, dh // 2),
            "wo": (hq * dh, dm),
        }
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.q_rank is None:
        shapes["wq"] = (dm, hq * dh)
        shapes["wqr"] = (dm, hq * cfg.d_R)
    else:
        shapes["wdq"] = (dm, cfg.q_rank)
        shapes["wuq"] = (cfg.q_rank, hq * dh)
        shapes["wuqr"] = (cfg.q_rank, hq * cfg.d_R)
    shapes["wdkv"] = (dm, cfg.h_c * cfg.d_c)
    shapes["wkr"] = (dm, cfg.d_R)
    shapes["wuk"] = (cfg.h_c, cfg.d_c, cfg.g_q * dh)
    shapes["wuv"] = (cfg.h_c, cfg.d_c, cfg.g_q * dh)
    shapes["wo"] = (hq * dh, dm)
    return shapes


def check_weights(cfg: AttnConfig, w: AttnWeights) -> None:
    expected = weight_shapes(cfg)
    present = dict(w.items())
    if set(present) != set(expected):
        raise ConfigError(f"weights {sorted(present)} do not match {cfg.variant.value} layout {sorted(expected)}")
    for name, shape in expected.items():
        if present[name].shape != shape:
            raise ConfigError(f"{name} has shape {present[name].shape}, expected {shape}")


def init_weights(cfg: AttnConfig, rng: SeededRng) -> AttnWeights:
    """Draw every matrix from uniform(-s, s) with s = 1/sqrt(fan_in)."""
    mats = {}
    for name, shape in weight_shapes(cfg).items():
        fan_in = shape[-2]
        s = 1.0 / np.sqrt(fan_in) if fan_in else 0.0
        mats[name] = rng.uniform(-s, s, shape)
    return AttnWeights(**mats)


@dataclass(frozen=True)
class KvState:
    """Cached per-token state. Appending returns a new object; arrays are never written in place.

    Standard variants fill ``k``/``v`` (``[B, L, h_kv, d_h]``); GTA fills the
    tied ``kv`` plus the rotated single-head ``kr`` (``[B, L, 1, d_h/2]``);
    latent variants fill ``c`` (``[B, L, h_c, d_c]``) plus ``kr``
    (``[B, L, 1, d_R]``).
    """

    batch: int
    k: np.ndarray | None = None
    v: np.ndarray | None = None
    kv: np.ndarray | None = None
    c: np.ndarray | None = None
    kr: np.ndarray | None = None

    @classmethod
    def empty(cls, cfg: AttnConfig, batch: int) -> "KvState":
        def z(h, d):
            return np.zeros((batch, 0, h, d), dtype=FLOAT)

        v = cfg.variant
        if v is Variant.GTA:
            return cls(batch, kv=z(cfg.h_kv, cfg.d_h), kr=z(1, cfg.d_h // 2))
        if v.latent:
            return cls(batch, c=z(cfg.h_c, cfg.d_c), kr=z(1, cfg.d_R))
        return cls(batch, k=z(cfg.h_kv, cfg.d_h), v=z(cfg.h_kv, cfg.d_h))

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in ("k", "v", "kv", "c", "kr") if getattr(self, n) is not None}

    @property
    def length(self) -> int:
        return next(iter(self.arrays().values())).shape[1]

    def append(self, **new: np.ndarray) -> "KvState":
        have = self.arrays()
        if set(new) != set(have):
            raise StateError(f"append needs exactly {sorted(have)}, got {sorted(new)}")
        joined = {}
        for name, old in have.items():
            add = new[name]
            if add.shape[0] != old.shape[0] or add.shape[2:] != old.shape[2:]:
                raise DimensionError(f"cannot append {add.shape} to cached {name} {old.shape}")
            joined[name] = np.concatenate([old, add], axis=1)
        return dataclasses.replace(self, **joined)

    def nbytes_accounted(self, dtype_bytes: int = 2) -> int:
        """Bytes this cache would occupy stored at ``dtype_bytes`` per element."""
        return sum(a.size for a in self.arrays().values()) * dtype_bytes


class AttnResult(NamedTuple):
    output: np.ndarray
    cache: KvState
    probs: np.ndarray


# -- helpers ----------------------------------------------------------------


def _heads(x: np.ndarray, h: int) -> np.ndarray:
    B, L, _ = x.shape
    return x.reshape(B, L, h, -1)


def _group(x: np.ndarray, n_kv: int) -> np.ndarray:
    """``[B, L, h_q, d]`` -> ``[B, n_kv, g_q, L, d]`` (query head j -> group j // g_q)."""
    B, L, h, d = x.shape
    return np.ascontiguousarray(x.reshape(B, L, n_kv, h // n_kv, d).transpose(0, 2, 3, 1, 4))


def _kv_heads(x: np.ndarray) -> np.ndarray:
    """``[B, L, h, d]`` -> ``[B, h, 1, L, d]``, broadcastable against grouped queries."""
    return np.ascontiguousarray(x.transpose(0, 2, 1, 3)[:, :, None])


def _ungroup(o: np.ndarray) -> np.ndarray:
    """``[B, n_kv, g_q, L, d]`` -> ``[B, L, n_kv*g_q*d]``."""
    B, H, G, L, d = o.shape
    return np.ascontiguousarray(o.transpose(0, 3, 1, 2, 4).reshape(B, L, H * G * d))


def _swap(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.swapaxes(x, -1, -2))


def causal_mask(q_positions, k_len: int) -> np.ndarray:
    """``[Lq, k_len]`` boolean mask, True where key position <= query position."""
    q = np.asarray(q_positions, dtype=np.int64)
    return np.arange(k_len)[None, :] <= q[:, None]


def _check_input(cfg: AttnConfig, x: np.ndarray, cache: KvState) -> np.ndarray:
    x = np.asarray(x, dtype=FLOAT)
    if x.ndim != 3 or x.shape[2] != cfg.d_model:
        raise DimensionError(f"expected input [B, L, {cfg.d_model}], got {x.shape}")
    if x.shape[1] < 1:
        raise DimensionError("need at least one token")
    if x.shape[0] != cache.batch:
        raise DimensionError(f"batch {x.shape[0]} does not match cache batch {cache.batch}")
    return x


def _positions(cache: KvState, lq: int, positions) -> np.ndarray:
    expected = np.arange(cache.length, cache.length + lq)
    if positions is None:
        return expected
    pos = np.asarray(positions, dtype=np.int64)
    if pos.shape != expected.shape or not (pos == expected).all():
        raise StateError(
            f"positions {pos.tolist()} conflict with cache length {cache.length}; expected {expected.tolist()}"
        )
    return pos


def _latent_queries(cfg: AttnConfig, w: AttnWeights, x: np.ndarray, pos) -> tuple[np.ndarray, np.ndarray]:
    if cfg.q_rank is None:
        q_nope = matmul(x, w.wq)
        q_rope = matmul(x, w.wqr)
    else:
        cq = matmul(x, w.wdq)
        q_nope = matmul(cq, w.wuq)
        q_rope = matmul(cq, w.wuqr)
    rope = RopeParams(cfg.d_R, cfg.rope_base)
    return _heads(q_nope, cfg.h_q), apply_rope(_heads(q_rope, cfg.h_q), pos, rope)


def _project_new(cfg: AttnConfig, w: AttnWeights, x: np.ndarray, pos) -> tuple[dict, dict]:
    """Project new tokens into (queries, new cache entries)."""
    v = cfg.variant
    if v is Variant.GTA:
        q = _heads(matmul(x, w.wq), cfg.h_q)
        half = cfg.d_h // 2
        rope = RopeParams(half, cfg.rope_base)
        q = concat_last(q[..., :half], apply_rope(q[..., half:], pos, rope))
        kv = _heads(matmul(x, w.wkv), cfg.h_kv)
        kr = apply_rope(_heads(matmul(x, w.wkr), 1), pos, rope)
        return {"q": q}, {"kv": kv, "kr": kr}
    if v.latent:
        q_nope, q_rope = _latent_queries(cfg, w, x, pos)
        c = _heads(matmul(x, w.wdkv), cfg.h_c)
        kr = apply_rope(_heads(matmul(x, w.wkr), 1), pos, RopeParams(cfg.d_R, cfg.rope_base))
        return {"q_nope": q_nope, "q_rope": q_rope}, {"c": c, "kr": kr}
    rope = RopeParams(cfg.d_R, cfg.rope_base)
    q = apply_rope(_heads(matmul(x, w.wq), cfg.h_q), pos, rope)
    k = apply_rope(_heads(matmul(x, w.wk), cfg.h_kv), pos, rope)
    val = _heads(matmul(x, w.wv), cfg.h_kv)
    return {"q": q}, {"k": k, "v": val}


def _sdpa(q, k, v, mask, scale):
    """Grouped attention core: q ``[B,H,G,Lq,d]``, k/v ``[B,H,1,L,d]``."""
    scores = matmul(q, _swap(k))
    p = softmax_rows(scores, scale, mask)
    return matmul(p, v), p


def latent_absorbed(q_nope_g, q_rope_g, c, kr, wuk_g, wuv_g, mask, scale):
    """Absorbed latent attention for a slice of latent heads.

    q_nope_g: ``[B, H, G, Lq, d_h]`` and q_rope_g ``[B, H, G, Lq, d_R]`` for
    H latent heads with G query heads each; c: ``[B, L, H, d_c]``;
    kr: ``[B, L, 1, d_R]``; wuk_g/wuv_g: ``[H, G, d_c, d_h]``.
    Returns per-head outputs ``[B, H, G, Lq, d_h]`` and the probabilities.
    """
    c_h = _kv_heads(c)  # [B, H, 1, L, d_c]
    kr_h = _kv_heads(kr)  # [B, 1, 1, L, d_R]
    q_lat = matmul(q_nope_g, _swap(wuk_g)[None])  # [B, H, G, Lq, d_c]
    scores = matmul(q_lat, _swap(c_h)) + matmul(q_rope_g, _swap(kr_h))
    p = softmax_rows(scores, scale, mask)
    o_lat = matmul(p, c_h)  # [B, H, G, Lq, d_c]
    return matmul(o_lat, wuv_g[None]), p


def split_up_projection(cfg: AttnConfig, wu: np.ndarray) -> np.ndarray:
    """``[h_c, d_c, g_q*d_h]`` -> ``[h_c, g_q, d_c, d_h]`` (per query-head slices)."""
    return np.ascontiguousarray(wu.reshape(cfg.h_c, cfg.d_c, cfg.g_q, cfg.d_h).transpose(0, 2, 1, 3))


def _latent_materialized(cfg, w, c, kr, q_nope, q_rope, mask):
    """Rebuild per-head K = [c W_uk, rope(k_R)] and V = c W_uv, then run plain attention."""
    H, G = cfg.h_c, cfg.g_q
    c_h = _kv_heads(c)[:, :, 0]  # [B, H, L, d_c]
    k_nope = matmul(c_h, w.wuk[None])  # [B, H, L, G*d_h]
    v_full = matmul(c_h, w.wuv[None])
    B, _, L, _ = k_nope.shape
    k_nope = k_nope.reshape(B, H, L, G, cfg.d_h).transpose(0, 1, 3, 2, 4)  # [B,H,G,L,d_h]
    v_full = np.ascontiguousarray(v_full.reshape(B, H, L, G, cfg.d_h).transpose(0, 1, 3, 2, 4))
    k_rope = np.broadcast_to(_kv_heads(kr), (B, H, G, L, cfg.d_R))
    k = concat_last(k_nope, k_rope)
    q = concat_last(_group(q_nope, H), _group(q_rope, H))
    scores = matmul(q, _swap(k))
    p = softmax_rows(scores, cfg.score_scale, mask)
    return matmul(p, v_full), p


def attend(cfg: AttnConfig, w: AttnWeights, cache: KvState, x_new, positions=None, *, absorbed: bool) -> AttnResult:
    """Append ``x_new`` to ``cache`` and attend causally over everything cached.

    ``absorbed`` only matters for MLA/GLA: True runs the latent-space path,
    False rebuilds per-head keys and values.
    """
    x = _check_input(cfg, x_new, cache)
    pos = _positions(cache, x.shape[1], positions)
    queries, entries = _project_new(cfg, w, x, pos)
    new_cache = cache.append(**entries)
    mask = causal_mask(pos, new_cache.length)

    v = cfg.variant
    if v.latent:
        if absorbed:
            o, p = latent_absorbed(
                _group(queries["q_nope"], cfg.h_c),
                _group(queries["q_rope"], cfg.h_c),
                new_cache.c,
                new_cache.kr,
                split_up_projection(cfg, w.wuk),
                split_up_projection(cfg, w.wuv),
                mask,
                cfg.score_scale,
            )
        else:
            o, p = _latent_materialized(cfg, w, new_cache.c, new_cache.kr, queries["q_nope"], queries["q_rope"], mask)
    elif v is Variant.GTA:
        keys, values = gta_keys_values(cfg, new_cache.kv, new_cache.kr)
        o, p = _sdpa(_group(queries["q"], cfg.h_kv), _kv_heads(keys), _kv_heads(values), mask, cfg.score_scale)
    else:
        o, p = _sdpa(
            _group(queries["q"], cfg.h_kv), _kv_heads(new_cache.k), _kv_heads(new_cache.v), mask, cfg.score_scale
        )
    out = matmul(_ungroup(o), w.wo)
    return AttnResult(out, new_cache, p)


def gta_keys_values(cfg: AttnConfig, kv: np.ndarray, kr_rotated: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Keys and values from the tied state: K = [KV[..., :d_h/2], broadcast(k_R)], V = KV."""
    half = cfg.d_h // 2
    k = concat_last(kv[..., :half], broadcast_head(kr_rotated, cfg.h_kv))
    return k, kv


def gta_build_kv(cfg: AttnConfig, w: AttnWeights, x, positions=None):
    """Tied KV, keys, values and the (unrotated) single-head RoPE key for a GTA layer.

    Returns ``(KV, K, V, K_RoPE)``; K's second half is ``rope(K_RoPE)``
    broadcast over KV heads, its first half is the raw tied state.
    """
    if cfg.variant is not Variant.GTA:
        raise ConfigError("gta_build_kv needs a GTA config")
    x = np.asarray(x, dtype=FLOAT)
    if x.ndim != 3 or x.shape[2] != cfg.d_model:
        raise DimensionError(f"expected input [B, L, {cfg.d_model}], got {x.shape}")
    pos = np.arange(x.shape[1]) if positions is None else np.asarray(positions)
    kv = _heads(matmul(x, w.wkv), cfg.h_kv)
    k_rope_raw = _heads(matmul(x, w.wkr), 1)
    rotated = apply_rope(k_rope_raw, pos, RopeParams(cfg.d_h // 2, cfg.rope_base))
    k, v = gta_keys_values(cfg, kv, rotated)
    return kv, k, v, k_rope_raw


def prefill(cfg: AttnConfig, w: AttnWeights, x) -> tuple[np.ndarray, KvState]:
    """Causal attention over a prompt; returns outputs and the populated cache.

    Latent variants use the materialized form here and cache only latents
    plus the rotated decoupled key.
    """
    x = np.asarray(x, dtype=FLOAT)
    if x.ndim != 3:
        raise DimensionError(f"expected input [B, L, d_model], got {x.shape}")
    res = attend(cfg, w, KvState.empty(cfg, x.shape[0]), x, absorbed=False)
    return res.output, res.cache


def decode_step(cfg: AttnConfig, w: AttnWeights, cache: KvState, x_new, positions=None) -> tuple[np.ndarray, KvState]:
    """One decode step of ``Lq >= 1`` tokens (``Lq > 1`` models speculative decoding)."""
    res = attend(cfg, w, cache, x_new, positions, absorbed=True)
    return res.output, res.cache


def decode_reference_materialized(cfg: AttnConfig, w: AttnWeights, cache: KvState, x_new, positions=None) -> np.ndarray:
    return attend(cfg, w, cache, x_new, positions, absorbed=False).output
