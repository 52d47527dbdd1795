"""Invariant suites behind ``decode-attn verify``.

Each check returns a :class:`Check` with the measured error and the
tolerance it was held to. Everything is driven by one seed, so a report is
byte-identical across runs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import attention as attn
from .config import AttnConfig, Variant, load_model_file
from .hardware import H100
from .kvcache import PagedCache, gather_cooperative, gather_naive, naive_addresses, shuffle_source, lane_row
from .numerics import SeededRng
from .rope import RopeParams, apply_rope
from .roofline import ai_asymptote, ai_closed_form, closed_form_for, decode_flops_bytes, roofline_point
from .sharding import (
    duplication_factor,
    kv_bytes_per_device,
    load_scenario,
    ordering_verdict,
    shard_decode_simulate,
    zero_redundancy,
)

SUITES = ("attention", "kvcache", "sharding", "roofline")


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    measured: float | str
    tol: float | str
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        m = f"{self.measured:.3e}" if isinstance(self.measured, float) else str(self.measured)
        t = f"{self.tol:.1e}" if isinstance(self.tol, float) else str(self.tol)
        tail = f" ({self.detail})" if self.detail else ""
        return f"{status} {self.name}: measured={m} tol={t}{tail}"


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-30))


def data_path(*parts: str):
    return resources.files("decode_attention").joinpath("data", *parts)


# -- attention -----------------------------------------------------------------


def random_latent_case(rng: SeededRng, variant: str | None = None):
    """A small random MLA/GLA config, weights, cache and step input (B<=2, L<=64, h_q<=16, Lq in {1,2})."""
    variant = variant or ("MLA", "GLA")[int(rng.integers(0, 2))]
    h_q = int((2, 4, 8, 16)[int(rng.integers(0, 4))])
    d_h = int((8, 16)[int(rng.integers(0, 2))])
    d_R = int((0, 4, 8)[int(rng.integers(0, 3))])
    if variant == "GLA":
        divisors = [h for h in (1, 2, 4, 8) if h_q % h == 0]
        h_c = divisors[int(rng.integers(0, len(divisors)))]
        cfg = AttnConfig("GLA", d_model=32, h_q=h_q, d_h=d_h, h_c=h_c, d_R=d_R)
    else:
        cfg = AttnConfig("MLA", d_model=32, h_q=h_q, d_h=d_h, d_R=d_R)
    B = int(rng.integers(1, 3))
    L = int(rng.integers(1, 63))
    Lq = int(rng.integers(1, 3))
    w = attn.init_weights(cfg, rng)
    x = rng.normal((B, L + Lq, cfg.d_model))
    _, cache = attn.prefill(cfg, w, x[:, :L])
    return cfg, w, cache, x[:, L:]


def check_absorption(seed: int, n: int = 50) -> Check:
    rng = SeededRng(seed)
    worst = 0.0
    for _ in range(n):
        cfg, w, cache, x_new = random_latent_case(rng)
        absorbed, _ = attn.decode_step(cfg, w, cache, x_new)
        ref = attn.decode_reference_materialized(cfg, w, cache, x_new)
        worst = max(worst, rel_err(absorbed, ref))
    return Check(f"absorbed decode == materialized ({n} configs)", worst <= 1e-4, worst, 1e-4)


def _pair_outputs(cfg_a, cfg_b, seed, L=9):
    rng = SeededRng(seed)
    w = attn.init_weights(cfg_a, rng)
    x = SeededRng(seed + 1).normal((2, L, cfg_a.d_model))
    o_a, _ = attn.prefill(cfg_a, w, x)
    o_b, _ = attn.prefill(cfg_b, w, x)
    return o_a, o_b


def check_degeneracy(seed: int, n: int = 10) -> list[Check]:
    pairs = [
        ("GQA(h_kv=h_q) == MHA", AttnConfig("GQA", 24, 4, 8, h_kv=4), AttnConfig("MHA", 24, 4, 8)),
        ("GQA(h_kv=1) == MQA", AttnConfig("GQA", 24, 4, 8, h_kv=1), AttnConfig("MQA", 24, 4, 8)),
        ("GLA(h_c=1,d_c=4d_h) == MLA", AttnConfig("GLA", 24, 4, 8, h_c=1, d_c=32), AttnConfig("MLA", 24, 4, 8)),
    ]
    out = []
    for name, a, b in pairs:
        worst = 0.0
        for s in range(n):
            o_a, o_b = _pair_outputs(a, b, seed * 1000 + s)
            worst = max(worst, float(np.abs(o_a - o_b).max()))
        out.append(Check(name, worst <= 1e-6, worst, 1e-6))
    return out


def check_gta_structure(seed: int, n: int = 10) -> Check:
    bad = []
    for s in range(n):
        rng = SeededRng(seed * 1000 + s)
        cfg = AttnConfig("GTA", d_model=64, h_q=8, d_h=16, h_kv=2)
        w = attn.init_weights(cfg, rng)
        x = rng.normal((2, 7, cfg.d_model))
        kv, k, v, k_rope = attn.gta_build_kv(cfg, w, x)
        half = cfg.d_h // 2
        rotated = apply_rope(k_rope, np.arange(7), RopeParams(half))
        ok = (
            np.array_equal(v, kv)
            and np.array_equal(k[..., :half], kv[..., :half])
            and k.shape[-1] == cfg.d_h
            and all(np.array_equal(k[:, :, h, half:], rotated[:, :, 0]) for h in range(cfg.h_kv))
        )
        if not ok:
            bad.append(s)
    return Check(f"GTA tied-KV structure ({n} seeds)", not bad, f"{len(bad)} bad", "0 bad")


def check_sequential(seed: int) -> Check:
    worst = 0.0
    for i, kw in enumerate(
        [dict(variant="MHA"), dict(variant="GQA", h_kv=2), dict(variant="GTA", h_kv=2), dict(variant="MLA"), dict(variant="GLA", h_c=2)]
    ):
        cfg = AttnConfig(d_model=32, h_q=4, d_h=8, **kw)
        rng = SeededRng(seed * 100 + i)
        w = attn.init_weights(cfg, rng)
        x = rng.normal((2, 12, cfg.d_model))
        _, cache = attn.prefill(cfg, w, x[:, :11])
        o_step, _ = attn.decode_step(cfg, w, cache, x[:, 11:])
        o_full, _ = attn.prefill(cfg, w, x)
        worst = max(worst, float(np.abs(o_step - o_full[:, 11:]).max()))
    return Check("prefill(L)+decode(1) == prefill(L+1)", worst <= 1e-5, worst, 1e-5)


def check_causal(seed: int) -> Check:
    bad = 0
    for i, v in enumerate(Variant):
        kw = {"h_kv": 2} if v in (Variant.GQA, Variant.GTA) else {"h_c": 2} if v is Variant.GLA else {}
        cfg = AttnConfig(v, d_model=32, h_q=4, d_h=8, **kw)
        rng = SeededRng(seed * 100 + i)
        w = attn.init_weights(cfg, rng)
        x = rng.normal((1, 8, cfg.d_model))
        o, _ = attn.prefill(cfg, w, x)
        x2 = x.copy()
        x2[:, 5:] += 1.0
        o2, _ = attn.prefill(cfg, w, x2)
        if not np.array_equal(o[:, :5], o2[:, :5]):
            bad += 1
    return Check("causal mask (perturb future tokens)", bad == 0, f"{bad} variants leak", "0")


def run_attention(seed: int) -> list[Check]:
    return [
        check_absorption(seed),
        *check_degeneracy(seed),
        check_gta_structure(seed),
        check_sequential(seed),
        check_causal(seed),
    ]


# -- kvcache -------------------------------------------------------------------


def random_paged_cache(rng: SeededRng, page_size: int, n_rows: int, d: int = 128) -> tuple[PagedCache, int, np.ndarray]:
    cache = PagedCache(d, page_size, rng=rng)
    # a decoy sequence interleaves allocations so page tables are scattered
    decoy = cache.new_sequence()
    seq = cache.new_sequence()
    rows = rng.normal((n_rows, d))
    step = max(1, int(rng.integers(1, 4 * page_size + 1)))
    for start in range(0, n_rows, step):
        cache.append_tokens(seq, rows[start : start + step])
        cache.append_tokens(decoy, rng.normal((int(rng.integers(0, page_size + 1)), d)))
    return cache, seq, rows


def check_cooperative_oracle(seed: int, n: int = 200) -> Check:
    rng = SeededRng(seed)
    matches = 0
    for i in range(n):
        page_size = (1, 2, 8, 64)[i % 4]
        n_rows = int(rng.integers(128, 320))
        cache, seq, _ = random_paged_cache(rng, page_size, n_rows)
        start = int(rng.integers(0, n_rows - 128 + 1))
        data, trace = gather_cooperative(cache, seq, start)
        rows = list(range(start, start + 128))
        ref_addr = naive_addresses(cache, seq, rows)
        coop_addr = [trace.address_of(r) for r in range(128)]
        if coop_addr == ref_addr and np.array_equal(data, gather_naive(cache, seq, rows)):
            matches += 1
    return Check("cooperative gather == naive oracle", matches == n, f"{matches}/{n} oracle matches", f"{n}/{n}")


def check_lane_layout(seed: int) -> list[Check]:
    rng = SeededRng(seed)
    cache, seq, _ = random_paged_cache(rng, 8, 128)
    _, trace = gather_cooperative(cache, seq, 0)
    per_lane = trace.offsets_per_lane
    groups_ok = all(
        sorted(trace.computed_row(t) for t in range(g * 16, g * 16 + 16)) == list(range(g, 128, 8)) for g in range(8)
    )
    formula_ok = all(trace.source_lane(r) == shuffle_source(r) and lane_row(shuffle_source(r)) == r for r in range(128))
    spot = trace.computed_row(17) == 9 and trace.source_lane(9) == 17
    return [
        Check("one stored offset per lane", max(per_lane) == 1 and min(per_lane) == 1, f"max={max(per_lane)}", "1"),
        Check("group g covers rows g, g+8, ..., g+120", groups_ok, str(groups_ok), "True"),
        Check("shuffle source lane g*16+(r-g)/8", formula_ok and spot, "lane 17 <-> row 9" if spot else "spot failed", "True"),
    ]


def check_page_size_invariance(seed: int) -> Check:
    rows = SeededRng(seed).normal((256, 128))
    outs = []
    for ps in (1, 2, 8, 64):
        cache = PagedCache(128, ps, rng=SeededRng(seed + ps))
        seq = cache.new_sequence()
        cache.append_tokens(seq, rows)
        outs.append(gather_cooperative(cache, seq, 64)[0])
    ok = all(np.array_equal(outs[0], o) for o in outs[1:]) and np.array_equal(outs[0], rows[64:192])
    return Check("gathered data independent of page size", ok, str(ok), "True")


def run_kvcache(seed: int) -> list[Check]:
    return [check_cooperative_oracle(seed), *check_lane_layout(seed), check_page_size_invariance(seed)]


# -- sharding ------------------------------------------------------------------


def check_duplication_exhaustive() -> Check:
    bad = 0
    for h_q in range(1, 65):
        for N in (1, 2, 4, 8):
            for g_q in (g for g in range(1, h_q + 1) if h_q % g == 0):
                D = duplication_factor(N, g_q, h_q)
                if not (1 <= D <= N) or ((D == 1) != zero_redundancy(N, g_q, h_q)):
                    bad += 1
    return Check("1<=D<=N and D=1 iff g_q<=floor(h_q/N)", bad == 0, f"{bad} violations", "0")


def kv_table_cells(name: str):
    """Yield (label, tp, computed, reference) for every reference cell of a shipped model table."""
    doc, variants = load_model_file(data_path("models", f"{name}.json"))
    for label, cfg in variants:
        for tp, ref in doc["reference"][label].items():
            b = kv_bytes_per_device(cfg, int(tp))
            value = b / (2 * cfg.d_h) if doc.get("units") == "d_h" else b
            yield label, int(tp), value, ref


def check_kv_tables() -> list[Check]:
    out = []
    for name in ("xl", "llama8b"):
        cells = list(kv_table_cells(name))
        bad = [(lab, tp) for lab, tp, v, ref in cells if v != ref]
        out.append(Check(f"kv bytes/token table '{name}'", not bad, f"{len(cells) - len(bad)}/{len(cells)} cells", "exact"))
    return out


def check_shard_equivalence(seed: int) -> Check:
    worst = 0.0
    for i, (h_c, N) in enumerate(((2, 2), (4, 4), (8, 8), (4, 2), (1, 1), (2, 4))):
        rng = SeededRng(seed * 100 + i)
        cfg = AttnConfig("GLA", d_model=32, h_q=16, d_h=8, h_c=h_c)
        w = attn.init_weights(cfg, rng)
        x = rng.normal((2, 13, cfg.d_model))
        _, cache = attn.prefill(cfg, w, x[:, :12])
        ref, _ = attn.decode_step(cfg, w, cache, x[:, 12:])
        worst = max(worst, rel_err(shard_decode_simulate(cfg, w, cache, x[:, 12:], N), ref))
    return Check("sharded GLA decode == unsharded", worst <= 1e-5, worst, 1e-5)


def check_scenarios() -> list[Check]:
    out = []
    for name in ("kernel_imbalance", "imbalance_131k", "uniform"):
        scn = load_scenario(data_path("workloads", f"{name}.json"))
        ok, verdict = ordering_verdict(scn, scn.times(H100))
        out.append(Check(f"straggler ordering '{scn.name}'", ok, verdict, "ordering"))
    return out


def run_sharding(seed: int) -> list[Check]:
    return [check_duplication_exhaustive(), *check_kv_tables(), check_shard_equivalence(seed), *check_scenarios()]


# -- roofline ------------------------------------------------------------------


def table_columns(h_q: int = 128) -> list[tuple[str, str, int, int, float]]:
    """(label, variant, g_q, m_kv, stated asymptote) for every closed-form column."""
    return [
        ("MHA", "MHA", 1, 2, 1.0),
        ("MQA", "MQA", h_q, 2, float(h_q)),
        ("GQA-16", "GQA", h_q // 16, 2, float(h_q // 16)),
        ("GTA-16", "GTA", h_q // 16, 1, 2.0 * (h_q // 16)),
        ("MLA", "MLA", h_q, 1, 2.0 * h_q),
        ("GLA-2", "GLA", h_q // 2, 1, float(h_q)),
        ("GLA-8", "GLA", h_q // 8, 1, 2.0 * (h_q // 8)),
    ]


def roofline_family(h_q: int = 128) -> list[tuple[str, AttnConfig]]:
    """Concrete h_q=128 configs (d_h=128, decoupled RoPE width 32) used for cross-checks."""
    base = dict(d_model=4096, h_q=h_q, d_h=128)
    return [
        ("MHA", AttnConfig("MHA", **base)),
        ("MQA", AttnConfig("MQA", **base)),
        ("GQA-16", AttnConfig("GQA", h_kv=16, **base)),
        ("GTA-16", AttnConfig("GTA", h_kv=16, **base)),
        ("MLA", AttnConfig("MLA", d_R=32, **base)),
        ("GLA-2", AttnConfig("GLA", h_c=2, d_R=32, **base)),
        ("GLA-8", AttnConfig("GLA", h_c=8, d_R=32, **base)),
    ]


def run_roofline(seed: int) -> list[Check]:
    del seed  # analytic suite
    out = []
    worst = 0.0
    for _, v, g, m, asym in table_columns():
        ai = ai_closed_form(v, 1e6, 128, g, m)
        worst = max(worst, abs(ai - asym) / asym, abs(ai_asymptote(g, m) - asym) / asym)
    out.append(Check("closed forms at L=1e6 vs asymptotes", worst <= 5e-3, worst, 5e-3))
    mla = ai_closed_form("MLA", 8192, 128, 128, 1)
    out.append(Check("MLA h_q=128 L=8192", abs(mla - 248.24) <= 0.01, f"{mla:.4f}", "248.24+-0.01"))
    worst = 0.0
    for _, cfg in roofline_family():
        f, b = decode_flops_bytes(cfg, 65536, 1, 1)
        worst = max(worst, abs(f / b - closed_form_for(cfg, 65536)) / closed_form_for(cfg, 65536))
    out.append(Check("explicit accounting vs closed form at L=65536", worst <= 0.05, worst, 0.05))
    fam = dict(roofline_family())
    m1 = roofline_point(fam["MLA"], 65536, 1, 1, H100)
    m2 = roofline_point(fam["MLA"], 65536, 2, 1, H100)
    g1 = roofline_point(fam["GLA-2"], 65536, 1, 1, H100)
    g2 = roofline_point(fam["GLA-2"], 65536, 2, 1, H100)
    out.append(Check("MLA memory-bound at Lq=1", m1.bound == "memory", f"ai={m1.ai:.1f}", f"< {H100.ridge:.1f}"))
    out.append(Check("MLA compute-bound at Lq=2", m2.bound == "compute", f"ai={m2.ai:.1f}", f">= {H100.ridge:.1f}"))
    out.append(
        Check(
            "GLA-2 memory-bound at Lq=1 with ai~128",
            g1.bound == "memory" and abs(g1.ai - 128) / 128 <= 0.05,
            f"ai={g1.ai:.1f}",
            "128+-5%",
        )
    )
    dev = abs(g2.ai - H100.ridge) / H100.ridge
    out.append(Check("GLA-2 at Lq=2 near the ridge", dev <= 0.15, dev, 0.15, f"ai={g2.ai:.1f}"))
    return out


RUNNERS = {"attention": run_attention, "kvcache": run_kvcache, "sharding": run_sharding, "roofline": run_roofline}


def run_suite(name: str, seed: int) -> list[Check]:
    if name == "all":
        return list(itertools.chain.from_iterable(RUNNERS[s](seed) for s in SUITES))
    return RUNNERS[name](seed)


def report(checks: list[Check]) -> str:
    lines = [c.line() for c in checks]
    passed = sum(c.passed for c in checks)
    lines.append(f"{passed}/{len(checks)} checks passed")
    return "\n".join(lines)
