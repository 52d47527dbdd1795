"""Tensor/data-parallel placement: duplication, per-device KV bytes,
sharded GLA decode, and a straggler step-time model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import AttnWeights, KvState, _check_input, _group, _heads, _positions, causal_mask, latent_absorbed
from .config import AttnConfig
from .errors import ConfigError
from .hardware import HardwareProfile
from .kvcache import DTYPE_BYTES, per_token_elements
from .numerics import FLOAT, matmul
from .rope import RopeParams, apply_rope


def duplication_factor(N: int, g_q: int, h_q: int) -> int:
    """Copies of each KV/latent head across ``N`` TP ranks: ceil(N * g_q / h_q)."""
    if min(N, g_q, h_q) < 1:
        raise ConfigError("N, g_q and h_q must be positive")
    if h_q % g_q:
        raise ConfigError(f"group size {g_q} does not divide h_q={h_q}")
    D = -(-N * g_q // h_q)
    assert 1 <= D <= N
    return D


def zero_redundancy(N: int, g_q: int, h_q: int) -> bool:
    return g_q <= h_q // N


@dataclass(frozen=True)
class ShardPlan:
    """Placement of KV (or latent) heads on ``N`` TP ranks, replicated over ``DP`` groups.

    ``assignment`` maps each KV/latent head to the ranks holding a copy;
    ``query_heads`` lists the query heads each rank evaluates.
    """

    N: int
    DP: int
    D: int
    assignment: dict[int, list[int]]
    query_heads: list[list[int]] = field(default_factory=list)

    def heads_on(self, rank: int) -> list[int]:
        return sorted(h for h, ranks in self.assignment.items() if rank in ranks)

    @property
    def zero_redundancy(self) -> bool:
        return self.D == 1


def make_plan(cfg: AttnConfig, N: int, DP: int = 1) -> ShardPlan:
    if N < 1 or DP < 1:
        raise ConfigError("TP and DP degrees must be positive")
    heads = cfg.n_kv_heads
    if heads % N and N % heads:
        raise ConfigError(f"{heads} KV/latent heads cannot be split evenly over TP={N}")
    D = duplication_factor(N, cfg.g_q, cfg.h_q)
    assignment: dict[int, list[int]] = {}
    query_heads: list[list[int]] = [[] for _ in range(N)]
    if heads >= N:
        per = heads // N
        for h in range(heads):
            r = h // per
            assignment[h] = [r]
            query_heads[r].extend(range(h * cfg.g_q, (h + 1) * cfg.g_q))
    else:
        if cfg.g_q % D:
            raise ConfigError(f"group of {cfg.g_q} query heads cannot be split over {D} replicas")
        share = cfg.g_q // D
        for h in range(heads):
            ranks = list(range(h * D, (h + 1) * D))
            assignment[h] = ranks
            for k, r in enumerate(ranks):
                start = h * cfg.g_q + k * share
                query_heads[r].extend(range(start, start + share))
    return ShardPlan(N=N, DP=DP, D=D, assignment=assignment, query_heads=query_heads)


def kv_heads_per_device(cfg: AttnConfig, N: int) -> int:
    """Whole KV/latent heads each rank stores; never below one (no sub-head splitting)."""
    return -(-cfg.n_kv_heads // N)


def kv_bytes_per_device(cfg: AttnConfig, plan: ShardPlan | int) -> int:
    """Per-token cached bytes on one TP rank.

    Heads shard across ranks down to one whole head per rank; the single
    decoupled RoPE key head (GTA, MLA, GLA) is replicated on every rank.
    """
    N = plan if isinstance(plan, int) else plan.N
    if N < 1:
        raise ConfigError("TP degree must be positive")
    return per_token_elements(cfg, kv_heads_per_device(cfg, N)) * DTYPE_BYTES


# -- sharded latent decode ----------------------------------------------------


def _rank_output(cfg: AttnConfig, w: AttnWeights, cache: KvState, x, pos, q_heads: list[int]) -> np.ndarray:
    """Partial output ``O_r W_r^{vo}`` of one rank holding ``q_heads`` (whole groups or a slice of one)."""
    g = cfg.g_q
    latents = sorted({j // g for j in q_heads})
    local = sorted({j % g for j in q_heads})
    if len(q_heads) != len(latents) * len(local):
        raise ConfigError("rank query heads must form a rectangle of latent heads x group slots")
    dh, dR = cfg.d_h, cfg.d_R

    # column-parallel query projection restricted to this rank's heads
    def cols(width):
        return np.concatenate([np.arange(j * width, (j + 1) * width) for j in q_heads])

    if cfg.q_rank is None:
        q_nope = matmul(x, w.wq[:, cols(dh)])
        q_rope = matmul(x, w.wqr[:, cols(dR)])
    else:
        cq = matmul(x, w.wdq)
        q_nope = matmul(cq, w.wuq[:, cols(dh)])
        q_rope = matmul(cq, w.wuqr[:, cols(dR)])
    hq_local = len(q_heads)
    q_nope = _heads(q_nope, hq_local)
    q_rope = apply_rope(_heads(q_rope, hq_local), pos, RopeParams(dR, cfg.rope_base))

    # rank-local latents: cached slice plus this step's entries
    lat_cols = np.concatenate([np.arange(i * cfg.d_c, (i + 1) * cfg.d_c) for i in latents])
    c_new = _heads(matmul(x, w.wdkv[:, lat_cols]), len(latents))
    kr_new = apply_rope(_heads(matmul(x, w.wkr), 1), pos, RopeParams(dR, cfg.rope_base))
    c = np.concatenate([cache.c[:, :, latents], c_new], axis=1)
    kr = np.concatenate([cache.kr, kr_new], axis=1)

    def up(wu):
        s = wu.reshape(cfg.h_c, cfg.d_c, g, dh).transpose(0, 2, 1, 3)
        return np.ascontiguousarray(s[latents][:, local])

    mask = causal_mask(pos, c.shape[1])
    o, _ = latent_absorbed(
        _group(q_nope, len(latents)),
        _group(q_rope, len(latents)),
        c,
        kr,
        up(w.wuk),
        up(w.wuv),
        mask,
        cfg.score_scale,
    )
    B, H, G, Lq, _ = o.shape
    o = np.ascontiguousarray(o.transpose(0, 3, 1, 2, 4).reshape(B, Lq, H * G * dh))
    return matmul(o, w.wo[cols(dh)])


def shard_decode_simulate(
    cfg: AttnConfig,
    w: AttnWeights,
    cache: KvState,
    x_new,
    N: int,
    positions=None,
    rank_order: list[int] | None = None,
) -> np.ndarray:
    """Decode one step with latent heads spread over ``N`` simulated TP ranks.

    Each rank attends with its own latent head(s) and query group, applies
    its row-slice of the output projection, and the partial outputs are
    summed in ``rank_order`` (the AllReduce).
    """
    if not cfg.variant.latent:
        raise ConfigError("sharded latent decode needs an MLA or GLA config")
    plan = make_plan(cfg, N)
    x = _check_input(cfg, x_new, cache)
    pos = _positions(cache, x.shape[1], positions)
    order = list(range(N)) if rank_order is None else list(rank_order)
    if sorted(order) != list(range(N)):
        raise ConfigError(f"rank_order must be a permutation of 0..{N - 1}")
    partials = [_rank_output(cfg, w, cache, x, pos, plan.query_heads[r]) for r in range(N)]
    total = partials[order[0]]
    for r in order[1:]:
        total = total + partials[r]
    return total.astype(FLOAT)


# -- straggler model ----------------------------------------------------------


@dataclass(frozen=True)
class Request:
    prefill: int
    decode: int = 0

    @property
    def kv_len(self) -> int:
        """KV length at the last decode step (the step the model prices)."""
        return self.prefill + self.decode


@dataclass(frozen=True)
class WorkloadSpec:
    """Requests in flight and, optionally, which DP group each one lives on.

    Without an explicit assignment, request ``i`` goes to group ``i % DP``.
    """

    requests: tuple[Request, ...]
    concurrency: int | None = None
    assignment: tuple[int, ...] | None = None
    query_len: int = 1

    def __post_init__(self):
        if not self.requests:
            raise ConfigError("workload has no requests")
        for r in self.requests:
            if r.prefill < 0 or r.decode < 0:
                raise ConfigError("request lengths must be nonnegative")
        if self.assignment is not None and len(self.assignment) != len(self.requests):
            raise ConfigError("assignment must map every request to exactly one DP group")

    def groups(self, DP: int) -> list[list[Request]]:
        assign = self.assignment or tuple(i % DP for i in range(len(self.requests)))
        out: list[list[Request]] = [[] for _ in range(DP)]
        for req, gidx in zip(self.requests, assign):
            if not 0 <= gidx < DP:
                raise ConfigError(f"DP group {gidx} outside [0, {DP})")
            out[gidx].append(req)
        return out


@dataclass(frozen=True)
class RankCost:
    """Per-token cost on one TP rank: bytes streamed and FLOPs per query token."""

    bytes_per_token: float
    flops_per_token: float


def rank_cost(cfg: AttnConfig, tp: int) -> RankCost:
    """Decode cost per KV token on one rank of a TP=``tp`` group.

    Query heads split evenly over ranks; bytes follow :func:`kv_bytes_per_device`.
    """
    if cfg.h_q % tp:
        raise ConfigError(f"h_q={cfg.h_q} query heads cannot be split over TP={tp}")
    make_plan(cfg, tp)
    flops = 2.0 * (cfg.h_q // tp) * (cfg.d_qk + cfg.d_v)
    return RankCost(float(kv_bytes_per_device(cfg, tp)), flops)


def straggler_step_time(
    workload: WorkloadSpec,
    per_rank_bytes: float,
    per_rank_flops: float,
    hw: HardwareProfile,
    DP: int = 1,
    comm_seconds: float = 0.0,
) -> float:
    """Predicted seconds for one decode step under barrier semantics.

    Every TP rank of a DP group streams the caches of all of that group's
    requests, so its time is ``max(sum(L) * bytes / mem_bw, sum(L) * flops
    * Lq / peak_flops)``. TP ranks within a group are symmetric; the step
    ends when the slowest DP group finishes.
    """
    if per_rank_bytes < 0 or per_rank_flops < 0:
        raise ConfigError("costs must be nonnegative")
    worst = 0.0
    for reqs in workload.groups(DP):
        tokens = float(sum(r.kv_len for r in reqs))
        t = max(
            tokens * per_rank_bytes / hw.mem_bw,
            tokens * per_rank_flops * workload.query_len / hw.peak_flops,
        )
        worst = max(worst, t)
    return worst + comm_seconds


@dataclass(frozen=True)
class PlanSpec:
    label: str
    cfg: AttnConfig
    tp: int
    dp: int = 1

    def step_time(self, workload: WorkloadSpec, hw: HardwareProfile, comm_seconds: float = 0.0) -> float:
        cost = rank_cost(self.cfg, self.tp)
        return straggler_step_time(workload, cost.bytes_per_token, cost.flops_per_token, hw, self.dp, comm_seconds)


@dataclass(frozen=True)
class Scenario:
    """A workload, the plans to compare on it, and the expected ordering."""

    name: str
    workload: WorkloadSpec
    plans: tuple[PlanSpec, ...]
    faster: str | None = None
    slower: str | None = None
    tie: bool = False
    comm_seconds: float = 0.0

    def times(self, hw: HardwareProfile) -> dict[str, float]:
        return {p.label: p.step_time(self.workload, hw, self.comm_seconds) for p in self.plans}


def load_scenario(path) -> Scenario:
    """Parse a workload JSON document (see ``data/workloads`` for examples)."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        base = doc.get("model", {})
        reqs = []
        for r in doc["requests"]:
            repeat = int(r.get("repeat", 1))
            reqs.extend([Request(int(r["prefill"]), int(r.get("decode", 0)))] * repeat)
        assignment = doc.get("assignment")
        workload = WorkloadSpec(
            requests=tuple(reqs),
            concurrency=doc.get("concurrency"),
            assignment=None if assignment is None else tuple(int(a) for a in assignment),
            query_len=int(doc.get("query_len", 1)),
        )
        plans = tuple(
            PlanSpec(p["label"], AttnConfig.from_dict({**base, **p["config"]}), int(p.get("tp", 1)), int(p.get("dp", 1)))
            for p in doc["plans"]
        )
        expect = doc.get("expect", {})
        return Scenario(
            name=doc.get("name", Path(path).stem),
            workload=workload,
            plans=plans,
            faster=expect.get("faster"),
            slower=expect.get("slower"),
            tie=bool(expect.get("tie", False)),
            comm_seconds=float(doc.get("comm_seconds", 0.0)),
        )
    except (KeyError, TypeError, AttributeError) as exc:
        raise ConfigError(f"{path}: malformed workload ({exc!r})") from exc


def ordering_verdict(scn: Scenario, times: dict[str, float], tol: float = 1e-9) -> tuple[bool, str]:
    """Check the scenario's expected ordering; returns (consistent, verdict line)."""
    if scn.tie:
        vals = list(times.values())
        lo, hi = min(vals), max(vals)
        ok = (hi - lo) <= tol * max(hi, 1e-30)
        names = " = ".join(times)
        return ok, f"{names}: {'CONSISTENT' if ok else 'INCONSISTENT'} with expected tie"
    if scn.faster is None or scn.slower is None:
        return True, "no ordering expectation"
    ok = times[scn.faster] < times[scn.slower]
    verdict = "CONSISTENT" if ok else "INCONSISTENT"
    return ok, f"{scn.faster} < {scn.slower}: {verdict} with expected ordering"


def per_device_bytes_report(cfg: AttnConfig, N: int) -> dict:
    plan = make_plan(cfg, N)
    return {
        "D": plan.D,
        "zero_redundancy": plan.zero_redundancy,
        "bytes_per_token": kv_bytes_per_device(cfg, plan),
        "heads_per_device": kv_heads_per_device(cfg, N),
        "full_duplication": plan.D == N and N > 1,
    }
