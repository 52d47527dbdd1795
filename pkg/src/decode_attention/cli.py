"""Command-line entry point: ``decode-attn {verify,kvbytes,roofline,shard,simulate}``.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 I/O error.

Model config JSON
-----------------
A config file is either a single layer::

    {"variant": "GLA", "d_model": 1024, "h_q": 16, "d_h": 32, "h_c": 8, "d_R": 16}

or a model document whose shared fields apply to every entry of
``variants``; each entry carries a ``label`` plus the fields that differ::

    {"name": "xl", "d_model": 2048, "h_q": 16, "d_h": 128,
     "variants": [{"label": "GQA-4", "variant": "GQA", "h_kv": 4}, ...],
     "units": "bytes",
     "reference": {"GQA-4": {"1": 2048, "2": 1024}}}

Layer fields are those of ``AttnConfig``: ``variant`` (MHA, MQA, GQA, GTA,
MLA, GLA), ``d_model``, ``h_q``, ``d_h``, and optionally ``h_kv``, ``h_c``,
``d_c``, ``d_R``, ``m_kv``, ``q_rank``, ``rope_base``. ``reference`` holds
known per-token, per-device cache sizes keyed by TP degree, in ``units`` of
bytes or of ``d_h`` elements; ``kvbytes`` prints MATCH/MISMATCH against them.

Hardware profiles are ``{"name", "peak_flops", "mem_bw"}`` (FLOP/s, bytes/s,
optional ``ridge``); shipped ones can be named directly (``--hw h100``).
Workload files are described in ``data/workloads``: shared ``model`` fields,
``requests`` (``prefill``, ``decode``, optional ``repeat``), ``plans`` with
``label``, ``config``, ``tp``, ``dp``, and an ``expect`` block naming the
``faster``/``slower`` plan or ``"tie": true``.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path


from . import attention as attn
from . import verify
from .config import AttnConfig, load_model_file
from .errors import DecodeAttentionError, UsageError
from .hardware import load_profile
from .numerics import SeededRng
from .roofline import emit_roofline_csv, roofline_point
from .sharding import load_scenario, make_plan, kv_bytes_per_device, kv_heads_per_device, ordering_verdict, shard_decode_simulate

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


@dataclass
class RunManifest:
    command: str
    config_paths: list[str] = field(default_factory=list)
    seed: int | None = None
    outputs: list[str] = field(default_factory=list)
    exit_code: int = 0


def int_list(text: str) -> list[int]:
    try:
        values = [int(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _flatten(lists) -> list[int]:
    return [v for chunk in lists for v in chunk]


# -- commands ------------------------------------------------------------------


def cmd_verify(args, manifest: RunManifest) -> int:
    manifest.seed = args.seed
    checks = verify.run_suite(args.suite, args.seed)
    print(f"suite={args.suite} seed={args.seed}")
    print(verify.report(checks))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL


def _fmt(x: float) -> str:
    return f"{x:g}"


def cmd_kvbytes(args, manifest: RunManifest) -> int:
    manifest.config_paths.append(str(args.config))
    doc, variants = load_model_file(args.config)
    tps = _flatten(args.tp)
    ref_table = doc.get("reference", {})
    ref_units = doc.get("units", "bytes")
    unit = "d_h" if args.dh_units else "bytes"
    print(f"KV cache per token per device ({unit}); model={doc.get('name', Path(args.config).stem)}")
    label_w = max(len("variant"), *(len(lab) for lab, _ in variants))
    header = ["variant".ljust(label_w)] + [f"TP={tp}" for tp in tps]
    print("  ".join(header))
    mismatches = 0
    for label, cfg in variants:
        cells = []
        for tp in tps:
            b = kv_bytes_per_device(cfg, tp)
            shown = b / (2 * cfg.d_h) if args.dh_units else b
            cell = _fmt(shown)
            ref = ref_table.get(label, {}).get(str(tp))
            if ref is not None:
                ref_bytes = ref * 2 * cfg.d_h if ref_units == "d_h" else ref
                ok = ref_bytes == b
                mismatches += not ok
                ref_shown = ref_bytes / (2 * cfg.d_h) if args.dh_units else ref_bytes
                cell += f" [ref {_fmt(ref_shown)} {'MATCH' if ok else 'MISMATCH'}]"
            cells.append(cell)
        print("  ".join([label.ljust(label_w)] + cells))
    return EXIT_FAIL if mismatches else EXIT_OK


def _roofline_config(args) -> tuple[str, AttnConfig]:
    kw = dict(variant=args.variant, d_model=args.h_q * args.d_h, h_q=args.h_q, d_h=args.d_h)
    v = args.variant.upper()
    kw["variant"] = v
    if v in ("GQA", "GTA"):
        if args.h_kv is None:
            raise UsageError(f"{v} needs --h-kv")
        kw["h_kv"] = args.h_kv
    if v == "GLA":
        if args.h_c is None:
            raise UsageError("GLA needs --h-c")
        kw["h_c"] = args.h_c
    if v in ("MLA", "GLA"):
        kw["d_R"] = args.d_r
        if args.d_c is not None:
            kw["d_c"] = args.d_c
    cfg = AttnConfig(**kw)
    label = {"GQA": f"GQA-{cfg.h_kv}", "GTA": f"GTA-{cfg.h_kv}", "GLA": f"GLA-{cfg.h_c}"}.get(v, v)
    return label, cfg


def cmd_roofline(args, manifest: RunManifest) -> int:
    manifest.config_paths.append(str(args.hw))
    hw = load_profile(args.hw)
    label, cfg = _roofline_config(args)
    Ls, Lqs = _flatten(args.L), _flatten(args.Lq)
    points = [roofline_point(cfg, L, Lq, args.B, hw, label) for L in Ls for Lq in Lqs]
    text = emit_roofline_csv(points, hw)
    try:
        Path(args.out).write_text(text)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_IO
    manifest.outputs.append(str(args.out))
    for p in points:
        print(f"{p.variant} L={p.L} Lq={p.Lq} B={p.B}: ai={p.ai:.2f} FLOP/B -> {p.bound}-bound (ridge {hw.ridge:.1f})")
    return EXIT_OK


def _pick_config(path, label: str | None) -> tuple[str, AttnConfig]:
    _, variants = load_model_file(path)
    if label is None:
        if len(variants) != 1:
            raise UsageError(f"{path} holds {len(variants)} variants; choose one with --variant")
        return variants[0]
    for lab, cfg in variants:
        if lab == label:
            return lab, cfg
    raise UsageError(f"no variant {label!r} in {path}")


def cmd_shard(args, manifest: RunManifest) -> int:
    manifest.config_paths.append(str(args.config))
    manifest.seed = args.seed
    label, cfg = _pick_config(args.config, args.variant)
    plan = make_plan(cfg, args.tp, args.dp)
    print(f"{label}: TP={plan.N} DP={plan.DP} g_q={cfg.g_q} heads={cfg.n_kv_heads}")
    print(f"duplication factor D={plan.D}")
    if plan.zero_redundancy:
        print("zero redundancy: yes")
    elif plan.D == plan.N:
        print("zero redundancy: no (full duplication: every rank stores the whole cache)")
    else:
        print(f"zero redundancy: no (each head stored {plan.D}x)")
    print(f"heads per device: {kv_heads_per_device(cfg, args.tp)}")
    print(f"KV bytes per token per device: {kv_bytes_per_device(cfg, plan)}")
    if not cfg.variant.latent:
        return EXIT_OK
    rng = SeededRng(args.seed)
    w = attn.init_weights(cfg, rng)
    x = rng.normal((1, 9, cfg.d_model))
    _, cache = attn.prefill(cfg, w, x[:, :8])
    ref, _ = attn.decode_step(cfg, w, cache, x[:, 8:])
    got = shard_decode_simulate(cfg, w, cache, x[:, 8:], args.tp)
    err = verify.rel_err(got, ref)
    ok = err <= 1e-5
    print(f"sharded decode vs unsharded: max rel err {err:.3e} (tol 1.0e-05) {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_simulate(args, manifest: RunManifest) -> int:
    manifest.config_paths += [str(args.workload), str(args.hw)]
    hw = load_profile(args.hw)
    scn = load_scenario(args.workload)
    times = scn.times(hw)
    print(f"scenario {scn.name} on {hw.name}: {len(scn.workload.requests)} requests")
    for lab, t in times.items():
        print(f"  {lab}: {t * 1e6:.3f} us/step")
    ok, verdict = ordering_verdict(scn, times)
    print(verdict)
    return EXIT_OK if ok else EXIT_FAIL


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="decode-attn", description="Decode-attention verification suites, cache accounting, roofline and sharding analysis.")
    p.add_argument("--manifest", type=Path, help="write a JSON run manifest here")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run an invariant suite")
    v.add_argument("--suite", choices=("all",) + verify.SUITES, default="all")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    k = sub.add_parser("kvbytes", help="KV cache bytes per token per device")
    k.add_argument("config", type=Path)
    k.add_argument("--tp", type=int_list, nargs="+", default=[[1, 2]], help="TP degrees, e.g. 1,2,4")
    k.add_argument("--dh-units", action="store_true", help="print multiples of d_h instead of bytes")
    k.set_defaults(func=cmd_kvbytes)

    r = sub.add_parser("roofline", help="roofline points as CSV")
    r.add_argument("--hw", required=True, help="hardware profile JSON path or shipped name")
    r.add_argument("--variant", required=True, choices=("MHA", "MQA", "GQA", "GTA", "MLA", "GLA"), type=str.upper)
    r.add_argument("--h-q", type=int, required=True)
    r.add_argument("--h-kv", type=int)
    r.add_argument("--h-c", type=int)
    r.add_argument("--d-h", type=int, default=128)
    r.add_argument("--d-c", type=int)
    r.add_argument("--d-r", type=int, default=32, help="decoupled RoPE width for MLA/GLA")
    r.add_argument("--L", type=int_list, nargs="+", required=True)
    r.add_argument("--Lq", type=int_list, nargs="+", default=[[1]])
    r.add_argument("--B", type=int, default=1)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_roofline)

    s = sub.add_parser("shard", help="TP/DP placement report")
    s.add_argument("config", type=Path)
    s.add_argument("--tp", type=int, required=True)
    s.add_argument("--dp", type=int, default=1)
    s.add_argument("--variant", help="label to pick from a multi-variant config")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_shard)

    m = sub.add_parser("simulate", help="straggler step-time comparison")
    m.add_argument("workload", type=Path)
    m.add_argument("--hw", required=True)
    m.set_defaults(func=cmd_simulate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    manifest = RunManifest(command=args.command)
    try:
        code = args.func(args, manifest)
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except DecodeAttentionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_IO
    manifest.exit_code = code
    if args.manifest is not None:
        try:
            args.manifest.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            print(f"error: cannot write manifest: {exc}", file=sys.stderr)
            return EXIT_IO
    return code


if __name__ == "__main__":
    sys.exit(main())
