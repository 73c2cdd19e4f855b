"""Command-line entry point.

One command per process::

    bimamba gradcheck  --seed 0 --out runs/gradcheck
    bimamba equiv      --seed 7 --out r/
    bimamba bench      [--config bench.json] --out runs/bench
    bimamba boundary   --config spirals.json --seed 0 --out runs/spirals
    bimamba denoise    --config denoise.json --seed 0 --out runs/denoise
    bimamba paramcount --config mamba.json
    bimamba export-grid --run-dir runs/spirals --out exported/

Every command writes a RunReport JSON under --out; the report's content is
deterministic for a fixed seed except for the top-level "timings" key, so
two runs agree byte-for-byte once that key is dropped. Config files are
strict JSON: they must carry ``schema_version`` and unknown keys are errors.
``--json`` prints the report to stdout for machines. The environment
variable ``BIMAMBA_THREADS`` caps BLAS worker threads (default 1).

Exit codes: 0 success / all checks pass, 1 check or training failure,
2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .bidirectional import PARAM_COUNT_VARIANTS, param_count
from .blocks import _check_keys
from .errors import ConfigError, DomainError, ShapeError
from .experiments import (
    SCHEMA_VERSION,
    BoundaryConfig,
    DenoiseConfig,
    export_grid,
    run_boundary_experiment,
    run_denoise_experiment,
    write_report,
)
from .mamba import MambaConfig
from .profiling import time_scaling, write_cost_csv
from .verification import (
    gradient_suite,
    lti_equivalence_suite,
    reversal_suite,
    scan_equivalence_suite,
)

__all__ = ["dispatch", "main"]

COMMANDS = ("gradcheck", "equiv", "bench", "boundary", "denoise",
            "paramcount", "export-grid")

BENCH_DEFAULTS = {
    "mixers": ["mhsa", "mamba"],
    "lengths": [1024, 2048, 4096, 8192, 16384],
    "d": 32,
    "n_heads": 1,
    "e_f": 2,
    "n_state": 16,
    "reps": 5,
    "warmups": 2,
    "chunk": 64,
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bimamba",
                                description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", metavar="|".join(COMMANDS))
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", type=Path, default=None,
                        help="output directory (default runs/<command>)")
        sp.add_argument("--json", action="store_true",
                        help="print the report JSON to stdout")
        if name in ("bench", "boundary", "denoise", "paramcount"):
            sp.add_argument("--config", type=Path, default=None)
        if name == "export-grid":
            sp.add_argument("--run-dir", type=Path, required=True,
                            help="directory of a finished boundary run")
    return p


def _load_config(path: Path | None, command: str, required: bool) -> dict | None:
    if path is None:
        if required:
            raise ConfigError(f"{command} requires --config")
        return None
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    if "schema_version" not in obj:
        raise ConfigError(f"config {path} lacks schema_version")
    version = obj.pop("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"config schema_version {version} != {SCHEMA_VERSION}")
    return obj


def _out_dir(args) -> Path:
    out = args.out if args.out is not None else Path("runs") / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(report: dict, out: Path, as_json: bool, lines) -> None:
    write_report(out / "report.json", report)
    if as_json:
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    else:
        for line in lines:
            print(line)
        print(f"report: {out / 'report.json'}")


def _cmd_gradcheck(args) -> int:
    out = _out_dir(args)
    t0 = time.perf_counter()
    suite = gradient_suite(seed=args.seed)
    report = {
        "schema_version": SCHEMA_VERSION, "command": "gradcheck",
        "seed": args.seed, "metrics": suite,
        "timings": {"wall_s": time.perf_counter() - t0},
    }
    status = "pass" if suite["passed"] else "FAIL"
    _emit(report, out, args.json,
          [f"gradcheck {status}: {len(suite['cases'])} cases, "
           f"max rel err {suite['max_rel_err']:.3e} (tol {suite['tol']:g})"])
    return 0 if suite["passed"] else 1


def _cmd_equiv(args) -> int:
    out = _out_dir(args)
    t0 = time.perf_counter()
    suites = {
        "scan": scan_equivalence_suite(seed=args.seed),
        "lti": lti_equivalence_suite(seed=args.seed),
        "reversal": reversal_suite(seed=args.seed),
    }
    passed = all(s["passed"] for s in suites.values())
    report = {
        "schema_version": SCHEMA_VERSION, "command": "equiv",
        "seed": args.seed, "metrics": suites,
        "timings": {"wall_s": time.perf_counter() - t0},
    }
    lines = [f"{name}: {'pass' if s['passed'] else 'FAIL'} "
             f"max diff {s['max_abs_diff']:.3e} (tol {s['tol']:g})"
             for name, s in suites.items()]
    _emit(report, out, args.json, lines)
    return 0 if passed else 1


def _bench_config(obj: dict | None) -> dict:
    cfg = dict(BENCH_DEFAULTS)
    if obj:
        _check_keys(obj, list(BENCH_DEFAULTS), "bench config")
        cfg.update(obj)
    return cfg


def _cmd_bench(args) -> int:
    out = _out_dir(args)
    cfg = _bench_config(_load_config(args.config, "bench", required=False))
    t0 = time.perf_counter()
    mcfg = MambaConfig(d=cfg["d"], e_f=cfg["e_f"], n=cfg["n_state"])
    cost = time_scaling(cfg["mixers"], cfg["lengths"], d=cfg["d"],
                        n_heads=cfg["n_heads"], cfg=mcfg, seed=args.seed,
                        reps=cfg["reps"], warmups=cfg["warmups"],
                        chunk=cfg["chunk"])
    write_cost_csv(cost, out / "cost.csv")
    macs = {m: {str(r.length): r.macs for r in cost.rows if r.slope_group == m}
            for m in cfg["mixers"]}
    report = {
        "schema_version": SCHEMA_VERSION, "command": "bench",
        "seed": args.seed, "config": cfg,
        "metrics": {"macs": macs},
        "artifacts": {"cost_csv": "cost.csv"},
        # wall-clock rows and the slopes fitted to them are measurements,
        # not deterministic outputs; they live with the other timings
        "timings": {"rows": [vars(r) for r in cost.rows],
                    "slopes": cost.slopes,
                    "wall_s": time.perf_counter() - t0},
    }
    lines = [f"{m}: slope {s['slope']:.3f} (r2 {s['r2']:.4f}, "
             f"{s['n_points']} points)" for m, s in cost.slopes.items()]
    _emit(report, out, args.json, lines)
    return 0


def _cmd_boundary(args) -> int:
    out = _out_dir(args)
    obj = _load_config(args.config, "boundary", required=True)
    cfg = BoundaryConfig.from_json(obj)
    report = run_boundary_experiment(cfg, args.seed, out)
    m = report["metrics"]
    if m["diverged"]:
        _emit(report, out, args.json, ["boundary: diverged (non-finite loss)"])
        return 1
    _emit(report, out, args.json,
          [f"boundary {cfg.kind} ffn={cfg.with_ffn}: "
           f"test acc {m['test_acc']:.3f}, train acc {m['train_acc']:.3f}"])
    return 0


def _cmd_denoise(args) -> int:
    out = _out_dir(args)
    obj = _load_config(args.config, "denoise", required=True)
    cfg = DenoiseConfig.from_json(obj)
    report = run_denoise_experiment(cfg, args.seed, out)
    pm = report["metrics"]["per_mixer"]
    lines = [f"{mix}: {'diverged' if row['diverged'] else ''}"
             f"{row.get('improvement_db', float('nan')):+.2f} dB "
             f"({row['params_ledger']} params)" for mix, row in pm.items()]
    lines.append(f"oracle {report['metrics']['oracle_mask_improvement_db']:+.2f} dB, "
                 f"identity {report['metrics']['identity_mask_improvement_db']:+.2f} dB")
    _emit(report, out, args.json, lines)
    return 1 if any(row["diverged"] for row in pm.values()) else 0


def _cmd_paramcount(args) -> int:
    out = _out_dir(args)
    obj = _load_config(args.config, "paramcount", required=True)
    allowed = ["variant", "d", "e_f", "n", "d_conv", "r", "a_init", "a_noise_sigma"]
    _check_keys(obj, allowed, "paramcount config")
    variant = obj.pop("variant", None)
    if variant not in PARAM_COUNT_VARIANTS:
        raise ConfigError(f"variant must be one of {PARAM_COUNT_VARIANTS}, "
                          f"got {variant!r}")
    cfg = MambaConfig(**obj)
    ledger = param_count(variant, cfg)
    from .bidirectional import init_ext_bimamba, init_inn_bimamba
    from .mamba import init_mamba
    init = {"mamba": init_mamba, "inn_bimamba": init_inn_bimamba,
            "ext_bimamba": init_ext_bimamba}[variant]
    enumerated = sum(v.value.size for v in init(cfg, args.seed).named().values())
    report = {
        "schema_version": SCHEMA_VERSION, "command": "paramcount",
        "seed": args.seed,
        "config": {"variant": variant, "d": cfg.d, "e_f": cfg.e_f, "n": cfg.n,
                   "d_conv": cfg.d_conv, "r": cfg.r},
        "metrics": {"ledger": ledger, "enumerated": enumerated,
                    "match": ledger == enumerated},
        "timings": {},
    }
    _emit(report, out, args.json,
          [f"{variant}: ledger {ledger}, enumerated {enumerated}, "
           f"{'match' if ledger == enumerated else 'MISMATCH'}"])
    return 0 if ledger == enumerated else 1


def _cmd_export_grid(args) -> int:
    out = _out_dir(args)
    t0 = time.perf_counter()
    result = export_grid(args.run_dir, out)
    report = {
        "schema_version": SCHEMA_VERSION, "command": "export-grid",
        "seed": result["seed"], "config": result["config"],
        "metrics": {},
        "artifacts": {"grid_csv": Path(result["grid_csv"]).name,
                      "grid_ppm": Path(result["grid_ppm"]).name},
        "timings": {"wall_s": time.perf_counter() - t0},
    }
    write_report(out / "export_report.json", report)
    if args.json:
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    else:
        print(f"grid written: {result['grid_csv']}, {result['grid_ppm']}")
    return 0


_HANDLERS = {
    "gradcheck": _cmd_gradcheck,
    "equiv": _cmd_equiv,
    "bench": _cmd_bench,
    "boundary": _cmd_boundary,
    "denoise": _cmd_denoise,
    "paramcount": _cmd_paramcount,
    "export-grid": _cmd_export_grid,
}


def dispatch(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    threads = os.environ.get("BIMAMBA_THREADS", "1")
    try:
        limit = int(threads)
        if limit < 1:
            raise ValueError
    except ValueError:
        print(f"bimamba: BIMAMBA_THREADS must be a positive integer, "
              f"got {threads!r}", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(limits=limit):
            return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"bimamba: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except (DomainError, ShapeError) as exc:
        print(f"bimamba: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
