"""Command line entry point: ``latticehall run|validate|cache|report``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .cache import EigenCache, default_root
from .config import ConfigError, load_raw, validate
from .runner import ExitCode, execute, load_config, _error


def _print_diags(diags):
    for d in diags:
        print(f"{d['level']:>7}  {d['field']}: {d['message']}", file=sys.stderr)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as err:
        _print_diags(err.diagnostics)
        out = Path(args.config).parent / "out"
        return int(_error(out, ExitCode.CONFIG, err, {"diagnostics": err.diagnostics}))
    if args.no_cache:
        cfg.cache = False
    if args.workers:
        cfg.workers = args.workers
    code, payload = execute(cfg, args.cache_dir)
    if payload is not None and not args.quiet:
        print(json.dumps(payload["results"], indent=2, sort_keys=True, default=str))
    if code != ExitCode.OK:
        print(f"failed ({code.name}); see {Path(cfg.output) / 'error.json'}", file=sys.stderr)
    return int(code)


def cmd_validate(args) -> int:
    try:
        diags = validate(load_raw(args.config, args.overrides))
    except ConfigError as err:
        diags = err.diagnostics
    _print_diags(diags)
    if any(d["level"] == "error" for d in diags):
        return int(ExitCode.CONFIG)
    print("ok")
    return int(ExitCode.OK)


def cmd_cache(args) -> int:
    cache = EigenCache(Path(args.cache_dir) if args.cache_dir else default_root())
    entries = cache.entries()
    if args.action == "clear":
        print(f"removed {cache.clear()} entries from {cache.root}")
    else:
        size = sum(p.stat().st_size for p in entries)
        print(f"{cache.root}: {len(entries)} entries, {size / 2**20:.1f} MiB")
    return int(ExitCode.OK)


def _fmt(v):
    return f"{v:.12g}" if isinstance(v, float) else str(v)


def cmd_report(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "report.json"
    data = json.loads(path.read_text())
    res = data["results"]
    print(f"{data['kind']}  model={data['model']['name']} {data['model']['params']}")
    for key in sorted(res):
        if key in ("bound_checks", "diagnostics"):
            continue
        print(f"  {key:<18} {_fmt(res[key])}")
    checks = res.get("bound_checks", [])
    if checks:
        print("  bound checks:")
        for c in checks:
            flag = "ok  " if c["passed"] else "FAIL"
            print(f"    {flag} {c['name']:<32} {c['lhs']:.3e} <= {c['rhs']:.3e}")
    return int(ExitCode.OK)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="latticehall", description="Hall conductance experiments on lattice fermions")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("overrides", nargs="*", help="dotted key=value overrides")
    r.add_argument("--no-cache", action="store_true")
    r.add_argument("--cache-dir")
    r.add_argument("--workers", type=int)
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    v.add_argument("overrides", nargs="*")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("cache", help="inspect or clear the eigendecomposition cache")
    c.add_argument("action", choices=("inspect", "clear"))
    c.add_argument("--cache-dir")
    c.set_defaults(func=cmd_cache)

    p = sub.add_parser("report", help="pretty-print a report.json")
    p.add_argument("path")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
