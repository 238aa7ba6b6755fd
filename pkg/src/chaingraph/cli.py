"""Command-line front end.

    chaingraph analyze --config run.json [--out DIR]
    chaingraph preset logistic --a 3.2 --depth 12 --out DIR
    chaingraph export --report DIR/logistic.report.json --dot [--reduced]
    chaingraph validate --report DIR/logistic.report.json

Exit codes: 0 success, 2 configuration error, 3 trapping check failed,
4 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .boxmap import BudgetExceeded, InvariantViolation
from .config import PRESETS, ConfigError, RunConfig, parse_config, preset_config
from .export import deterministic_part, export_boxlist, export_dot, export_report, parse_report
from .geometry import GridError
from .systems import SystemInputError

EXIT_OK, EXIT_CONFIG, EXIT_TRAPPING, EXIT_INVARIANT = 0, 2, 3, 4

log = logging.getLogger("chaingraph")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chaingraph", description="Chain-recurrence graphs from box-map outer approximations.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="run a JSON configuration")
    a.add_argument("--config", required=True, type=Path)
    a.add_argument("--out", type=Path, default=Path("."))

    pr = sub.add_parser("preset", help="run a named example; extra --name value pairs set parameters",
                        epilog="presets: " + ", ".join(sorted(PRESETS)))
    pr.add_argument("name", choices=sorted(PRESETS))
    pr.add_argument("--depth", type=int, default=None, help="final per-dimension depth")
    pr.add_argument("--out", type=Path, default=Path("."))

    e = sub.add_parser("export", help="re-render a stored report")
    e.add_argument("--report", required=True, type=Path)
    e.add_argument("--dot", action="store_true", help="write DOT to stdout")
    e.add_argument("--reduced", action="store_true", help="only covering edges")

    v = sub.add_parser("validate", help="re-run a stored report's configuration with oracle checks")
    v.add_argument("--report", required=True, type=Path)
    return p


def _overrides(extra: list[str]) -> dict:
    """``--key value`` pairs (or ``--key=value``) left over by argparse."""
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unexpected argument {tok!r}", "/preset")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"option --{key} needs a value", f"/preset/{key}")
            value = extra[i + 1]
            i += 2
        out[key.replace("-", "_")] = value
    return out


def write_outputs(cfg: RunConfig, report: dict, out_dir: Path, graph=None) -> list[Path]:
    """Write the requested artifacts; returns their paths."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in cfg.outputs:
        path = out_dir / f"{cfg.name}.report.json"
        path.write_text(export_report(report))
        written.append(path)
    if report.get("graph") is not None:
        if "dot" in cfg.outputs:
            path = out_dir / f"{cfg.name}.dot"
            path.write_text(export_dot(report["graph"], reduced=False, name=cfg.name))
            written.append(path)
        if "boxlist" in cfg.outputs and graph is not None:
            path = out_dir / f"{cfg.name}.boxes.txt"
            path.write_text(export_boxlist(graph))
            written.append(path)
    return written


def execute(cfg: RunConfig, out_dir: Path) -> int:
    from .pipeline import run_with_graph

    report, graph = run_with_graph(cfg)
    for path in write_outputs(cfg, report, out_dir, graph):
        print(path)
    summary = _summary(report)
    print(summary)
    return EXIT_TRAPPING if report["halted"] else EXIT_OK


def _summary(report: dict) -> str:
    trap = report["trapping"]
    parts = [f"trapping: {trap['status']}"]
    g = report.get("graph")
    if g is not None:
        parts.append(f"nodes: {len(g['nodes'])}")
        parts.append(f"edges: {len(g['edges'])} ({len(g['reduced_edges'])} covering)")
        parts.append(f"verdict: {report['theorems']['connectedness']['verdict']}")
        ref = report.get("refinement") or {}
        if ref.get("stopped"):
            parts.append(f"refinement stopped: {ref['stopped']}")
    return "; ".join(parts)


def validate_report(path: Path) -> tuple[int, dict]:
    """Re-run the stored configuration with the oracle enabled and compare graphs."""
    from dataclasses import replace

    from .pipeline import run

    stored = parse_report(path.read_text())
    cfg = replace(parse_config(stored["config"]), oracle_enabled=True)
    fresh = run(cfg)
    same_graph = fresh.get("graph") == stored.get("graph")
    out = {"graph_reproduced": same_graph, "validation": fresh.get("validation")}
    agreement = ((fresh.get("validation") or {}).get("agreement") or {}).get("agreement")
    soundness = ((fresh.get("validation") or {}).get("soundness") or {}).get("covered")
    ok = same_graph and (soundness is None or soundness == 1.0)
    out["passed"] = bool(ok)
    out["agreement"] = agreement
    return (EXIT_OK if ok else EXIT_INVARIANT), out


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command != "preset" and extra:
            parser.error(f"unrecognized arguments: {' '.join(extra)}")
        if args.command == "analyze":
            try:
                text = args.config.read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
            return execute(parse_config(text), args.out)
        if args.command == "preset":
            cfg = preset_config(args.name, args.depth, _overrides(extra))
            return execute(cfg, args.out)
        if args.command == "export":
            report = parse_report(args.report.read_text())
            if report.get("graph") is None:
                print("report has no chain graph (pipeline halted)", file=sys.stderr)
                return EXIT_TRAPPING
            name = report["config"].get("name", "chaingraph")
            sys.stdout.write(export_dot(report["graph"], reduced=args.reduced, name=name) if args.dot
                             else export_report(deterministic_part(report)))
            return EXIT_OK
        if args.command == "validate":
            code, out = validate_report(args.report)
            print(json.dumps(out, sort_keys=True, indent=2))
            return code
    except (ConfigError, SystemInputError, GridError, BudgetExceeded) as exc:
        pointer = getattr(exc, "pointer", None)
        print(f"config error{f' at {pointer}' if pointer else ''}: {getattr(exc, 'reason', exc)}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
