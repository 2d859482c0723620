"""Command-line entry point.

Subcommands: synth (write a synthetic dataset pair), stats (compute and
save base statistics), run (single method/eta point), sweep (full grid),
report (re-render CSV from a results JSON). Exit codes: 0 ok, 2 config
error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .data import save_dataset
from .errors import ConfigError, UGDError
from .harness import ExperimentConfig, build_pools, emit_report, load_report, prepare_stats, run_sweep
from .stats import load_stats, save_stats


def _parse_set(expr: str):
    if "=" not in expr:
        raise ConfigError(f"--set expects KEY=VALUE, got '{expr}'")
    key, raw = expr.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _apply_override(tree: dict, dotted: str, value) -> None:
    node = tree
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set path '{dotted}' crosses a non-object value")
    node[parts[-1]] = value


def load_config(args) -> ExperimentConfig:
    raw: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    for expr in args.set or []:
        key, value = _parse_set(expr)
        _apply_override(raw, key, value)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.jobs is not None:
        raw["jobs"] = args.jobs
    return ExperimentConfig.from_dict(raw)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry (dotted path, JSON value)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ugd")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="materialise the configured synthetic dataset")
    _add_common(p)

    p = sub.add_parser("stats", help="compute and save base statistics")
    _add_common(p)

    p = sub.add_parser("run", help="run a single (method, eta) point")
    _add_common(p)
    p.add_argument("--per-episode", action="store_true")
    p.add_argument("--stats-dir", help="load base statistics from a saved bundle")

    p = sub.add_parser("sweep", help="run the full method x eta grid")
    _add_common(p)
    p.add_argument("--per-episode", action="store_true")
    p.add_argument("--stats-dir", help="load base statistics from a saved bundle")

    p = sub.add_parser("report", help="re-render results.csv from results.json")
    p.add_argument("results_json")
    p.add_argument("--out", default="out")
    return parser


def cmd_synth(args) -> int:
    config = load_config(args)
    base, novel = build_pools(config)
    out = Path(args.out)
    base_path = save_dataset(base, out / "base")
    novel_path = save_dataset(novel, out / "novel")
    print(base_path)
    print(novel_path)
    return 0


def cmd_stats(args) -> int:
    config = load_config(args)
    base, _ = build_pools(config)
    stats = prepare_stats(config, base)
    path = save_stats(stats, Path(args.out) / "stats")
    print(path)
    return 0


def _load_pools_and_stats(args, config):
    pools = build_pools(config)
    if args.stats_dir:
        stats = load_stats(args.stats_dir, expect_view_spec=pools[0].view_spec)
        if config.base_class_subset is not None:
            stats = stats.subset(config.base_class_subset, seed=config.seed)
    else:
        stats = prepare_stats(config, pools[0])
    return pools, stats


def cmd_run(args) -> int:
    config = load_config(args)
    if len(config.methods) != 1 or len(config.etas) != 1:
        raise ConfigError("'run' expects exactly one method and one eta; use 'sweep' for grids")
    pools, stats = _load_pools_and_stats(args, config)
    result = run_sweep(config, pools=pools, stats=stats)
    paths = emit_report(result, args.out, per_episode=args.per_episode)
    point = result.points[0]
    print(f"{point.method} eta={point.eta}: acc={point.mean_acc:.4f} +/- {point.std:.4f} "
          f"(n={point.n_episodes})")
    print(paths["csv"])
    return 0


def cmd_sweep(args) -> int:
    config = load_config(args)
    pools, stats = _load_pools_and_stats(args, config)
    result = run_sweep(config, pools=pools, stats=stats)
    paths = emit_report(result, args.out, per_episode=args.per_episode)
    for point in result.points:
        print(f"{point.method} eta={point.eta}: acc={point.mean_acc:.4f} +/- {point.std:.4f}")
    print(paths["csv"])
    return 0


def cmd_report(args) -> int:
    result = load_report(args.results_json)
    paths = emit_report(result, args.out)
    print(paths["csv"])
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "stats": cmd_stats,
    "run": cmd_run,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UGDError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
