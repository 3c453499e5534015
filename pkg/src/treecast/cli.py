"""``treecast`` command line.

Exit codes: 0 ok, 2 configuration error, 3 size overflow, 4 grouping failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from .errors import GroupingFailure, SizeOverflow, TreecastError
from .harness import COMMANDS, ExperimentConfig, run, write_outputs

EXIT_OK, EXIT_CONFIG, EXIT_SIZE, EXIT_GROUPING = 0, 2, 3, 4


def _list(cast):
    def parse(text):
        return [cast(x) for x in text.split(",") if x]

    return parse


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="treecast", description="Broadcast processes on trees: exact scans and reconstruction.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON file of parameters; flags override it")
    ap.add_argument("--chain", help="example | bsc:THETA | uniform:Q | path to JSON matrix")
    ap.add_argument("--d", type=_list(int), help="branching factor(s), comma separated")
    ap.add_argument("--depth", type=_list(int), help="depth(s), comma separated")
    ap.add_argument("--eps", type=_list(float), help="leaf noise rate(s), comma separated")
    ap.add_argument("--m", type=int, help="samples per dataset / oracle accuracy")
    ap.add_argument("--degree", type=int, help="maximum polynomial degree for lowdeg-scan")
    ap.add_argument("--trials", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output path (CSV, or JSON lines for simulate)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="any other config field, e.g. estimator=rowmatch, mode=adversarial")
    return ap


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    data: dict = {}
    if args.config:
        with open(args.config) as fh:
            data.update(json.load(fh))
    for item in args.set:
        if "=" not in item:
            raise TreecastError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        data[k] = _parse_value(v)
    for name in ("chain", "d", "depth", "eps", "m", "degree", "trials", "seed", "out"):
        val = getattr(args, name)
        if val is not None:
            data[name] = val
    data["kind"] = args.command
    data.setdefault("seed", None)
    return ExperimentConfig.from_mapping(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        t0 = time.perf_counter()
        records = run(cfg)
        text = write_outputs(cfg, records, time.perf_counter() - t0)
    except SizeOverflow as e:
        print(f"treecast: size overflow: {e}", file=sys.stderr)
        return EXIT_SIZE
    except GroupingFailure as e:
        print(f"treecast: grouping failure: {e}", file=sys.stderr)
        return EXIT_GROUPING
    except (TreecastError, OSError, ValueError, TypeError) as e:
        print(f"treecast: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if text is not None:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
