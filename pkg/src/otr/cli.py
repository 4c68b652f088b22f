"""Batch command-line front end.

Exit codes: 0 success, 1 pipeline or verification failure, 2 usage errors.
All randomness flows from ``--seed``; re-running a command with identical
inputs and seed produces byte-identical outputs. ``--log json`` switches
progress reporting to machine-readable JSON lines on stderr; the OTR_LOG
environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import emitter, envs, netio, pidpolicy
from . import tree as treemod
from .translate import (
    DEFAULT_NODE_BUDGET,
    TranslateOptions,
    translate as run_translate,
    verify_equivalence,
)

log = logging.getLogger("otr")


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        payload = {"level": record.levelname.lower(), "event": record.getMessage()}
        payload.update(getattr(record, "fields", {}))
        return json.dumps(payload, sort_keys=True)


def _setup_logging(mode: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if mode == "json":
        handler.setFormatter(_JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("otr: %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(os.environ.get("OTR_LOG", "INFO").upper())


def _event(msg: str, **fields) -> None:
    log.info(msg, extra={"fields": fields})


def _load_policy_file(path: str):
    """Detect and load a network, tree, or PID policy file."""
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if isinstance(obj, dict) and obj.get("kind") == "pid":
        return pidpolicy.policy_from_dict(obj)
    if isinstance(obj, dict) and "layers" in obj:
        return netio.network_from_dict(obj)
    if isinstance(obj, dict) and "root" in obj:
        return treemod.tree_from_dict(obj)
    raise ValueError(f"{path}: not a recognized network, tree, or policy file")


def _parse_box(text: str | None, dim: int):
    if text is None:
        return None
    try:
        lo, hi = (float(part) for part in text.split(":"))
    except ValueError as exc:
        raise ValueError(f"--box expects 'low:high', got {text!r}") from exc
    return (np.full(dim, lo), np.full(dim, hi))


def cmd_translate(args) -> int:
    net = netio.load_network(args.net)
    trace = treemod.load_trace(args.trace) if args.trace else None
    mode = "trace_driven" if (args.mode == "trace" or (args.mode == "auto" and trace)) else "full"
    if mode == "trace_driven" and trace is None:
        raise ValueError("trace-driven translation requires --trace")
    opts = TranslateOptions(mode=mode, node_budget=args.budget, trace=trace)
    tree = run_translate(net, opts)
    treemod.save_tree(tree, args.out)
    st = treemod.stats(tree)
    _event("translated", out=str(args.out), mode=mode,
           decision_nodes=st.decision_nodes, leaves=st.leaves)
    return 0


def cmd_verify(args) -> int:
    net = netio.load_network(args.net)
    tree = treemod.load_tree(args.tree)
    sampler = _parse_box(args.box, net.input_dim)
    report = verify_equivalence(net, tree, sampler, args.samples, args.seed)
    print(json.dumps(report.to_dict(), indent=1))
    _event("verified", passed=report.passed, max_rel_diff=report.max_rel_diff)
    return 0 if report.passed else 1


def cmd_prune(args) -> int:
    trace = treemod.load_trace(args.trace)
    if args.tree:
        tree = treemod.load_tree(args.tree)
    else:
        net = netio.load_network(args.net)
        tree = run_translate(
            net, TranslateOptions(mode="trace_driven", trace=trace)
        )
    pruned = (
        treemod.prune_topk(tree, trace, args.topk)
        if args.topk
        else treemod.prune_unvisited(tree, trace)
    )
    treemod.save_tree(pruned, args.out)
    st = treemod.stats(pruned)
    _event("pruned", out=str(args.out), pattern_leaves=st.pattern_leaves,
           pruned_leaves=st.pruned_leaves)
    return 0


def cmd_emit(args) -> int:
    names = args.names.split(",") if args.names else None
    with open(args.tree, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if isinstance(obj, dict) and obj.get("kind") == "pid":
        policy = pidpolicy.policy_from_dict(obj)
        text = emitter.emit_pid_program(policy, names, args.precision, args.drop)
    else:
        tree = treemod.tree_from_dict(obj)
        text = emitter.emit_program(tree, names, args.precision, args.drop)
    if args.check:
        emitter.parse_program(text.source)
        _event("parse check passed")
    if args.out:
        Path(args.out).write_text(text.source, encoding="utf-8")
        _event("emitted", out=str(args.out))
    else:
        sys.stdout.write(text.source)
    return 0


def cmd_eval(args) -> int:
    policy = _load_policy_file(args.policy)
    result = envs.rollout(policy, args.env, args.episodes, args.seed)
    summary = result.to_dict()
    if not args.out:
        summary.pop("rewards")
    print(json.dumps(summary, indent=1))
    if args.out:
        envs.save_rollout(result, args.out)
        _event("evaluated", out=str(args.out), mean=result.mean)
    return 0


def cmd_trace(args) -> int:
    net = netio.load_network(args.net)
    trace = envs.collect_trace(net, args.env, args.episodes, args.seed)
    treemod.save_trace(trace, args.out)
    _event("traced", out=str(args.out), patterns=len(trace.pattern_counts),
           total_visits=trace.total_visits)
    return 0


def cmd_stats(args) -> int:
    tree = treemod.load_tree(args.tree)
    print(json.dumps(treemod.stats(tree, args.eps_sparse).to_dict(), indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otr", description=__doc__)
    parser.add_argument("--log", choices=("text", "json"), default="text",
                        help="progress log format on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("translate", help="compile a network into an oblique tree")
    p.add_argument("--net", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("auto", "full", "trace"), default="auto")
    p.add_argument("--trace", help="activation trace file (enables trace-driven mode)")
    p.add_argument("--budget", type=int, default=DEFAULT_NODE_BUDGET)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("verify", help="check tree/network equivalence on samples")
    p.add_argument("--net", required=True)
    p.add_argument("--tree", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--box", help="uniform sampling box as 'low:high' (default -1:1)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("prune", help="keep only traced (or top-k) inference paths")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--tree", help="prune an existing tree file")
    src.add_argument("--net", help="build the pruned tree straight from a network")
    p.add_argument("--trace", required=True)
    p.add_argument("--topk", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("emit", help="render a tree or PID policy as a program")
    p.add_argument("--tree", required=True, help="tree or PID policy file")
    p.add_argument("--names", help="comma-separated input variable names")
    p.add_argument("--precision", type=int, default=10)
    p.add_argument("--drop", type=float, default=0.0,
                   help="omit terms with |coefficient| <= this threshold")
    p.add_argument("--check", action="store_true", help="re-parse the emitted text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_emit)

    p = sub.add_parser("eval", help="roll out a network / tree / PID policy")
    p.add_argument("--policy", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the full per-episode report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trace", help="collect a network's activation trace in an env")
    p.add_argument("--net", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("stats", help="report tree size / depth / sparsity")
    p.add_argument("--tree", required=True)
    p.add_argument("--eps-sparse", type=float, default=1e-8)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.log)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError, TypeError) as exc:
        log.error(str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
