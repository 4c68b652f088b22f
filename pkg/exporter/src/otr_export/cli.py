"""Command-line entry point: ``otr-export --checkpoint actor.pt --out actor.net.json``."""

from __future__ import annotations

import argparse
import sys

from .export import TASKS, UnsupportedLayerError, export


def _parse_activation(text: str):
    def one(part: str):
        if part == "relu":
            return "relu"
        if part.startswith("leaky_relu:"):
            return {"leaky_relu": float(part.split(":", 1)[1])}
        raise ValueError(f"unknown activation {part!r} (use relu or leaky_relu:<slope>)")

    parts = [one(p.strip()) for p in text.split(",")]
    return parts if len(parts) > 1 else parts[0]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otr-export", description=__doc__)
    parser.add_argument("--checkpoint", required=True,
                        help="torch checkpoint (full module or state dict)")
    parser.add_argument("--out", required=True, help="interchange JSON to write")
    parser.add_argument("--task", choices=TASKS, default="regression")
    parser.add_argument("--activation", default="relu",
                        help="hidden activation(s) for state-dict checkpoints, "
                             "e.g. relu or leaky_relu:0.01 or a comma list per layer")
    parser.add_argument("--leaf-activation", choices=("identity", "tanh"),
                        help="output squish (auto-detected for module checkpoints)")
    parser.add_argument("--samples", type=int, default=100,
                        help="number of verification samples to bundle")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--samples-out",
                        help="verification sample file (default: <out>.samples.json)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = export(
            args.checkpoint,
            args.out,
            activations=_parse_activation(args.activation),
            task=args.task,
            leaf_activation=args.leaf_activation,
            n_samples=args.samples,
            seed=args.seed,
            samples_out=args.samples_out,
        )
    except (OSError, ValueError, UnsupportedLayerError) as exc:
        print(f"otr-export: {exc}", file=sys.stderr)
        return 1
    widths = " -> ".join(str(w.shape[1]) for w in manifest.weights)
    print(f"exported {len(manifest.weights)} layers ({widths} -> "
          f"{manifest.weights[-1].shape[0]}) to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
