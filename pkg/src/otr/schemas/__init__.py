"""Bundled JSON schemas for the on-disk formats (network, tree, trace, policy,
rollout). Validation itself is left to callers; the CLI formats are plain JSON."""

import json
from importlib import resources

NAMES = ("network", "tree", "trace", "policy", "rollout")


def load_schema(name: str) -> dict:
    if name not in NAMES:
        raise KeyError(f"unknown schema {name!r}; have {NAMES}")
    path = resources.files(__package__).joinpath(f"{name}.schema.json")
    return json.loads(path.read_text(encoding="utf-8"))
