"""Oblique decision tree model: inference, trace-based pruning, stats, persistence.

Trees are immutable after construction; pruning returns new trees. Internal
nodes route by ``p . x + v <= 0 -> left, else right``. Regression leaves hold
one linear model per output dimension; pruned leaves stand in for branches a
trace never visited and carry a precomputed fallback path.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .netio import DimensionError, TaskKind


class TraceMismatchError(ValueError):
    """Trace and tree/network do not belong to the same source network."""


class PrunedPathError(RuntimeError):
    """Inference reached a pruned branch that has no fallback path."""


@dataclass(eq=False)
class DecisionNode:
    """Tests ``p . x + v <= 0``; true routes left, false routes right."""

    p: np.ndarray  # (input_dim,)
    v: float
    left: "TreeNode"
    right: "TreeNode"

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.v = float(self.v)


@dataclass(eq=False)
class RegressionLeaf:
    """Returns ``activation(coef @ x + bias)``, one linear model per output."""

    coef: np.ndarray  # (n_outputs, input_dim)
    bias: np.ndarray  # (n_outputs,)
    activation: str = "identity"  # "identity" | "tanh"

    def __post_init__(self):
        self.coef = np.atleast_2d(np.asarray(self.coef, dtype=np.float64))
        self.bias = np.atleast_1d(np.asarray(self.bias, dtype=np.float64))

    def value(self, x: np.ndarray) -> np.ndarray:
        y = self.coef @ x + self.bias
        return np.tanh(y) if self.activation == "tanh" else y


@dataclass(eq=False)
class LabelLeaf:
    label: int


@dataclass(eq=False)
class PrunedLeaf:
    """Stands in for a branch the trace never reached.

    ``fallback`` is the hidden-activation pattern of the materialized leaf that
    greedy visit-count descent selects from the pruned branch's sibling;
    ``visit_hint`` is how often the pruned branch itself was visited (nonzero
    only for top-k pruning).
    """

    fallback: str | None = None
    visit_hint: int = 0


TreeNode = Union[DecisionNode, RegressionLeaf, LabelLeaf, PrunedLeaf]


@dataclass(eq=False)
class ObliqueTree:
    """A compiled oblique decision tree plus its provenance metadata.

    ``n_hidden`` is the number of hidden-neuron decision levels; the first
    ``n_hidden`` decisions on any root-to-leaf path correspond bit-for-bit to
    the source network's activation pattern. Any decisions below that level
    implement the output stage (binary threshold or argmax chain).
    """

    root: TreeNode
    input_dim: int
    task: TaskKind
    n_hidden: int
    n_outputs: int
    meta: dict = field(default_factory=dict)


@dataclass
class Prediction:
    """Inference result: a value vector for regression, a label otherwise.

    ``pruned`` flags that the input reached a pruned branch and the result
    came from the fallback path instead.
    """

    value: np.ndarray | None = None
    label: int | None = None
    pruned: bool = False


@dataclass(frozen=True)
class ActivationTrace:
    """Multiset of hidden activation patterns observed while running a network."""

    pattern_counts: dict[str, int]
    network_hash: str
    total_visits: int

    def __post_init__(self):
        if not self.pattern_counts:
            raise ValueError("trace has no patterns")
        lengths = {len(bits) for bits in self.pattern_counts}
        if len(lengths) != 1:
            raise ValueError(f"trace patterns have mixed lengths: {sorted(lengths)}")
        if any(c < 1 for c in self.pattern_counts.values()):
            raise ValueError("trace pattern counts must be >= 1")
        if sum(self.pattern_counts.values()) != self.total_visits:
            raise ValueError("total_visits does not match the sum of pattern counts")

    @property
    def pattern_len(self) -> int:
        return len(next(iter(self.pattern_counts)))


def trace_id(trace: ActivationTrace) -> str:
    payload = json.dumps(trace_to_dict(trace), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _check_x(tree: ObliqueTree, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (tree.input_dim,):
        raise DimensionError(f"expected input of shape ({tree.input_dim},), got {x.shape}")
    return x


def route(tree: ObliqueTree, x) -> tuple[TreeNode, str]:
    """Follow the <=/> routing for ``x``; returns (terminal node, hidden bits taken).

    The terminal node is the first non-decision node on the path for
    regression trees, or the first node past the hidden levels for
    classification trees (the root of the output stage).
    """
    x = _check_x(tree, x)
    node = tree.root
    bits: list[str] = []
    while isinstance(node, DecisionNode) and len(bits) < tree.n_hidden:
        if float(node.p @ x) + node.v <= 0.0:
            bits.append("0")
            node = node.left
        else:
            bits.append("1")
            node = node.right
    return node, "".join(bits)


def _node_for_pattern(tree: ObliqueTree, bits: str) -> TreeNode:
    node = tree.root
    for b in bits:
        if not isinstance(node, DecisionNode):
            break
        node = node.left if b == "0" else node.right
    return node


def _finish(tree: ObliqueTree, node: TreeNode, x: np.ndarray, pruned: bool) -> Prediction:
    """Evaluate the output stage below the hidden levels."""
    while isinstance(node, DecisionNode):
        node = node.left if float(node.p @ x) + node.v <= 0.0 else node.right
    if isinstance(node, RegressionLeaf):
        return Prediction(value=node.value(x), pruned=pruned)
    if isinstance(node, LabelLeaf):
        return Prediction(label=node.label, pruned=pruned)
    raise PrunedPathError("pruned branch inside the output stage")


def infer(tree: ObliqueTree, x) -> Prediction:
    """Route ``x`` to a leaf and evaluate it.

    Hitting a pruned branch reroutes to the branch's precomputed fallback
    pattern and flags the prediction as ``pruned``.
    """
    x = _check_x(tree, x)
    node = tree.root
    for _ in range(tree.n_hidden):
        if not isinstance(node, DecisionNode):
            break
        node = node.left if float(node.p @ x) + node.v <= 0.0 else node.right
    if isinstance(node, PrunedLeaf):
        if node.fallback is None:
            raise PrunedPathError("pruned branch has no fallback path")
        return _finish(tree, _node_for_pattern(tree, node.fallback), x, pruned=True)
    return _finish(tree, node, x, pruned=False)


# ---------------------------------------------------------------------------
# Trace-based pruning


def _greedy_pattern(pairs: list[tuple[str, int]], depth: int) -> str:
    """Pick a pattern by greedy visit-count descent starting at bit ``depth``.

    At every level the side with the larger total count wins; ties go to the
    '0' side. ``pairs`` must be non-empty and share their first ``depth`` bits.
    """
    current = pairs
    n = len(current[0][0])
    for d in range(depth, n):
        zeros = [(b, c) for b, c in current if b[d] == "0"]
        ones = [(b, c) for b, c in current if b[d] == "1"]
        if not zeros:
            current = ones
        elif not ones:
            current = zeros
        else:
            current = zeros if sum(c for _, c in zeros) >= sum(c for _, c in ones) else ones
    return current[0][0]


def _copy_node(node: TreeNode) -> TreeNode:
    if isinstance(node, DecisionNode):
        return DecisionNode(node.p.copy(), node.v, _copy_node(node.left), _copy_node(node.right))
    if isinstance(node, RegressionLeaf):
        return RegressionLeaf(node.coef.copy(), node.bias.copy(), node.activation)
    if isinstance(node, LabelLeaf):
        return LabelLeaf(node.label)
    return PrunedLeaf(node.fallback, node.visit_hint)


def _prune_rec(
    node: TreeNode,
    depth: int,
    kept: list[tuple[str, int]],
    dropped: list[tuple[str, int]],
    n_hidden: int,
) -> TreeNode:
    if depth == n_hidden:
        return _copy_node(node)
    if not isinstance(node, DecisionNode):
        # kept patterns route into a branch the source tree never materialized
        raise TraceMismatchError(
            f"trace pattern {kept[0][0]!r} is not materialized in the tree"
        )
    k0 = [(b, c) for b, c in kept if b[depth] == "0"]
    k1 = [(b, c) for b, c in kept if b[depth] == "1"]
    d0 = [(b, c) for b, c in dropped if b[depth] == "0"]
    d1 = [(b, c) for b, c in dropped if b[depth] == "1"]
    if k0:
        left = _prune_rec(node.left, depth + 1, k0, d0, n_hidden)
    else:
        left = PrunedLeaf(
            fallback=_greedy_pattern(k1, depth + 1),
            visit_hint=sum(c for _, c in d0),
        )
    if k1:
        right = _prune_rec(node.right, depth + 1, k1, d1, n_hidden)
    else:
        right = PrunedLeaf(
            fallback=_greedy_pattern(k0, depth + 1),
            visit_hint=sum(c for _, c in d1),
        )
    return DecisionNode(node.p.copy(), node.v, left, right)


def _check_trace(tree: ObliqueTree, trace: ActivationTrace) -> None:
    tree_hash = tree.meta.get("network_hash")
    if tree_hash is not None and trace.network_hash != tree_hash:
        raise TraceMismatchError(
            f"trace network hash {trace.network_hash[:12]}... does not match "
            f"tree source {str(tree_hash)[:12]}..."
        )
    if trace.pattern_len != tree.n_hidden:
        raise TraceMismatchError(
            f"trace patterns have {trace.pattern_len} bits, tree has "
            f"{tree.n_hidden} hidden levels"
        )


def _pruned_from(tree: ObliqueTree, kept: list[tuple[str, int]],
                 dropped: list[tuple[str, int]], trace: ActivationTrace,
                 mode: str) -> ObliqueTree:
    root = _prune_rec(tree.root, 0, kept, dropped, tree.n_hidden)
    meta = dict(tree.meta)
    meta["mode"] = mode
    meta["trace_id"] = trace_id(trace)
    return ObliqueTree(
        root=root,
        input_dim=tree.input_dim,
        task=tree.task,
        n_hidden=tree.n_hidden,
        n_outputs=tree.n_outputs,
        meta=meta,
    )


def prune_unvisited(tree: ObliqueTree, trace: ActivationTrace) -> ObliqueTree:
    """Replace every branch whose pattern never occurs in the trace by a pruned leaf.

    Visited paths are preserved bit-identically; the result has exactly one
    materialized path per distinct traced pattern.
    """
    _check_trace(tree, trace)
    kept = sorted(trace.pattern_counts.items())
    return _pruned_from(tree, kept, [], trace, mode="pruned")


def prune_topk(tree: ObliqueTree, trace: ActivationTrace, k: int) -> ObliqueTree:
    """Keep only the ``min(k, distinct patterns)`` most frequently visited paths.

    Count ties break toward the lexicographically smaller pattern. Pruned
    leaves remember how often their branch was visited (``visit_hint``).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    _check_trace(tree, trace)
    ranked = sorted(trace.pattern_counts.items(), key=lambda bc: (-bc[1], bc[0]))
    kept = sorted(ranked[:k])
    dropped = sorted(ranked[k:])
    return _pruned_from(tree, kept, dropped, trace, mode=f"pruned_top{k}")


# ---------------------------------------------------------------------------
# Statistics


@dataclass(frozen=True)
class TreeStats:
    """Size / complexity summary of a tree.

    ``pattern_leaves`` counts materialized hidden-activation paths (for
    regression trees this equals the number of prediction leaves);
    ``effective_depth`` is log2 of that count. ``sparsity`` is the fraction
    of decision coefficients with magnitude <= the sparsity epsilon.
    """

    decision_nodes: int
    leaves: int
    pattern_leaves: int
    pruned_leaves: int
    max_depth: int
    effective_depth: float
    sparsity: float

    def to_dict(self) -> dict:
        return {
            "decision_nodes": self.decision_nodes,
            "leaves": self.leaves,
            "pattern_leaves": self.pattern_leaves,
            "pruned_leaves": self.pruned_leaves,
            "max_depth": self.max_depth,
            "effective_depth": self.effective_depth,
            "sparsity": self.sparsity,
        }


def stats(tree: ObliqueTree, eps_sparse: float = 1e-8) -> TreeStats:
    counts = {"decision": 0, "leaf": 0, "pruned": 0, "pattern": 0, "coef": 0, "zero": 0}
    max_depth = 0

    def visit(node: TreeNode, depth: int) -> None:
        nonlocal max_depth
        if depth == tree.n_hidden and not isinstance(node, PrunedLeaf):
            counts["pattern"] += 1
        if isinstance(node, DecisionNode):
            counts["decision"] += 1
            counts["coef"] += node.p.size
            counts["zero"] += int(np.count_nonzero(np.abs(node.p) <= eps_sparse))
            visit(node.left, depth + 1)
            visit(node.right, depth + 1)
            return
        max_depth = max(max_depth, depth)
        if isinstance(node, PrunedLeaf):
            counts["pruned"] += 1
        else:
            counts["leaf"] += 1

    visit(tree.root, 0)
    pattern_leaves = counts["pattern"]
    return TreeStats(
        decision_nodes=counts["decision"],
        leaves=counts["leaf"],
        pattern_leaves=pattern_leaves,
        pruned_leaves=counts["pruned"],
        max_depth=max_depth,
        effective_depth=math.log2(pattern_leaves) if pattern_leaves else float("-inf"),
        sparsity=counts["zero"] / counts["coef"] if counts["coef"] else 0.0,
    )


# ---------------------------------------------------------------------------
# Persistence (tree and trace files)


def _node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, DecisionNode):
        return {
            "kind": "decision",
            "p": node.p.tolist(),
            "v": node.v,
            "left": _node_to_dict(node.left),
            "right": _node_to_dict(node.right),
        }
    if isinstance(node, RegressionLeaf):
        return {
            "kind": "leaf_reg",
            "coef": node.coef.tolist(),
            "bias": node.bias.tolist(),
            "activation": node.activation,
        }
    if isinstance(node, LabelLeaf):
        return {"kind": "leaf_label", "label": node.label}
    return {"kind": "pruned", "fallback": node.fallback, "visit_hint": node.visit_hint}


def _node_from_dict(obj: dict) -> TreeNode:
    kind = obj.get("kind")
    if kind == "decision":
        return DecisionNode(
            p=np.array(obj["p"], dtype=np.float64),
            v=float(obj["v"]),
            left=_node_from_dict(obj["left"]),
            right=_node_from_dict(obj["right"]),
        )
    if kind == "leaf_reg":
        return RegressionLeaf(
            coef=np.array(obj["coef"], dtype=np.float64),
            bias=np.array(obj["bias"], dtype=np.float64),
            activation=obj.get("activation", "identity"),
        )
    if kind == "leaf_label":
        return LabelLeaf(label=int(obj["label"]))
    if kind == "pruned":
        return PrunedLeaf(fallback=obj.get("fallback"), visit_hint=int(obj.get("visit_hint", 0)))
    raise ValueError(f"unknown tree node kind: {kind!r}")


def tree_to_dict(tree: ObliqueTree) -> dict:
    return {
        "input_dim": tree.input_dim,
        "task": tree.task.value,
        "n_hidden": tree.n_hidden,
        "n_outputs": tree.n_outputs,
        "meta": dict(sorted(tree.meta.items())),
        "root": _node_to_dict(tree.root),
    }


def tree_from_dict(obj: dict) -> ObliqueTree:
    return ObliqueTree(
        root=_node_from_dict(obj["root"]),
        input_dim=int(obj["input_dim"]),
        task=TaskKind(obj["task"]),
        n_hidden=int(obj["n_hidden"]),
        n_outputs=int(obj["n_outputs"]),
        meta=dict(obj.get("meta", {})),
    )


def save_tree(tree: ObliqueTree, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(tree_to_dict(tree), fh, indent=1)
        fh.write("\n")


def load_tree(path: str | Path) -> ObliqueTree:
    with open(path, "r", encoding="utf-8") as fh:
        return tree_from_dict(json.load(fh))


def trace_to_dict(trace: ActivationTrace) -> dict:
    return {
        "network_hash": trace.network_hash,
        "total_visits": trace.total_visits,
        "patterns": [
            {"bits": bits, "count": count}
            for bits, count in sorted(trace.pattern_counts.items())
        ],
    }


def trace_from_dict(obj: dict) -> ActivationTrace:
    counts = {entry["bits"]: int(entry["count"]) for entry in obj["patterns"]}
    return ActivationTrace(
        pattern_counts=counts,
        network_hash=str(obj["network_hash"]),
        total_visits=int(obj["total_visits"]),
    )


def save_trace(trace: ActivationTrace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(trace_to_dict(trace), fh, indent=1)
        fh.write("\n")


def load_trace(path: str | Path) -> ActivationTrace:
    with open(path, "r", encoding="utf-8") as fh:
        return trace_from_dict(json.load(fh))
