"""Compile a network into an exactly-equivalent oblique decision tree.

Every hidden neuron becomes one decision level. Along a path, the pre-activation
of neuron k in layer l is rewritten as an input-linear function
``z = p . x + v`` with ``p = W_k^l @ P_prev`` and ``v = W_k^l @ V_prev + B_k^l``
(first hidden layer: the rows of W^1 / B^1 directly). The right branch keeps
the rewrite (active neuron); the left branch replaces it with zeros, or with
``slope * (p, v)`` for leaky units. Leaves carry the full output-layer rewrite.

The recursion copies the row state on every descent, so independent subtrees
never share mutable arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import netio
from .netio import DimensionError, NetworkSpec, TaskKind
from .tree import (
    ActivationTrace,
    DecisionNode,
    LabelLeaf,
    ObliqueTree,
    PrunedLeaf,
    RegressionLeaf,
    TraceMismatchError,
    TreeNode,
    _greedy_pattern,
    infer,
    trace_id,
)

DEFAULT_NODE_BUDGET = 2**20


class BudgetExceededError(RuntimeError):
    """Full materialization would exceed the configured node budget."""


@dataclass(frozen=True)
class TranslateOptions:
    """``mode`` is "full" or "trace_driven"; trace mode needs a matching trace."""

    mode: str = "full"
    node_budget: int = DEFAULT_NODE_BUDGET
    trace: ActivationTrace | None = None


@dataclass
class _Ctx:
    net: NetworkSpec
    widths: tuple[int, ...]  # hidden layer widths
    slopes: tuple[float, ...]  # 0.0 for relu, the slope for leaky layers


def translate(net: NetworkSpec, opts: TranslateOptions | None = None) -> ObliqueTree:
    """Compile ``net`` into an oblique tree.

    Full mode materializes all ``2^n`` activation paths and requires
    ``2^n <= node_budget``. Trace-driven mode materializes only the paths
    whose pattern occurs in ``opts.trace``; everything else becomes a pruned
    leaf with a fallback path.
    """
    opts = opts or TranslateOptions()
    net.validate()
    n_hidden = net.n_hidden
    net_hash = netio.network_hash(net)

    if opts.mode == "full":
        if n_hidden >= 1 and 2**n_hidden > opts.node_budget:
            raise BudgetExceededError(
                f"full tree needs 2^{n_hidden} = {2**n_hidden} paths, "
                f"budget is {opts.node_budget}"
            )
        patterns = None
    elif opts.mode == "trace_driven":
        if opts.trace is None:
            raise ValueError("trace_driven mode requires a trace")
        if opts.trace.network_hash != net_hash:
            raise TraceMismatchError(
                f"trace network hash {opts.trace.network_hash[:12]}... does not "
                f"match the network ({net_hash[:12]}...)"
            )
        if n_hidden > 0 and opts.trace.pattern_len != n_hidden:
            raise TraceMismatchError(
                f"trace patterns have {opts.trace.pattern_len} bits, network has "
                f"{n_hidden} hidden neurons"
            )
        patterns = sorted(opts.trace.pattern_counts.items())
    else:
        raise ValueError(f"unknown mode: {opts.mode!r}")

    ctx = _Ctx(
        net=net,
        widths=tuple(l.out_width for l in net.hidden_layers),
        slopes=tuple(
            l.activation.slope if l.activation.kind == "leaky_relu" else 0.0
            for l in net.hidden_layers
        ),
    )
    in_p = np.eye(net.input_dim)
    in_v = np.zeros(net.input_dim)
    root = _build(ctx, 0, 0, in_p, in_v, [], 0, patterns)

    meta = {
        "network_hash": net_hash,
        "mode": opts.mode,
        "trace_id": trace_id(opts.trace) if opts.trace is not None else None,
    }
    return ObliqueTree(
        root=root,
        input_dim=net.input_dim,
        task=net.task,
        n_hidden=n_hidden,
        n_outputs=net.n_outputs,
        meta=meta,
    )


def _build(
    ctx: _Ctx,
    layer: int,
    k: int,
    in_p: np.ndarray,
    in_v: np.ndarray,
    rows: list[tuple[np.ndarray, float]],
    g: int,
    patterns: list[tuple[str, int]] | None,
) -> TreeNode:
    """Create the node for neuron ``k`` of hidden layer ``layer``.

    ``in_p`` / ``in_v`` rewrite the current layer's input in terms of the
    original input; ``rows`` holds the activation rewrites already decided for
    this layer; ``g`` is the neuron's global (layer-major) index. ``patterns``
    is the trace subset consistent with the path so far, or None in full mode.
    """
    if layer == len(ctx.widths):
        return _make_leaf(ctx, in_p, in_v)

    w = ctx.net.hidden_layers[layer].weights[k]
    b = ctx.net.hidden_layers[layer].biases[k]
    zp = w @ in_p
    zv = float(w @ in_v + b)

    def child(active: bool) -> TreeNode:
        if patterns is not None:
            sub = [(bits, c) for bits, c in patterns if bits[g] == ("1" if active else "0")]
            if not sub:
                sibling = [(bits, c) for bits, c in patterns if bits[g] == ("0" if active else "1")]
                return PrunedLeaf(fallback=_greedy_pattern(sibling, g + 1), visit_hint=0)
        else:
            sub = None
        if active:
            row = (zp, zv)
        else:
            slope = ctx.slopes[layer]
            row = (slope * zp, slope * zv) if slope else (np.zeros_like(zp), 0.0)
        new_rows = rows + [row]
        if k + 1 < ctx.widths[layer]:
            return _build(ctx, layer, k + 1, in_p, in_v, new_rows, g + 1, sub)
        act_p = np.array([p for p, _ in new_rows])
        act_v = np.array([v for _, v in new_rows])
        if ctx.net.dense:
            act_p = np.vstack([in_p, act_p])
            act_v = np.concatenate([in_v, act_v])
        return _build(ctx, layer + 1, 0, act_p, act_v, [], g + 1, sub)

    return DecisionNode(p=zp, v=zv, left=child(False), right=child(True))


def _make_leaf(ctx: _Ctx, in_p: np.ndarray, in_v: np.ndarray) -> TreeNode:
    out = ctx.net.output_layer
    p_out = out.weights @ in_p
    v_out = out.weights @ in_v + out.biases
    task = ctx.net.task
    if task == TaskKind.REGRESSION:
        return RegressionLeaf(coef=p_out, bias=v_out, activation=ctx.net.leaf_activation)
    if task == TaskKind.BINARY:
        return DecisionNode(p=p_out[0], v=float(v_out[0]), left=LabelLeaf(0), right=LabelLeaf(1))
    return _argmax_chain(p_out, v_out, leader=0, candidate=1)


def _argmax_chain(p_out: np.ndarray, v_out: np.ndarray, leader: int, candidate: int) -> TreeNode:
    """Argmax over output rewrites as a comparison chain.

    Each node tests ``z_leader - z_candidate <= 0``; the candidate wins ties,
    so among equal maxima the highest class index is predicted.
    """
    n_classes = p_out.shape[0]
    p = p_out[leader] - p_out[candidate]
    v = float(v_out[leader] - v_out[candidate])
    if candidate == n_classes - 1:
        left: TreeNode = LabelLeaf(candidate)
        right: TreeNode = LabelLeaf(leader)
    else:
        left = _argmax_chain(p_out, v_out, candidate, candidate + 1)
        right = _argmax_chain(p_out, v_out, leader, candidate + 1)
    return DecisionNode(p=p, v=v, left=left, right=right)


# ---------------------------------------------------------------------------
# Sampling-based equivalence verification


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of comparing a tree against its source network on samples.

    ``max_rel_diff`` uses ``|t - f| / max(1, |f|)``; pruned routings are
    reported but excluded from the discrepancy and disagreement counts.
    """

    n_samples: int
    max_abs_diff: float
    max_rel_diff: float
    label_disagreements: int
    pruned_hits: int
    hash_match: bool
    passed: bool

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "max_abs_diff": self.max_abs_diff,
            "max_rel_diff": self.max_rel_diff,
            "label_disagreements": self.label_disagreements,
            "pruned_hits": self.pruned_hits,
            "hash_match": self.hash_match,
            "passed": self.passed,
        }


REL_TOL = 1e-6


def verify_equivalence(
    net: NetworkSpec,
    tree: ObliqueTree,
    sampler=None,
    n_samples: int = 1000,
    seed: int = 0,
) -> VerificationReport:
    """Compare tree and network outputs on sampled inputs.

    ``sampler`` is either None (uniform on [-1, 1]^d), a (low, high) box, or a
    pre-drawn (n, d) sample array. Passes iff the max relative discrepancy is
    <= 1e-6 and no label disagrees among non-pruned routings; a provenance
    hash mismatch is reported but does not abort the comparison.
    """
    if tree.input_dim != net.input_dim:
        raise DimensionError(
            f"tree input_dim {tree.input_dim} != network input_dim {net.input_dim}"
        )
    if isinstance(sampler, np.ndarray):
        xs = np.asarray(sampler, dtype=np.float64)
        if xs.ndim != 2 or xs.shape[1] != net.input_dim:
            raise DimensionError(f"sample array must have shape (n, {net.input_dim})")
    else:
        if sampler is None:
            low, high = -np.ones(net.input_dim), np.ones(net.input_dim)
        else:
            low = np.broadcast_to(np.asarray(sampler[0], dtype=np.float64), (net.input_dim,))
            high = np.broadcast_to(np.asarray(sampler[1], dtype=np.float64), (net.input_dim,))
        rng = np.random.Generator(np.random.Philox(key=seed))
        xs = rng.uniform(low, high, size=(n_samples, net.input_dim))

    max_abs = 0.0
    max_rel = 0.0
    disagreements = 0
    pruned_hits = 0
    classification = net.task != TaskKind.REGRESSION
    for x in xs:
        pred = infer(tree, x)
        if pred.pruned:
            pruned_hits += 1
            continue
        if classification:
            want = netio.predicted_label(net, x)
            if want is not None and pred.label != want:
                disagreements += 1
        else:
            ref = netio.forward(net, x)
            diff = np.abs(pred.value - ref)
            max_abs = max(max_abs, float(diff.max()))
            max_rel = max(max_rel, float((diff / np.maximum(1.0, np.abs(ref))).max()))

    net_hash = netio.network_hash(net)
    hash_match = tree.meta.get("network_hash") in (None, net_hash)
    passed = max_rel <= REL_TOL and disagreements == 0
    return VerificationReport(
        n_samples=len(xs),
        max_abs_diff=max_abs,
        max_rel_diff=max_rel,
        label_disagreements=disagreements,
        pruned_hits=pruned_hits,
        hash_match=hash_match,
        passed=passed,
    )
