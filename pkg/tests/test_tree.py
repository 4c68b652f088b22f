import numpy as np
import pytest

from otr import (
    ActivationTrace,
    PrunedPathError,
    TaskKind,
    TraceMismatchError,
    forward,
    forward_with_pattern,
    infer,
    load_tree,
    network_hash,
    prune_topk,
    prune_unvisited,
    save_tree,
    stats,
    translate,
)
from otr.tree import (
    DecisionNode,
    ObliqueTree,
    PrunedLeaf,
    RegressionLeaf,
    tree_to_dict,
)

from helpers import random_net, seeded_rng


def census(net, xs):
    counts: dict[str, int] = {}
    for x in xs:
        _, bits = forward_with_pattern(net, x)
        counts[bits] = counts.get(bits, 0) + 1
    return ActivationTrace(counts, network_hash(net), sum(counts.values()))


def leaf_patterns(tree):
    """Hidden patterns of all materialized paths."""
    found = []

    def walk(node, bits):
        if len(bits) == tree.n_hidden:
            if not isinstance(node, PrunedLeaf):
                found.append(bits)
            return
        if isinstance(node, DecisionNode):
            walk(node.left, bits + "0")
            walk(node.right, bits + "1")

    walk(tree.root, "")
    return sorted(found)


def test_infer_worked_example(example_net):
    tree = translate(example_net)
    pred = infer(tree, [0.5, -0.5])
    assert pred.value[0] == pytest.approx(3.5, abs=1e-12)
    assert not pred.pruned


def test_constant_tree():
    tree = ObliqueTree(
        root=RegressionLeaf(np.zeros((1, 3)), np.array([4.25])),
        input_dim=3, task=TaskKind.REGRESSION, n_hidden=0, n_outputs=1, meta={},
    )
    for x in ([0, 0, 0], [1, -1, 9], [100, 3, -8]):
        assert infer(tree, x).value[0] == 4.25


def test_infer_matches_forward_on_random_trees():
    for i in range(50):
        rng = seeded_rng(53, i)
        net = random_net(rng, task=TaskKind.REGRESSION)
        tree = translate(net)
        for _ in range(500):
            x = rng.uniform(-1.5, 1.5, size=net.input_dim)
            ref = forward(net, x)
            got = infer(tree, x).value
            np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-9)


def test_prune_unvisited_keeps_exactly_traced_paths(example_net):
    full = translate(example_net)
    trace = ActivationTrace({"001": 5, "011": 1}, network_hash(example_net), 6)
    pruned = prune_unvisited(full, trace)
    st_ = stats(pruned)
    assert st_.pattern_leaves == 2
    assert st_.leaves == 2
    assert leaf_patterns(pruned) == ["001", "011"]


def test_prune_with_full_coverage_is_identity(example_net):
    full = translate(example_net)
    counts = {format(i, "03b"): 1 for i in range(8)}
    trace = ActivationTrace(counts, network_hash(example_net), 8)
    pruned = prune_unvisited(full, trace)
    assert tree_to_dict(pruned)["root"] == tree_to_dict(full)["root"]


def test_prune_rejects_foreign_trace(example_net):
    full = translate(example_net)
    trace = ActivationTrace({"001": 1}, "0badc0de", 1)
    with pytest.raises(TraceMismatchError):
        prune_unvisited(full, trace)
    with pytest.raises(TraceMismatchError):
        prune_topk(full, trace, 1)


def test_pruning_soundness_bit_exact(example_net):
    rng = seeded_rng(59, 0)
    xs = rng.uniform(-1, 1, size=(300, 2))
    trace = census(example_net, xs)
    full = translate(example_net)
    pruned = prune_unvisited(full, trace)
    for x in xs:
        a = infer(full, x)
        b = infer(pruned, x)
        assert not b.pruned
        assert np.array_equal(a.value, b.value)


def test_topk_is_argmax_at_k1(example_net):
    full = translate(example_net)
    trace = ActivationTrace(
        {"001": 5, "011": 9, "111": 2}, network_hash(example_net), 16
    )
    top1 = prune_topk(full, trace, 1)
    assert leaf_patterns(top1) == ["011"]


def test_topk_saturates_to_unvisited_pruning(example_net):
    full = translate(example_net)
    trace = ActivationTrace(
        {"001": 5, "011": 9, "111": 2}, network_hash(example_net), 16
    )
    saturated = prune_topk(full, trace, 10)
    unvisited = prune_unvisited(full, trace)
    assert tree_to_dict(saturated)["root"] == tree_to_dict(unvisited)["root"]


def test_topk_keeps_census_winners(example_net):
    rng = seeded_rng(61, 0)
    xs = rng.uniform(-1, 1, size=(1000, 2))
    trace = census(example_net, xs)
    ranked = sorted(trace.pattern_counts.items(), key=lambda bc: (-bc[1], bc[0]))
    want = sorted(bits for bits, _ in ranked[:2])
    top2 = prune_topk(translate(example_net), trace, 2)
    assert leaf_patterns(top2) == want
    assert stats(top2).pattern_leaves == min(2, len(trace.pattern_counts))


def test_topk_monotone_in_k(example_net):
    rng = seeded_rng(67, 0)
    xs = rng.uniform(-1, 1, size=(500, 2))
    trace = census(example_net, xs)
    full = translate(example_net)
    prev: set[str] = set()
    for k in range(1, len(trace.pattern_counts) + 1):
        now = set(leaf_patterns(prune_topk(full, trace, k)))
        assert prev <= now
        assert len(now) == k
        prev = now


def test_topk_records_dropped_visits(example_net):
    full = translate(example_net)
    trace = ActivationTrace(
        {"001": 5, "011": 9, "111": 2}, network_hash(example_net), 16
    )
    top1 = prune_topk(full, trace, 1)

    hints = []

    def walk(node):
        if isinstance(node, DecisionNode):
            walk(node.left)
            walk(node.right)
        elif isinstance(node, PrunedLeaf):
            hints.append(node.visit_hint)

    walk(top1.root)
    assert sum(hints) == 5 + 2  # dropped patterns keep their visit counts


def test_fallback_routes_to_greedy_modal_leaf(example_net):
    full = translate(example_net)
    trace = ActivationTrace({"001": 5, "011": 1}, network_hash(example_net), 6)
    pruned = prune_unvisited(full, trace)

    def leaf_model_for(bits):
        node = full.root
        for b in bits:
            node = node.left if b == "0" else node.right
        return node

    rng = seeded_rng(71, 0)
    checked = 0
    for _ in range(2000):
        x = rng.uniform(-3, 3, size=2)
        _, bits = forward_with_pattern(example_net, x)
        if bits in trace.pattern_counts:
            continue
        pred = infer(pruned, x)
        assert pred.pruned
        # the prediction must equal some traced pattern's leaf model at x
        candidates = [leaf_model_for(p).value(x)[0] for p in trace.pattern_counts]
        assert pred.value[0] in candidates
        checked += 1
        if checked >= 25:
            break
    assert checked > 0


def test_pruned_leaf_without_fallback_raises():
    tree = ObliqueTree(
        root=DecisionNode(np.array([1.0]), 0.0, PrunedLeaf(), RegressionLeaf([[0.0]], [1.0])),
        input_dim=1, task=TaskKind.REGRESSION, n_hidden=1, n_outputs=1, meta={},
    )
    with pytest.raises(PrunedPathError):
        infer(tree, [-1.0])


def test_fallback_value_matches_fallback_pattern_leaf(example_net):
    full = translate(example_net)
    trace = ActivationTrace({"001": 5, "011": 1}, network_hash(example_net), 6)
    pruned = prune_unvisited(full, trace)

    def find_pruned(node, bits=""):
        if isinstance(node, PrunedLeaf):
            return node, bits
        if isinstance(node, DecisionNode):
            got = find_pruned(node.left, bits + "0")
            if got:
                return got
            return find_pruned(node.right, bits + "1")
        return None

    leaf, _ = find_pruned(pruned.root)
    assert leaf.fallback in trace.pattern_counts
    # the fallback of any pruned branch is the greedy (here: modal) pattern
    assert leaf.fallback == "001"


def test_stats_worked_example(example_net):
    st_ = stats(translate(example_net))
    assert st_.decision_nodes == 7
    assert st_.leaves == 8
    assert st_.pattern_leaves == 8
    assert st_.max_depth == 3
    assert st_.effective_depth == pytest.approx(3.0)


def test_stats_effective_depth_after_pruning(example_net):
    full = translate(example_net)
    trace = ActivationTrace({"001": 5, "011": 1}, network_hash(example_net), 6)
    st_ = stats(prune_unvisited(full, trace))
    assert st_.pattern_leaves == 2
    assert st_.effective_depth == pytest.approx(1.0)


def test_stats_sparsity_counts_small_coefficients():
    tree = ObliqueTree(
        root=DecisionNode(
            np.array([0.0, 1e-12, 2.0]), 0.5,
            RegressionLeaf(np.zeros((1, 3)), [0.0]),
            RegressionLeaf(np.zeros((1, 3)), [1.0]),
        ),
        input_dim=3, task=TaskKind.REGRESSION, n_hidden=1, n_outputs=1, meta={},
    )
    assert stats(tree).sparsity == pytest.approx(2 / 3)


def test_tree_persistence_round_trip(tmp_path, example_net):
    tree = translate(example_net)
    path = tmp_path / "t.json"
    save_tree(tree, path)
    again = load_tree(path)
    assert tree_to_dict(again) == tree_to_dict(tree)
    x = [0.5, -0.5]
    assert infer(again, x).value[0] == infer(tree, x).value[0]


def test_persistence_is_deterministic(tmp_path, example_net):
    tree = translate(example_net)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_tree(tree, p1)
    save_tree(tree, p2)
    assert p1.read_bytes() == p2.read_bytes()
