import numpy as np
import pytest

from otr import (
    TaskKind,
    dominance_report,
    emit_pid_program,
    emit_program,
    evaluate_program,
    infer,
    parse_program,
    translate,
    zero_out,
)
from otr.emitter import ProgramSyntaxError, format_number, render_linear
from otr.tree import DecisionNode, ObliqueTree, RegressionLeaf, tree_to_dict

from helpers import random_net, seeded_rng

MCC_PROGRAM = """\
if -2.2 - 3.8*x + 114.3*v_x <= 0 then
    -6.1
else
    -102.3 - 169.8*x + 5116.5*v_x
"""


def test_emit_mountaincar_policy_text(mcc_tree):
    text = emit_program(mcc_tree, names=["x", "v_x"])
    assert text.source == MCC_PROGRAM


def test_emit_constant_leaf():
    tree = ObliqueTree(
        root=RegressionLeaf(np.zeros((1, 2)), np.array([-6.1])),
        input_dim=2, task=TaskKind.REGRESSION, n_hidden=0, n_outputs=1, meta={},
    )
    assert emit_program(tree).source == "-6.1\n"


def test_format_number_stays_decimal():
    assert format_number(5116.5) == "5116.5"
    assert format_number(0.0) == "0"
    assert format_number(-0.0) == "0"
    assert format_number(1.0) == "1"
    assert format_number(1e-4) == "0.0001"
    assert format_number(123456789.25) == "123456789.2"  # 10 significant digits
    assert format_number(1 / 3, precision=4) == "0.3333"


def test_render_linear_drops_exact_zeros():
    assert render_linear([0.0, 2.0], 0.0, ["a", "b"]) == "2*b"
    assert render_linear([0.0, 0.0], 0.0, ["a", "b"]) == "0"
    assert render_linear([1.0, -1.0], -0.5, ["a", "b"]) == "-0.5 + a - b"


def test_round_trip_matches_inference():
    for i in range(12):
        rng = seeded_rng(73, i)
        net = random_net(rng, task=TaskKind.REGRESSION)
        tree = translate(net)
        prog = emit_program(tree)
        ast = parse_program(prog.source)
        for _ in range(200):
            x = rng.uniform(-2, 2, size=net.input_dim)
            got = evaluate_program(ast, x, prog.names)
            want = infer(tree, x).value
            want = want[0] if want.shape == (1,) else want
            np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-8)


def test_round_trip_classification_and_tanh():
    rng = seeded_rng(79, 0)
    net = random_net(rng, task=TaskKind.MULTI)
    tree = translate(net)
    ast = parse_program(emit_program(tree).source)
    for _ in range(100):
        x = rng.uniform(-2, 2, size=net.input_dim)
        assert evaluate_program(ast, x, emit_program(tree).names) == infer(tree, x).label

    net = random_net(rng, task=TaskKind.REGRESSION, leaf_activation="tanh")
    tree = translate(net)
    prog = emit_program(tree)
    assert "tanh(" in prog.source
    ast = parse_program(prog.source)
    for _ in range(100):
        x = rng.uniform(-2, 2, size=net.input_dim)
        got = np.atleast_1d(evaluate_program(ast, x, prog.names))
        np.testing.assert_allclose(got, infer(tree, x).value, rtol=1e-8, atol=1e-8)


def test_emitted_pruned_branches_use_fallback(example_net):
    from otr import ActivationTrace, TranslateOptions, network_hash

    trace = ActivationTrace({"001": 5, "011": 1}, network_hash(example_net), 6)
    tree = translate(example_net, TranslateOptions(mode="trace_driven", trace=trace))
    prog = emit_program(tree)
    ast = parse_program(prog.source)
    rng = seeded_rng(83, 0)
    for _ in range(200):
        x = rng.uniform(-3, 3, size=2)
        got = evaluate_program(ast, x, prog.names)
        np.testing.assert_allclose(got, infer(tree, x).value[0], rtol=1e-8, atol=1e-8)


def test_parser_rejects_garbage():
    for bad in ("if x <= 0 then 1", "1 +", "[1, 2", "label x", "if x <= 1 then 1 else 2"):
        with pytest.raises(ProgramSyntaxError):
            parse_program(bad)


def test_pid_program_text(pendulum_pid):
    text = emit_pid_program(pendulum_pid, names=["x", "y", "w"])
    assert "[3.15, 3.24, 0.65] * P" in text.source
    assert "[10.94, 11.89, 0.13] * D" in text.source
    assert "[0.12, 0.52, 0.04] * I" in text.source
    assert "-0.25 + 0.75*x + 1.04*y + 0.41*w" in text.source
    parse_program(text.source)  # grammar closure for the PID form


def test_pid_program_evaluates(pendulum_pid):
    text = emit_pid_program(pendulum_pid, names=["x", "y", "w"])
    ast = parse_program(text.source)
    s = np.array([0.0, 1.0, 0.0])
    feats = (np.array([1.0, -1.0, 0.0]), np.zeros(3), np.array([1.0, -1.0, 0.0]))
    got = evaluate_program(ast, s, ("x", "y", "w"), pid_features=feats)
    # theta_P . P + theta_D . D on the constant branch
    want = (3.15 - 3.24) + (10.94 - 11.89)
    assert got == pytest.approx(want, abs=1e-12)


def test_zero_out_identity_cases(mcc_tree):
    same, report = zero_out(mcc_tree, 0.0)
    assert tree_to_dict(same)["root"] == tree_to_dict(mcc_tree)["root"]
    assert report.n_zeroed == 0
    assert report.max_output_change == 0.0

    big, report = zero_out(mcc_tree, 0.5)  # all nonzero coefficients exceed 0.5
    assert tree_to_dict(big)["root"] == tree_to_dict(mcc_tree)["root"]
    assert report.n_zeroed == 0


def test_zero_out_kills_tiny_noise(pendulum_pid):
    tree = pendulum_pid.theta_tree()

    def jitter(node):
        if isinstance(node, DecisionNode):
            return DecisionNode(node.p, node.v, jitter(node.left), jitter(node.right))
        coef = node.coef + np.where(node.coef == 0.0, 1e-9, 0.0)
        return RegressionLeaf(coef, node.bias, node.activation)

    noisy = ObliqueTree(jitter(tree.root), tree.input_dim, tree.task,
                        tree.n_hidden, tree.n_outputs, dict(tree.meta))
    rng = seeded_rng(89, 0)
    samples = rng.uniform([-1, -1, -8], [1, 1, 8], size=(200, 3))
    cleaned, report = zero_out(noisy, 1e-8, samples=samples)
    assert report.n_zeroed > 0
    assert report.max_output_change < 1e-6
    again, report2 = zero_out(cleaned, 1e-8, samples=samples)
    assert tree_to_dict(again)["root"] == tree_to_dict(cleaned)["root"]
    assert report2.n_zeroed == 0


def test_dominance_worked_example(mcc_tree):
    report = dominance_report(mcc_tree, ([-1.2, -0.07], [0.6, 0.07]), names=["x", "v_x"])
    root = report.nodes[0]
    assert root.path == ""
    assert root.contributions["x"] == pytest.approx(4.56)
    assert root.contributions["v_x"] == pytest.approx(8.001)
    assert root.contributions["bias"] == pytest.approx(2.2)
    assert root.dominant == "v_x"
    assert root.droppable == ()


def test_dominance_symmetric_box_no_droppables():
    tree = ObliqueTree(
        root=DecisionNode(np.array([1.0, 1.0]), 0.0,
                          RegressionLeaf(np.zeros((1, 2)), [0.0]),
                          RegressionLeaf(np.zeros((1, 2)), [1.0])),
        input_dim=2, task=TaskKind.REGRESSION, n_hidden=1, n_outputs=1, meta={},
    )
    report = dominance_report(tree, ([-1, -1], [1, 1]))
    node = report.nodes[0]
    assert node.contributions["x1"] == node.contributions["x2"] == 1.0
    assert node.droppable == ()


def test_dominance_zero_row_flags_undefined():
    tree = ObliqueTree(
        root=DecisionNode(np.zeros(2), 0.0,
                          RegressionLeaf(np.zeros((1, 2)), [0.0]),
                          RegressionLeaf(np.zeros((1, 2)), [1.0])),
        input_dim=2, task=TaskKind.REGRESSION, n_hidden=1, n_outputs=1, meta={},
    )
    node = dominance_report(tree, ([-1, -1], [1, 1])).nodes[0]
    assert node.dominant is None
    assert all(c == 0.0 for c in node.contributions.values())


def test_dominance_degenerate_box(mcc_tree):
    report = dominance_report(mcc_tree, ([0.5, 0.01], [0.5, 0.01]), names=["x", "v_x"])
    assert report.nodes[0].contributions["x"] == pytest.approx(3.8 * 0.5)


def test_dominance_rejects_bad_boxes(mcc_tree):
    with pytest.raises(ValueError):
        dominance_report(mcc_tree, ([1.0, 0.0], [0.0, 0.0]))
    with pytest.raises(ValueError):
        dominance_report(mcc_tree, ([-np.inf, 0.0], [0.0, 0.0]))
