"""Render trees as if-then-else programs, parse them back, and build
readability reports.

The emitted language:

    E   ::= C | "if" LIN "<= 0" "then" E "else" E
    C   ::= LIN | VEC | "tanh" "(" LIN | VEC ")" | "label" INT | PID
    VEC ::= "[" C ("," C)* "]"
    PID ::= (LIN | VEC) "* P" "+" (LIN | VEC) "* I" "+" (LIN | VEC) "* D"
    LIN ::= bias-first sum of terms: v, c*name, or bare name for |c| = 1

Linear expressions print their bias first (coefficients follow input order),
exact-zero terms are never printed, and numbers use plain decimal notation so
programs stay readable. The bundled parser accepts everything the emitter can
produce; ``emit -> parse -> evaluate`` reproduces tree inference up to the
rendering precision.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .netio import DimensionError, TaskKind
from .tree import (
    DecisionNode,
    LabelLeaf,
    ObliqueTree,
    Prediction,
    PrunedLeaf,
    RegressionLeaf,
    TreeNode,
    _node_for_pattern,
    infer,
)

RESERVED = {"if", "then", "else", "label", "tanh", "P", "I", "D"}

INDENT = "    "


class ProgramSyntaxError(ValueError):
    """The program text does not parse under the DSL grammar."""


@dataclass(frozen=True)
class ProgramText:
    source: str
    names: tuple[str, ...]


def format_number(x: float, precision: int = 10) -> str:
    """Plain decimal rendering with at most ``precision`` significant digits."""
    if not math.isfinite(x):
        raise ValueError(f"cannot render non-finite value {x!r}")
    if x == 0.0:
        return "0"
    return np.format_float_positional(
        x, precision=precision, unique=True, fractional=False, trim="-"
    )


def default_names(input_dim: int) -> tuple[str, ...]:
    return tuple(f"x{i + 1}" for i in range(input_dim))


def _check_names(names, input_dim: int) -> tuple[str, ...]:
    if names is None:
        return default_names(input_dim)
    names = tuple(names)
    if len(names) != input_dim:
        raise DimensionError(f"need {input_dim} variable names, got {len(names)}")
    seen = set()
    for n in names:
        if not re.fullmatch(r"[A-Za-z_]\w*", n) or n in RESERVED or n in seen:
            raise ValueError(f"invalid or duplicate variable name: {n!r}")
        seen.add(n)
    return names


def render_linear(coefs, bias: float, names, precision: int = 10,
                  drop_threshold: float = 0.0) -> str:
    """Bias-first linear expression; terms with |coef| <= threshold are dropped."""
    pieces: list[tuple[bool, str]] = []  # (negative, text)
    if bias != 0.0:
        pieces.append((bias < 0, format_number(abs(bias), precision)))
    for c, name in zip(coefs, names):
        if abs(c) <= drop_threshold or c == 0.0:
            continue
        mag = abs(c)
        text = name if mag == 1.0 else f"{format_number(mag, precision)}*{name}"
        pieces.append((c < 0, text))
    if not pieces:
        return "0"
    neg, text = pieces[0]
    out = ("-" if neg else "") + text
    for neg, text in pieces[1:]:
        out += (" - " if neg else " + ") + text
    return out


def _render_leaf_model(leaf: RegressionLeaf, names, precision, drop_threshold) -> str:
    rows = [
        render_linear(leaf.coef[i], float(leaf.bias[i]), names, precision, drop_threshold)
        for i in range(leaf.coef.shape[0])
    ]
    body = rows[0] if len(rows) == 1 else "[" + ", ".join(rows) + "]"
    if leaf.activation == "tanh":
        return f"tanh({body})"
    return body


def emit_program(tree: ObliqueTree, names=None, precision: int = 10,
                 drop_threshold: float = 0.0) -> ProgramText:
    """Render a tree as an if-then-else program.

    Pruned branches are printed as their fallback leaf, which reproduces the
    deployed fallback semantics in the program text.
    """
    names = _check_names(names, tree.input_dim)

    def render(node: TreeNode, depth: int) -> str:
        ind = INDENT * depth
        if isinstance(node, PrunedLeaf):
            if node.fallback is None:
                raise ValueError("cannot emit a pruned branch that has no fallback")
            return render(_node_for_pattern(tree, node.fallback), depth)
        if isinstance(node, DecisionNode):
            test = render_linear(node.p, node.v, names, precision, drop_threshold)
            return (
                f"{ind}if {test} <= 0 then\n"
                f"{render(node.left, depth + 1)}\n"
                f"{ind}else\n"
                f"{render(node.right, depth + 1)}"
            )
        if isinstance(node, RegressionLeaf):
            return ind + _render_leaf_model(node, names, precision, drop_threshold)
        return f"{ind}label {node.label}"

    return ProgramText(source=render(tree.root, 0) + "\n", names=names)


def emit_pid_program(policy, names=None, precision: int = 10,
                     drop_threshold: float = 0.0) -> ProgramText:
    """Render a PID policy: the gain tree's leaves become
    ``theta_P * P + theta_I * I + theta_D * D`` combinations.

    Decision nodes read the raw state; constant gain blocks print as plain
    vectors.
    """
    tree = policy.theta_tree()
    names = _check_names(names, tree.input_dim)
    s_dim = tree.input_dim

    def render_block(leaf: RegressionLeaf, rows: range) -> str:
        parts = [
            render_linear(leaf.coef[i], float(leaf.bias[i]), names, precision, drop_threshold)
            for i in rows
        ]
        return parts[0] if len(parts) == 1 else "[" + ", ".join(parts) + "]"

    def render_combo(leaf: RegressionLeaf, a: int) -> str:
        base = 3 * s_dim * a
        blocks = [
            render_block(leaf, range(base + j * s_dim, base + (j + 1) * s_dim))
            for j in range(3)
        ]
        return f"{blocks[0]} * P + {blocks[1]} * I + {blocks[2]} * D"

    def render(node: TreeNode, depth: int) -> str:
        ind = INDENT * depth
        if isinstance(node, PrunedLeaf):
            if node.fallback is None:
                raise ValueError("cannot emit a pruned branch that has no fallback")
            return render(_node_for_pattern(tree, node.fallback), depth)
        if isinstance(node, DecisionNode):
            test = render_linear(node.p, node.v, names, precision, drop_threshold)
            return (
                f"{ind}if {test} <= 0 then\n"
                f"{render(node.left, depth + 1)}\n"
                f"{ind}else\n"
                f"{render(node.right, depth + 1)}"
            )
        if not isinstance(node, RegressionLeaf):
            raise ValueError("PID gain trees must have regression leaves")
        combos = [render_combo(node, a) for a in range(policy.action_dim)]
        body = combos[0] if len(combos) == 1 else "[" + ", ".join(combos) + "]"
        return ind + body

    return ProgramText(source=render(tree.root, 0) + "\n", names=names)


# ---------------------------------------------------------------------------
# Parser and evaluator


@dataclass(frozen=True)
class Lin:
    terms: tuple[tuple[str, float], ...]  # (name, coefficient)
    bias: float

    def eval(self, env: dict) -> float:
        return self.bias + sum(c * env[n] for n, c in self.terms)


@dataclass(frozen=True)
class Vec:
    items: tuple

    def eval(self, env: dict):
        return np.array([item.eval(env) for item in self.items], dtype=np.float64)


@dataclass(frozen=True)
class Tanh:
    inner: object

    def eval(self, env: dict):
        return np.tanh(self.inner.eval(env))


@dataclass(frozen=True)
class Label:
    label: int

    def eval(self, env: dict) -> int:
        return self.label


@dataclass(frozen=True)
class PidCombo:
    blocks: tuple  # (theta_P, theta_I, theta_D), each Lin or Vec

    def eval(self, env: dict) -> float:
        total = 0.0
        for block, feat in zip(self.blocks, ("P", "I", "D")):
            theta = block.eval(env)
            total += float(np.dot(np.atleast_1d(theta), np.atleast_1d(env[feat])))
        return total


@dataclass(frozen=True)
class If:
    test: Lin
    then: object
    orelse: object

    def eval(self, env: dict):
        branch = self.then if self.test.eval(env) <= 0.0 else self.orelse
        return branch.eval(env)


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*|\.\d+|\d+)|(?P<name>[A-Za-z_]\w*)|(?P<op><=|[\[\](),*+-]))"
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            if text[pos:].strip() == "":
                break
            raise ProgramSyntaxError(f"unexpected character {text[pos]!r} at offset {pos}")
        pos = m.end()
        for kind in ("num", "name", "op"):
            val = m.group(kind)
            if val is not None:
                tokens.append((kind, val))
                break
    tokens.append(("eof", ""))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self, offset: int = 0) -> tuple[str, str]:
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def next(self) -> tuple[str, str]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str) -> None:
        kind, val = self.next()
        if val != value:
            raise ProgramSyntaxError(f"expected {value!r}, got {val!r}")

    def parse_program(self):
        node = self.parse_expr()
        if self.peek()[0] != "eof":
            raise ProgramSyntaxError(f"trailing input at token {self.peek()[1]!r}")
        return node

    def parse_expr(self):
        if self.peek() == ("name", "if"):
            self.next()
            test = self.parse_linear()
            self.expect("<=")
            kind, val = self.next()
            if (kind, val) != ("num", "0"):
                raise ProgramSyntaxError("decision tests must compare against 0")
            self.expect("then")
            then = self.parse_expr()
            self.expect("else")
            orelse = self.parse_expr()
            return If(test, then, orelse)
        return self.parse_leaf()

    def parse_leaf(self):
        kind, val = self.peek()
        if (kind, val) == ("name", "label"):
            self.next()
            nkind, nval = self.next()
            if nkind != "num" or "." in nval:
                raise ProgramSyntaxError("label must be a non-negative integer")
            return Label(int(nval))
        if (kind, val) == ("name", "tanh"):
            self.next()
            self.expect("(")
            inner = self.parse_vector() if self.peek()[1] == "[" else self.parse_linear()
            self.expect(")")
            return Tanh(inner)
        block = self.parse_vector() if val == "[" else self.parse_linear()
        if self.peek() == ("op", "*") and self.peek(1) == ("name", "P"):
            return self.parse_pid_tail(block)
        return block

    def parse_pid_tail(self, first):
        blocks = [first]
        for feat in ("P", "I", "D"):
            if feat != "P":
                self.expect("+")
                blocks.append(self.parse_vector() if self.peek()[1] == "[" else self.parse_linear())
            self.expect("*")
            self.expect(feat)
        return PidCombo(tuple(blocks))

    def parse_vector(self):
        self.expect("[")
        items = [self.parse_vector_item()]
        while self.peek() == ("op", ","):
            self.next()
            items.append(self.parse_vector_item())
        self.expect("]")
        return Vec(tuple(items))

    def parse_vector_item(self):
        item = self.parse_vector() if self.peek()[1] == "[" else self.parse_linear()
        if self.peek() == ("op", "*") and self.peek(1) == ("name", "P"):
            return self.parse_pid_tail(item)
        return item

    def parse_linear(self) -> Lin:
        bias = 0.0
        terms: list[tuple[str, float]] = []
        first = True
        while True:
            sign = 1.0
            kind, val = self.peek()
            if val in ("+", "-"):
                if val == "-":
                    sign = -1.0
                self.next()
            elif not first:
                break
            name, coef = self.parse_term()
            if name is None:
                bias += sign * coef
            else:
                terms.append((name, sign * coef))
            first = False
        if first:
            raise ProgramSyntaxError(f"expected a linear expression at {self.peek()[1]!r}")
        return Lin(tuple(terms), bias)

    def parse_term(self) -> tuple[str | None, float]:
        kind, val = self.next()
        if kind == "num":
            # "c*name" only when the name is not a reserved PID feature
            if (
                self.peek() == ("op", "*")
                and self.peek(1)[0] == "name"
                and self.peek(1)[1] not in RESERVED
            ):
                self.next()
                _, name = self.next()
                return name, float(val)
            return None, float(val)
        if kind == "name" and val not in RESERVED:
            return val, 1.0
        raise ProgramSyntaxError(f"unexpected token {val!r} in linear expression")


def parse_program(text: str):
    """Parse program text into an evaluable AST."""
    return _Parser(_tokenize(text)).parse_program()


def evaluate_program(ast, x, names, pid_features=None):
    """Evaluate a parsed program on input vector ``x``.

    ``pid_features`` supplies the (P, I, D) feature vectors when the program
    uses PID combinations.
    """
    env = {name: float(v) for name, v in zip(names, np.asarray(x, dtype=np.float64))}
    if pid_features is not None:
        env["P"], env["I"], env["D"] = pid_features
    return ast.eval(env)


# ---------------------------------------------------------------------------
# Coefficient zeroing and dominance reporting


@dataclass(frozen=True)
class ZeroOutReport:
    threshold: float
    n_zeroed: int
    max_output_change: float  # regression: max |delta|; classification: label flips
    n_samples: int


def zero_out(tree: ObliqueTree, threshold: float, samples=None,
             n_samples: int = 256, seed: int = 0) -> tuple[ObliqueTree, ZeroOutReport]:
    """Zero every decision/leaf coefficient with ``|c| <= threshold``.

    Returns the rewritten tree plus a report of the largest output change over
    the sample set (uniform on [-1, 1]^d unless ``samples`` is given). Biases
    are never zeroed. Idempotent at a fixed threshold.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    zeroed = 0

    def rewrite(node: TreeNode) -> TreeNode:
        nonlocal zeroed
        if isinstance(node, DecisionNode):
            p = node.p.copy()
            mask = np.abs(p) <= threshold
            zeroed += int(np.count_nonzero(p[mask]))
            p[mask] = 0.0
            return DecisionNode(p, node.v, rewrite(node.left), rewrite(node.right))
        if isinstance(node, RegressionLeaf):
            coef = node.coef.copy()
            mask = np.abs(coef) <= threshold
            zeroed += int(np.count_nonzero(coef[mask]))
            coef[mask] = 0.0
            return RegressionLeaf(coef, node.bias.copy(), node.activation)
        if isinstance(node, LabelLeaf):
            return LabelLeaf(node.label)
        return PrunedLeaf(node.fallback, node.visit_hint)

    new_tree = ObliqueTree(
        root=rewrite(tree.root),
        input_dim=tree.input_dim,
        task=tree.task,
        n_hidden=tree.n_hidden,
        n_outputs=tree.n_outputs,
        meta=dict(tree.meta),
    )

    if samples is None:
        rng = np.random.Generator(np.random.Philox(key=seed))
        samples = rng.uniform(-1.0, 1.0, size=(n_samples, tree.input_dim))
    else:
        samples = np.asarray(samples, dtype=np.float64)
    change = 0.0
    for x in samples:
        a, b = infer(tree, x), infer(new_tree, x)
        if tree.task == TaskKind.REGRESSION:
            change = max(change, float(np.abs(a.value - b.value).max()))
        else:
            change += float(a.label != b.label)
    report = ZeroOutReport(
        threshold=threshold,
        n_zeroed=zeroed,
        max_output_change=change,
        n_samples=len(samples),
    )
    return new_tree, report


@dataclass(frozen=True)
class NodeDominance:
    """Per-term worst-case contribution of one decision node over an input box."""

    path: str  # bit path from the root ("" for the root itself)
    contributions: dict[str, float]  # variable name (or "bias") -> contribution
    dominant: str | None  # None when every contribution is zero
    droppable: tuple[str, ...]


@dataclass(frozen=True)
class DominanceReport:
    nodes: tuple[NodeDominance, ...]
    low: np.ndarray
    high: np.ndarray
    tau: float

    def to_dict(self) -> dict:
        return {
            "low": self.low.tolist(),
            "high": self.high.tolist(),
            "tau": self.tau,
            "nodes": [
                {
                    "path": n.path,
                    "contributions": n.contributions,
                    "dominant": n.dominant,
                    "droppable": list(n.droppable),
                }
                for n in self.nodes
            ],
        }


def dominance_report(tree: ObliqueTree, input_box, tau: float = 0.1,
                     names=None) -> DominanceReport:
    """Rank each decision node's terms by worst-case contribution over a box.

    ``contribution_i = |p_i| * max(|lo_i|, |hi_i|)`` and the bias contributes
    ``|v|``. Terms below ``tau`` times the maximum contribution are flagged
    droppable.
    """
    names = _check_names(names, tree.input_dim)
    low = np.broadcast_to(np.asarray(input_box[0], dtype=np.float64), (tree.input_dim,))
    high = np.broadcast_to(np.asarray(input_box[1], dtype=np.float64), (tree.input_dim,))
    if not (np.isfinite(low).all() and np.isfinite(high).all()):
        raise ValueError("input box must be finite")
    if (low > high).any():
        raise ValueError("input box must satisfy low <= high per dimension")
    extent = np.maximum(np.abs(low), np.abs(high))

    nodes: list[NodeDominance] = []

    def visit(node: TreeNode, path: str) -> None:
        if not isinstance(node, DecisionNode):
            return
        contrib = {name: float(abs(c) * e) for name, c, e in zip(names, node.p, extent)}
        contrib["bias"] = abs(node.v)
        top = max(contrib.values())
        if top == 0.0:
            dominant = None
            droppable: tuple[str, ...] = ()
        else:
            dominant = max(contrib, key=lambda k: (contrib[k], k))
            # exact-zero terms are already absent, not candidates for dropping
            droppable = tuple(
                k for k, c in sorted(contrib.items()) if 0.0 < c < tau * top
            )
        nodes.append(NodeDominance(path, contrib, dominant, droppable))
        visit(node.left, path + "0")
        visit(node.right, path + "1")

    visit(tree.root, "")
    return DominanceReport(nodes=tuple(nodes), low=low.copy(), high=high.copy(), tau=tau)
