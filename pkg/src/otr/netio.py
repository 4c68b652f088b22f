"""Network data model, JSON interchange format, and the reference forward pass.

Everything downstream (translation, pruning, evaluation) treats the forward
pass defined here as ground truth. Networks are immutable after load and all
operations are pure functions, so specs can be shared freely across threads.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

HIDDEN_KINDS = ("relu", "leaky_relu")
OUTPUT_KINDS = ("linear", "logistic", "softmax")
LEAF_ACTIVATIONS = ("identity", "tanh")


class NetworkError(ValueError):
    """Base class for network loading / validation failures."""


class NetworkParseError(NetworkError):
    """The interchange file is malformed."""


class NetworkShapeError(NetworkError):
    """Weight / bias shapes are inconsistent. The message names the layer."""


class ActivationError(NetworkError):
    """Unsupported activation kind or invalid leaky slope."""


class DimensionError(ValueError):
    """An input vector does not match the expected dimension."""


class TaskKind(Enum):
    REGRESSION = "regression"
    BINARY = "classification_binary"
    MULTI = "classification_multi"


@dataclass(frozen=True)
class Activation:
    """Activation applied to a layer's pre-activations.

    ``slope`` is only meaningful for ``leaky_relu`` and must satisfy 0 < slope < 1.
    """

    kind: str
    slope: float = 0.0

    def to_json(self):
        if self.kind == "leaky_relu":
            return {"leaky_relu": self.slope}
        return self.kind

    @staticmethod
    def from_json(obj) -> "Activation":
        if isinstance(obj, str):
            return Activation(obj)
        if isinstance(obj, dict) and set(obj) == {"leaky_relu"}:
            return Activation("leaky_relu", float(obj["leaky_relu"]))
        raise ActivationError(f"unrecognized activation spec: {obj!r}")


@dataclass(frozen=True, eq=False)
class LayerSpec:
    """One dense layer: ``z = weights @ input + biases`` followed by ``activation``."""

    weights: np.ndarray  # (out_width, in_width), float64
    biases: np.ndarray  # (out_width,), float64
    activation: Activation

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        b = np.ascontiguousarray(np.asarray(self.biases, dtype=np.float64))
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def out_width(self) -> int:
        return self.weights.shape[0]

    @property
    def in_width(self) -> int:
        return self.weights.shape[1]

    def __eq__(self, other):
        if not isinstance(other, LayerSpec):
            return NotImplemented
        return (
            self.activation == other.activation
            and self.weights.shape == other.weights.shape
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.biases, other.biases)
        )


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """A fully-connected ReLU / LeakyReLU network plus its task metadata.

    ``dense`` networks feed every layer the concatenation of the original
    input and all previous layers' activations, original input first, layers
    in order. ``leaf_activation`` ("identity" or "tanh") is a squish applied
    to the final linear output of regression networks.
    """

    layers: tuple[LayerSpec, ...]
    input_dim: int
    task: TaskKind
    dense: bool = False
    leaf_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def hidden_layers(self) -> tuple[LayerSpec, ...]:
        return self.layers[:-1]

    @property
    def output_layer(self) -> LayerSpec:
        return self.layers[-1]

    @property
    def n_hidden(self) -> int:
        """Total number of hidden neurons (= activation pattern length)."""
        return sum(l.out_width for l in self.hidden_layers)

    @property
    def n_outputs(self) -> int:
        return self.output_layer.out_width

    def __eq__(self, other):
        if not isinstance(other, NetworkSpec):
            return NotImplemented
        return (
            self.input_dim == other.input_dim
            and self.task == other.task
            and self.dense == other.dense
            and self.leaf_activation == other.leaf_activation
            and self.layers == other.layers
        )

    def validate(self) -> "NetworkSpec":
        """Check all structural invariants; raise a NetworkError subclass otherwise."""
        if not self.layers:
            raise NetworkShapeError("network has no layers")
        if self.input_dim < 1:
            raise NetworkShapeError(f"input_dim must be positive, got {self.input_dim}")
        if self.leaf_activation not in LEAF_ACTIVATIONS:
            raise ActivationError(f"unsupported leaf_activation: {self.leaf_activation!r}")

        in_width = self.input_dim
        for i, layer in enumerate(self.layers, start=1):
            if layer.weights.ndim != 2 or layer.biases.ndim != 1:
                raise NetworkShapeError(f"layer {i}: weights must be 2-D and biases 1-D")
            if not np.isfinite(layer.weights).all() or not np.isfinite(layer.biases).all():
                raise NetworkShapeError(f"layer {i}: non-finite weight or bias entries")
            if layer.biases.shape[0] != layer.out_width:
                raise NetworkShapeError(
                    f"layer {i}: {layer.out_width} weight rows but "
                    f"{layer.biases.shape[0]} biases"
                )
            if layer.in_width != in_width:
                raise NetworkShapeError(
                    f"layer {i}: expected {in_width} input columns, got {layer.in_width}"
                )
            is_output = i == len(self.layers)
            kind = layer.activation.kind
            if is_output:
                if kind not in OUTPUT_KINDS:
                    raise ActivationError(f"layer {i}: output activation {kind!r} unsupported")
            else:
                if kind not in HIDDEN_KINDS:
                    raise ActivationError(f"layer {i}: hidden activation {kind!r} unsupported")
                if kind == "leaky_relu" and not 0.0 < layer.activation.slope < 1.0:
                    raise ActivationError(
                        f"layer {i}: leaky slope must be in (0, 1), got {layer.activation.slope}"
                    )
            if self.dense:
                in_width += layer.out_width
            else:
                in_width = layer.out_width

        out_kind = self.output_layer.activation.kind
        expected = {
            TaskKind.REGRESSION: "linear",
            TaskKind.BINARY: "logistic",
            TaskKind.MULTI: "softmax",
        }[self.task]
        if out_kind != expected:
            raise ActivationError(
                f"task {self.task.value} requires {expected!r} output, got {out_kind!r}"
            )
        if out_kind == "logistic" and self.n_outputs != 1:
            raise NetworkShapeError("logistic output requires exactly one output unit")
        if out_kind == "softmax" and self.n_outputs < 2:
            raise NetworkShapeError("softmax output requires at least two output units")
        if self.leaf_activation == "tanh" and out_kind != "linear":
            raise ActivationError("leaf_activation 'tanh' only applies to linear outputs")
        return self


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def _check_input(net: NetworkSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise DimensionError(f"expected input of shape ({net.input_dim},), got {x.shape}")
    if not np.isfinite(x).all():
        raise DimensionError("input contains non-finite entries")
    return x


def forward(net: NetworkSpec, x) -> np.ndarray:
    """Run the network on a single input vector; returns the output vector."""
    out, _ = _forward(net, _check_input(net, x), want_pattern=False)
    return out


def forward_with_pattern(net: NetworkSpec, x) -> tuple[np.ndarray, str]:
    """Like :func:`forward` but also returns the hidden activation pattern.

    Bit j of the pattern (layer-major, row order within a layer) is '1' iff
    hidden neuron j has a strictly positive pre-activation; z == 0 counts as
    inactive.
    """
    return _forward(net, _check_input(net, x), want_pattern=True)


def _forward(net: NetworkSpec, x: np.ndarray, want_pattern: bool) -> tuple[np.ndarray, str]:
    carry = x  # dense nets: running concatenation; standard: previous activations
    bits: list[str] = []
    for layer in net.hidden_layers:
        z = layer.weights @ carry + layer.biases
        if want_pattern:
            bits.extend("1" if zj > 0.0 else "0" for zj in z)
        if layer.activation.kind == "relu":
            a = np.maximum(z, 0.0)
        else:
            a = np.where(z > 0.0, z, layer.activation.slope * z)
        carry = np.concatenate([carry, a]) if net.dense else a

    out_layer = net.output_layer
    z = out_layer.weights @ carry + out_layer.biases
    kind = out_layer.activation.kind
    if kind == "linear":
        out = np.tanh(z) if net.leaf_activation == "tanh" else z
    elif kind == "logistic":
        out = _sigmoid(z)
    else:
        out = _softmax(z)
    return out, "".join(bits)


def predicted_label(net: NetworkSpec, x) -> int | None:
    """Class label the network predicts, or None when the argmax is not unique.

    Binary networks follow the z <= 0 -> 0 convention, so they never tie.
    """
    x = _check_input(net, x)
    if net.task == TaskKind.BINARY:
        out, _ = _forward(net, x, want_pattern=False)
        return int(out[0] > 0.5)
    out, _ = _forward(net, x, want_pattern=False)
    order = np.argsort(out)
    if out[order[-1]] == out[order[-2]]:
        return None
    return int(order[-1])


# ---------------------------------------------------------------------------
# Interchange format


def network_to_dict(net: NetworkSpec) -> dict:
    return {
        "input_dim": net.input_dim,
        "task": net.task.value,
        "dense": net.dense,
        "leaf_activation": net.leaf_activation,
        "layers": [
            {
                "weights": layer.weights.tolist(),
                "biases": layer.biases.tolist(),
                "activation": layer.activation.to_json(),
            }
            for layer in net.layers
        ],
    }


def network_from_dict(obj: dict) -> NetworkSpec:
    try:
        layers = tuple(
            LayerSpec(
                weights=np.array(l["weights"], dtype=np.float64),
                biases=np.array(l["biases"], dtype=np.float64),
                activation=Activation.from_json(l["activation"]),
            )
            for l in obj["layers"]
        )
        net = NetworkSpec(
            layers=layers,
            input_dim=int(obj["input_dim"]),
            task=TaskKind(obj["task"]),
            dense=bool(obj.get("dense", False)),
            leaf_activation=str(obj.get("leaf_activation", "identity")),
        )
    except NetworkError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkParseError(f"malformed network object: {exc}") from exc
    return net.validate()


def load_network(path: str | Path) -> NetworkSpec:
    """Load and validate a network from its JSON interchange file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise NetworkParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise NetworkParseError(f"{path}: top level must be an object")
    return network_from_dict(obj)


def save_network(net: NetworkSpec, path: str | Path) -> None:
    """Write the JSON interchange file. Floats keep full round-trip precision."""
    net.validate()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(network_to_dict(net), fh, indent=1)
        fh.write("\n")


def network_hash(net: NetworkSpec) -> str:
    """Deterministic content hash used to tie traces and trees to a network."""
    payload = json.dumps(network_to_dict(net), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
