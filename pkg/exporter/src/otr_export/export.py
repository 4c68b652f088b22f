"""Extract MLP actor weights from torch checkpoints and write the network
interchange JSON plus a verification-sample file.

The exporter only serializes: it never reimplements any numerics. Verification
samples are produced by running the (reconstructed) source model in torch at
float64, so the downstream consumer can cross-check its own forward pass
against the source framework.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

TASKS = ("regression", "classification_binary", "classification_multi")
STATE_DICT_KEYS = ("state_dict", "model_state_dict", "policy", "actor", "model")


class UnsupportedLayerError(ValueError):
    """The checkpoint contains something other than a dense MLP actor."""


@dataclass
class ExportManifest:
    """Everything extracted from one checkpoint, ready to serialize."""

    checkpoint: str
    layer_names: list[str]
    weights: list[np.ndarray]  # float64 copies, one (out, in) matrix per layer
    biases: list[np.ndarray]
    hidden_activations: list  # "relu" or {"leaky_relu": slope}, one per hidden layer
    task: str = "regression"
    leaf_activation: str = "identity"

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[1])

    def validate_shapes(self) -> "ExportManifest":
        if not self.weights:
            raise UnsupportedLayerError("checkpoint holds no dense layers")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if len(self.hidden_activations) != len(self.weights) - 1:
            raise ValueError(
                f"{len(self.weights) - 1} hidden layers but "
                f"{len(self.hidden_activations)} activation annotations"
            )
        width = self.input_dim
        for name, w, b in zip(self.layer_names, self.weights, self.biases):
            if w.ndim != 2:
                raise UnsupportedLayerError(f"{name}: weight tensor is not 2-D")
            if w.shape[1] != width:
                raise UnsupportedLayerError(
                    f"{name}: expects {w.shape[1]} inputs, previous layer emits {width}"
                )
            if b.shape != (w.shape[0],):
                raise UnsupportedLayerError(f"{name}: bias shape {b.shape} mismatch")
            width = w.shape[0]
        return self


def _as_float64(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().to(torch.float64).numpy()


def _activation_annotation(module: nn.Module):
    if isinstance(module, nn.ReLU):
        return "relu"
    if isinstance(module, nn.LeakyReLU):
        return {"leaky_relu": float(module.negative_slope)}
    raise UnsupportedLayerError(f"unsupported activation module: {type(module).__name__}")


def manifest_from_module(module: nn.Module, checkpoint: str, task: str = "regression",
                         leaf_activation: str | None = None) -> ExportManifest:
    """Walk a torch module and extract its Linear stack and activations.

    A trailing Tanh marks the squish applied to the actor's output; any
    convolutional/recurrent/normalization module aborts the export.
    """
    names: list[str] = []
    weights: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    acts: list = []
    trailing_tanh = False

    for name, child in _flatten(module):
        if isinstance(child, nn.Linear):
            if trailing_tanh:
                raise UnsupportedLayerError("tanh must be the final module of the actor")
            names.append(name)
            weights.append(_as_float64(child.weight))
            if child.bias is None:
                biases.append(np.zeros(child.out_features))
            else:
                biases.append(_as_float64(child.bias))
        elif isinstance(child, (nn.ReLU, nn.LeakyReLU)):
            if len(acts) != len(weights) - 1:
                raise UnsupportedLayerError(f"{name}: activation without a preceding layer")
            acts.append(_activation_annotation(child))
        elif isinstance(child, nn.Tanh):
            trailing_tanh = True
        elif isinstance(child, (nn.Identity, nn.Flatten)):
            continue
        else:
            raise UnsupportedLayerError(f"unsupported layer {name}: {type(child).__name__}")

    if len(acts) == len(weights):
        # activation after the last Linear belongs to a hidden layer only if
        # another Linear follows; here it does not, so reject the ambiguity
        raise UnsupportedLayerError("trailing hidden activation without an output layer")
    manifest = ExportManifest(
        checkpoint=checkpoint,
        layer_names=names,
        weights=weights,
        biases=biases,
        hidden_activations=acts,
        task=task,
        leaf_activation=leaf_activation or ("tanh" if trailing_tanh else "identity"),
    )
    return manifest.validate_shapes()


def _flatten(module: nn.Module):
    leaves = []

    def walk(mod: nn.Module, prefix: str):
        children = list(mod.named_children())
        if not children:
            leaves.append((prefix or type(mod).__name__, mod))
            return
        for name, child in children:
            walk(child, f"{prefix}.{name}" if prefix else name)

    walk(module, "")
    return leaves


def manifest_from_state_dict(state: dict, checkpoint: str, activations,
                             task: str = "regression",
                             leaf_activation: str = "identity") -> ExportManifest:
    """Pair ``<prefix>.weight`` / ``<prefix>.bias`` tensors in file order.

    Activation annotations cannot be recovered from a bare state dict, so the
    caller supplies them (a single annotation is broadcast to every hidden
    layer).
    """
    names: list[str] = []
    weights: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    for key, value in state.items():
        if not key.endswith(".weight"):
            continue
        if not isinstance(value, torch.Tensor):
            raise UnsupportedLayerError(f"{key}: not a tensor")
        if value.ndim != 2:
            raise UnsupportedLayerError(
                f"{key}: {value.ndim}-D weight tensor (only dense MLP layers supported)"
            )
        prefix = key[: -len(".weight")]
        names.append(prefix)
        weights.append(_as_float64(value))
        bias = state.get(prefix + ".bias")
        biases.append(
            _as_float64(bias) if isinstance(bias, torch.Tensor)
            else np.zeros(value.shape[0])
        )
    n_hidden_layers = max(len(weights) - 1, 0)
    if not isinstance(activations, (list, tuple)):
        activations = [activations] * n_hidden_layers
    manifest = ExportManifest(
        checkpoint=checkpoint,
        layer_names=names,
        weights=weights,
        biases=biases,
        hidden_activations=list(activations),
        task=task,
        leaf_activation=leaf_activation,
    )
    return manifest.validate_shapes()


def load_checkpoint(path: str | Path, activations="relu", task: str = "regression",
                    leaf_activation: str | None = None) -> ExportManifest:
    """Read a torch checkpoint (full module or state dict) into a manifest."""
    obj = torch.load(path, map_location="cpu", weights_only=False)
    if isinstance(obj, nn.Module):
        return manifest_from_module(obj, str(path), task=task,
                                    leaf_activation=leaf_activation)
    if isinstance(obj, dict):
        state = obj
        for key in STATE_DICT_KEYS:
            if key in obj and isinstance(obj[key], dict):
                state = obj[key]
                break
        return manifest_from_state_dict(
            state, str(path), activations, task=task,
            leaf_activation=leaf_activation or "identity",
        )
    raise UnsupportedLayerError(f"cannot extract an MLP from {type(obj).__name__}")


# ---------------------------------------------------------------------------
# Serialization


def _output_activation(manifest: ExportManifest):
    return {
        "regression": "linear",
        "classification_binary": "logistic",
        "classification_multi": "softmax",
    }[manifest.task]


def interchange_dict(manifest: ExportManifest) -> dict:
    layers = []
    for i, (w, b) in enumerate(zip(manifest.weights, manifest.biases)):
        is_output = i == len(manifest.weights) - 1
        layers.append({
            "weights": w.tolist(),
            "biases": b.tolist(),
            "activation": _output_activation(manifest) if is_output
            else manifest.hidden_activations[i],
        })
    return {
        "input_dim": manifest.input_dim,
        "task": manifest.task,
        "dense": False,
        "leaf_activation": manifest.leaf_activation,
        "layers": layers,
    }


def rebuild_torch_model(manifest: ExportManifest) -> nn.Module:
    """Reassemble the actor in torch (float64) for sample generation."""
    mods: list[nn.Module] = []
    for i, (w, b) in enumerate(zip(manifest.weights, manifest.biases)):
        linear = nn.Linear(w.shape[1], w.shape[0], dtype=torch.float64)
        with torch.no_grad():
            linear.weight.copy_(torch.from_numpy(w))
            linear.bias.copy_(torch.from_numpy(b))
        mods.append(linear)
        if i < len(manifest.weights) - 1:
            ann = manifest.hidden_activations[i]
            if ann == "relu":
                mods.append(nn.ReLU())
            else:
                mods.append(nn.LeakyReLU(float(ann["leaky_relu"])))
    out = _output_activation(manifest)
    if out == "logistic":
        mods.append(nn.Sigmoid())
    elif out == "softmax":
        mods.append(nn.Softmax(dim=-1))
    elif manifest.leaf_activation == "tanh":
        mods.append(nn.Tanh())
    return nn.Sequential(*mods)


def sample_records(manifest: ExportManifest, n_samples: int = 100, seed: int = 0,
                   low: float = -1.0, high: float = 1.0) -> list[dict]:
    """Run the source model on seeded uniform inputs; returns x/y records."""
    model = rebuild_torch_model(manifest)
    rng = np.random.Generator(np.random.Philox(key=seed))
    xs = rng.uniform(low, high, size=(n_samples, manifest.input_dim))
    with torch.no_grad():
        ys = model(torch.from_numpy(xs)).numpy()
    return [{"x": x.tolist(), "y": y.tolist()} for x, y in zip(xs, ys)]


def export(checkpoint: str | Path, out: str | Path, activations="relu",
           task: str = "regression", leaf_activation: str | None = None,
           n_samples: int = 100, seed: int = 0,
           samples_out: str | Path | None = None) -> ExportManifest:
    """Full export: checkpoint -> interchange JSON + verification samples."""
    manifest = load_checkpoint(checkpoint, activations, task, leaf_activation)
    out = Path(out)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(interchange_dict(manifest), fh, indent=1)
        fh.write("\n")
    if samples_out is None:
        samples_out = out.with_name(out.name.removesuffix(".json") + ".samples.json")
    records = sample_records(manifest, n_samples=n_samples, seed=seed)
    with open(samples_out, "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=1)
        fh.write("\n")
    return manifest
