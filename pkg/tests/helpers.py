"""Shared builders for randomized test networks."""

import numpy as np

from otr.netio import Activation, LayerSpec, NetworkSpec, TaskKind


def make_net(weights_biases, task=TaskKind.REGRESSION, hidden=Activation("relu"),
             dense=False, leaf_activation="identity", input_dim=None):
    """Build a validated network from [(W, B), ...] pairs; last pair is the output."""
    out_act = {
        TaskKind.REGRESSION: Activation("linear"),
        TaskKind.BINARY: Activation("logistic"),
        TaskKind.MULTI: Activation("softmax"),
    }[task]
    layers = []
    for i, (w, b) in enumerate(weights_biases):
        act = out_act if i == len(weights_biases) - 1 else hidden
        layers.append(LayerSpec(np.asarray(w, float), np.asarray(b, float), act))
    if input_dim is None:
        input_dim = layers[0].in_width
    return NetworkSpec(
        layers=tuple(layers), input_dim=input_dim, task=task,
        dense=dense, leaf_activation=leaf_activation,
    ).validate()


def random_net(rng, input_dim=None, hidden_widths=None, task=TaskKind.REGRESSION,
               hidden=None, dense=False, leaf_activation="identity", n_outputs=None):
    """Random small network; weights ~ N(0, 1/sqrt(fan_in)), biases ~ N(0, 0.5)."""
    if input_dim is None:
        input_dim = int(rng.integers(1, 4))
    if hidden_widths is None:
        hidden_widths = [int(rng.integers(1, 5)) for _ in range(int(rng.integers(1, 4)))]
    if hidden is None:
        hidden = Activation("relu")
    if n_outputs is None:
        n_outputs = {
            TaskKind.REGRESSION: int(rng.integers(1, 3)),
            TaskKind.BINARY: 1,
            TaskKind.MULTI: int(rng.integers(3, 5)),
        }[task]

    pairs = []
    in_width = input_dim
    for width in hidden_widths:
        w = rng.normal(0.0, 1.0 / np.sqrt(in_width), size=(width, in_width))
        b = rng.normal(0.0, 0.5, size=width)
        pairs.append((w, b))
        in_width = in_width + width if dense else width
    w = rng.normal(0.0, 1.0 / np.sqrt(in_width), size=(n_outputs, in_width))
    b = rng.normal(0.0, 0.5, size=n_outputs)
    pairs.append((w, b))
    return make_net(pairs, task=task, hidden=hidden, dense=dense,
                    leaf_activation=leaf_activation, input_dim=input_dim)


def seeded_rng(*key):
    return np.random.Generator(np.random.Philox(key=list(key)))
