"""A small dense ReLU classifier whose hidden units are the game's players."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = ["NeuronNetwork", "init_network", "train", "TrainingDivergedError", "FORMAT_VERSION"]

FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class NeuronNetwork:
    """Dense feedforward network ``input -> h_1 -> ... -> h_L -> classes``.

    Hidden layers use a rectifier and the output a softmax. Player ``p`` is
    hidden unit ``player_map[p] = (layer, unit)``, numbered layer by layer.
    """

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 3:
            raise ValueError("need at least one hidden layer")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("weights/biases do not match layer_sizes")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_sizes[l], self.layer_sizes[l + 1]) or b.shape != (self.layer_sizes[l + 1],):
                raise ValueError(f"layer {l} has shapes {w.shape}, {b.shape}")

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return self.layer_sizes[1:-1]

    @property
    def n_players(self) -> int:
        return sum(self.hidden_sizes)

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def player_map(self) -> list[tuple[int, int]]:
        return [(l, u) for l, h in enumerate(self.hidden_sizes) for u in range(h)]

    @property
    def offsets(self) -> list[int]:
        """Index of the first player in each hidden layer."""
        return list(np.cumsum((0,) + self.hidden_sizes[:-1]))

    def player_labels(self) -> list[str]:
        return [f"L{l}.u{u}" for l, u in self.player_map]

    def hidden_activations(self, x: np.ndarray) -> list[np.ndarray]:
        """Post-ReLU activations of every hidden layer on an unmasked pass."""
        acts = []
        h = np.asarray(x, dtype=float)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            acts.append(h)
        return acts

    def logits(self, x: np.ndarray) -> np.ndarray:
        h = self.hidden_activations(x)[-1]
        return h @ self.weights[-1] + self.biases[-1]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x))

    def copy(self) -> "NeuronNetwork":
        return NeuronNetwork(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            dict(self.provenance),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": "neuronshap.network",
            "version": FORMAT_VERSION,
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.ravel(order="C").tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "NeuronNetwork":
        if doc.get("format") != "neuronshap.network":
            raise ValueError("not a network document")
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"network format version {doc.get('version')} != {FORMAT_VERSION}")
        sizes = [int(s) for s in doc["layer_sizes"]]
        weights = [
            np.array(w, dtype=float).reshape(sizes[l], sizes[l + 1]) for l, w in enumerate(doc["weights"])
        ]
        biases = [np.array(b, dtype=float) for b in doc["biases"]]
        return cls(tuple(sizes), weights, biases, dict(doc.get("provenance", {})))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "NeuronNetwork":
        return cls.from_dict(json.loads(text))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def init_network(layer_sizes: tuple[int, ...], seed: int) -> NeuronNetwork:
    """He-initialized weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NeuronNetwork(tuple(layer_sizes), weights, biases, {"seed": seed})


def _backward(net: NeuronNetwork, x: np.ndarray, y: np.ndarray):
    acts = [x]
    h = x
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    probs = softmax(h @ net.weights[-1] + net.biases[-1])
    m = len(x)
    loss = -np.mean(np.log(probs[np.arange(m), y] + 1e-300))
    delta = probs
    delta[np.arange(m), y] -= 1.0
    delta /= m
    grads_w, grads_b = [], []
    for l in range(len(net.weights) - 1, -1, -1):
        grads_w.append(acts[l].T @ delta)
        grads_b.append(delta.sum(axis=0))
        if l > 0:
            delta = (delta @ net.weights[l].T) * (acts[l] > 0)
    return loss, grads_w[::-1], grads_b[::-1]


def train(
    x: np.ndarray,
    y: np.ndarray,
    layer_sizes: tuple[int, ...],
    seed: int,
    epochs: int = 60,
    learning_rate: float = 0.05,
    batch_size: int = 32,
    momentum: float = 0.9,
    standardize: bool = True,
    l1: float = 0.0,
) -> NeuronNetwork:
    """Minibatch SGD with momentum on softmax cross-entropy.

    With ``standardize`` the network is trained on z-scored inputs and the
    scaling is folded into the first layer afterwards, so the returned
    network takes raw features. ``l1`` adds an L1 penalty on the first
    layer's weights, which makes units read few inputs. Fully determined by
    the arguments;
    ``epochs=0`` returns the seeded initialization unchanged.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("training set is empty")
    if layer_sizes[0] != x.shape[1]:
        raise ValueError(f"input width {x.shape[1]} != layer_sizes[0]={layer_sizes[0]}")
    net = init_network(tuple(layer_sizes), seed)
    if epochs == 0:
        return net
    if standardize:
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        x = (x - mu) / sd
    rng = np.random.default_rng([seed, 1])
    vel_w = [np.zeros_like(w) for w in net.weights]
    vel_b = [np.zeros_like(b) for b in net.biases]
    for epoch in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            idx = order[start : start + batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, gw, gb = _backward(net, x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became {loss} in epoch {epoch}; try a smaller learning rate than {learning_rate}"
                )
            if l1:
                gw[0] = gw[0] + l1 * np.sign(net.weights[0])
            for l in range(len(net.weights)):
                vel_w[l] = momentum * vel_w[l] - learning_rate * gw[l]
                vel_b[l] = momentum * vel_b[l] - learning_rate * gb[l]
                net.weights[l] += vel_w[l]
                net.biases[l] += vel_b[l]
    if standardize:
        net.biases[0] = net.biases[0] - (mu / sd) @ net.weights[0]
        net.weights[0] = net.weights[0] / sd[:, None]
    if not all(np.all(np.isfinite(w)) for w in net.weights):
        raise TrainingDivergedError(f"weights became non-finite; try a smaller learning rate than {learning_rate}")
    net.provenance = {
        "seed": seed,
        "epochs": epochs,
        "learning_rate": learning_rate,
        "batch_size": batch_size,
        "momentum": momentum,
        "standardize": standardize,
        "l1": l1,
    }
    return net
