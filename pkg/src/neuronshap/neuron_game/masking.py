"""Mean-activation masking of hidden units."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..game_core import Coalition
from .network import NeuronNetwork, softmax

__all__ = ["MeanMask", "MaskMismatchError", "compute_masks", "masked_input_gradient", "absent_mask", "masked_hidden", "masked_logits", "masked_forward"]


class MaskMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class MeanMask:
    """Per-player mean post-ReLU activation over a reference set."""

    means: np.ndarray

    @property
    def n_players(self) -> int:
        return len(self.means)

    def to_list(self) -> list[float]:
        return self.means.tolist()


def compute_masks(net: NeuronNetwork, reference: np.ndarray) -> MeanMask:
    reference = np.asarray(reference, dtype=float)
    if reference.ndim != 2 or len(reference) == 0:
        raise ValueError("reference set must be a non-empty 2-D array")
    acts = net.hidden_activations(reference)
    means = np.concatenate([a.mean(axis=0) for a in acts])
    means.setflags(write=False)
    return MeanMask(means)


def absent_mask(absent, n: int) -> np.ndarray:
    """Normalize ``absent`` (Coalition, bool vector or index iterable) to a bool vector."""
    if absent is None:
        return np.zeros(n, dtype=bool)
    if isinstance(absent, Coalition):
        if absent.n != n:
            raise MaskMismatchError(f"coalition over {absent.n} players, network has {n}")
        return absent.mask()
    arr = np.asarray(absent)
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise MaskMismatchError(f"absent mask has shape {arr.shape}, network has {n} players")
        return arr
    out = np.zeros(n, dtype=bool)
    idx = np.asarray(list(absent) if not isinstance(absent, np.ndarray) else absent, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise MaskMismatchError(f"absent players outside 0..{n - 1}")
    out[idx] = True
    return out


def _check(net: NeuronNetwork, masks: MeanMask) -> None:
    if masks.n_players != net.n_players:
        raise MaskMismatchError(f"mask covers {masks.n_players} players, network has {net.n_players}")


def masked_hidden(
    net: NeuronNetwork, masks: MeanMask, absent: np.ndarray, x: np.ndarray, first_pre: np.ndarray | None = None
) -> list[np.ndarray]:
    """Hidden activations with absent units pinned to their means.

    ``first_pre`` optionally supplies the precomputed first-layer
    pre-activation ``x @ W0 + b0``.
    """
    acts = []
    h = None if x is None else np.asarray(x, dtype=float)
    for l, off in enumerate(net.offsets):
        size = net.hidden_sizes[l]
        pre = first_pre if (l == 0 and first_pre is not None) else h @ net.weights[l] + net.biases[l]
        h = np.maximum(pre, 0.0)
        gone = absent[off : off + size]
        if gone.any():
            h[:, gone] = masks.means[off : off + size][gone]
        acts.append(h)
    return acts


def masked_logits(net: NeuronNetwork, masks: MeanMask, absent, x: np.ndarray) -> np.ndarray:
    _check(net, masks)
    gone = absent_mask(absent, net.n_players)
    h = masked_hidden(net, masks, gone, x)[-1]
    return h @ net.weights[-1] + net.biases[-1]


def masked_forward(net: NeuronNetwork, masks: MeanMask, absent, x: np.ndarray) -> np.ndarray:
    """Class probabilities with every absent player's output fixed to its mean."""
    return softmax(masked_logits(net, masks, absent, x))


def masked_input_gradient(
    net: NeuronNetwork, masks: MeanMask, absent, x: np.ndarray, targets: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the summed cross-entropy toward ``targets`` w.r.t. the inputs.

    Returns ``(grad, probs)``. Masked units are constants, so no gradient
    flows through them.
    """
    _check(net, masks)
    gone = absent_mask(absent, net.n_players)
    x = np.asarray(x, dtype=float)
    acts = masked_hidden(net, masks, gone, x)
    probs = softmax(acts[-1] @ net.weights[-1] + net.biases[-1])
    delta = probs.copy()
    delta[np.arange(len(x)), targets] -= 1.0
    offsets = net.offsets
    for l in range(len(net.weights) - 1, 0, -1):
        delta = delta @ net.weights[l].T
        live = acts[l - 1] > 0
        off, size = offsets[l - 1], net.hidden_sizes[l - 1]
        live[:, gone[off : off + size]] = False
        delta = delta * live
    return delta @ net.weights[0].T, probs
