"""Minimal differentiable MLP stack in float64 numpy.

Parameters of a network live in one flat vector. Layout, per layer in
order: the weight matrix W (shape out x in) flattened C-order, then the
bias vector b (shape out). Checkpoints serialize this layout as hex
floats, so round-trips are bit-exact.

forward() returns the output together with a GradientTape holding the
cached layer inputs and pre-activations; backward() consumes the tape
exactly once and returns d(output_grad . output)/d(params).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

ACTIVATIONS = ("identity", "tanh", "relu", "sigmoid", "softmax")


class ShapeMismatch(ValueError):
    pass


class TapeReuse(RuntimeError):
    pass


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if name == "softmax":
        return _softmax(z)
    raise ValueError(f"unknown activation {name!r}")


class Mlp:
    """Fully-connected network with one activation per layer."""

    def __init__(self, layer_sizes: Sequence[int], activations: Sequence[str],
                 params: Optional[np.ndarray] = None,
                 rng: Optional[np.random.Generator] = None):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if len(activations) != len(layer_sizes) - 1:
            raise ValueError("one activation per layer required")
        for i, act in enumerate(activations):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            if act == "softmax" and i != len(activations) - 1:
                raise ValueError("softmax permitted only as the final activation")
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        self.activations = tuple(activations)

        self._slices = []
        offset = 0
        for n_in, n_out in zip(self.layer_sizes, self.layer_sizes[1:]):
            w = slice(offset, offset + n_in * n_out)
            b = slice(offset + n_in * n_out, offset + n_in * n_out + n_out)
            self._slices.append((w, b, n_in, n_out))
            offset = b.stop
        self.n_params = offset

        if params is not None:
            params = np.asarray(params, dtype=np.float64)
            if params.shape != (self.n_params,):
                raise ShapeMismatch(f"expected {self.n_params} params, got {params.shape}")
            self.params = params.copy()
        else:
            if rng is None:
                rng = np.random.default_rng(0)
            self.params = self._init_params(rng)

    def _init_params(self, rng: np.random.Generator) -> np.ndarray:
        params = np.zeros(self.n_params, dtype=np.float64)
        for (w, _b, n_in, n_out), act in zip(self._slices, self.activations):
            if act == "relu":
                params[w] = rng.standard_normal(n_in * n_out) * np.sqrt(2.0 / n_in)
            else:
                limit = np.sqrt(6.0 / (n_in + n_out))
                params[w] = rng.uniform(-limit, limit, size=n_in * n_out)
        return params

    def weights(self, i: int) -> np.ndarray:
        w, _b, n_in, n_out = self._slices[i]
        return self.params[w].reshape(n_out, n_in)

    def biases(self, i: int) -> np.ndarray:
        return self.params[self._slices[i][1]]

    @property
    def n_layers(self) -> int:
        return len(self._slices)


@dataclass
class GradientTape:
    """Caches one forward pass; consumed exactly once by backward()."""

    inputs: list = field(default_factory=list)       # input to each layer
    preacts: list = field(default_factory=list)      # z = W x + b per layer
    output: Optional[np.ndarray] = None
    was_1d: bool = False
    layer_sizes: tuple = ()
    used: bool = False


def forward(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, GradientTape]:
    """Evaluate the network; accepts a single vector or a (batch, in) matrix."""
    x = np.asarray(x, dtype=np.float64)
    was_1d = x.ndim == 1
    if was_1d:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.layer_sizes[0]:
        raise ShapeMismatch(f"input shape {x.shape}, expected (*, {net.layer_sizes[0]})")

    tape = GradientTape(was_1d=was_1d, layer_sizes=net.layer_sizes)
    h = x
    for i, act in enumerate(net.activations):
        tape.inputs.append(h)
        z = h @ net.weights(i).T + net.biases(i)
        tape.preacts.append(z)
        h = _activate(act, z)
    tape.output = h
    return (h[0] if was_1d else h), tape


def backward(net: Mlp, tape: GradientTape, output_grad: np.ndarray,
             at_preactivation: bool = False) -> np.ndarray:
    """Parameter gradient of output_grad . output for the taped forward pass.

    With at_preactivation=True the incoming gradient is taken with respect
    to the final layer's pre-activation instead of its output (used by the
    policy heads, which differentiate log-probabilities through their own
    squash/softmax algebra).
    """
    if tape.used:
        raise TapeReuse("tape already consumed by a backward pass")
    if tape.layer_sizes != net.layer_sizes:
        raise ShapeMismatch("tape does not match this network")
    tape.used = True

    g = np.asarray(output_grad, dtype=np.float64)
    if tape.was_1d:
        g = g[None, :]
    if g.shape != tape.output.shape:
        raise ShapeMismatch(f"output_grad shape {g.shape}, expected {tape.output.shape}")

    grad = np.zeros(net.n_params, dtype=np.float64)
    for i in reversed(range(net.n_layers)):
        act = net.activations[i]
        post = tape.output if i == net.n_layers - 1 else tape.inputs[i + 1]
        if i == net.n_layers - 1 and at_preactivation:
            dz = g
        elif act == "identity":
            dz = g
        elif act == "tanh":
            dz = g * (1.0 - post * post)
        elif act == "relu":
            dz = g * (tape.preacts[i] > 0.0)
        elif act == "sigmoid":
            dz = g * post * (1.0 - post)
        else:  # softmax (final layer only)
            p = tape.output
            dz = p * (g - np.sum(g * p, axis=-1, keepdims=True))

        w_slice, b_slice, n_in, n_out = net._slices[i]
        grad[w_slice] = (dz.T @ tape.inputs[i]).reshape(-1)
        grad[b_slice] = dz.sum(axis=0)
        if i > 0:
            g = dz @ net.weights(i)
    return grad


@dataclass
class AdamState:
    """Adam accumulator; adam_step is pure and returns a fresh state."""

    step: int
    m: np.ndarray
    v: np.ndarray
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, n_params: int, lr: float) -> "AdamState":
        return cls(step=0, m=np.zeros(n_params), v=np.zeros(n_params), lr=lr)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Inputs are not mutated."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ShapeMismatch("params/grads/state shapes disagree")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, AdamState(step=t, m=m, v=v, lr=state.lr,
                                 beta1=state.beta1, beta2=state.beta2, eps=state.eps)


def clip_global_norm(grads: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.sqrt(np.sum(grads * grads)))
    if norm > max_norm > 0.0:
        return grads * (max_norm / norm)
    return grads


def net_to_dict(net: Mlp) -> dict:
    return {
        "layer_sizes": list(net.layer_sizes),
        "activations": list(net.activations),
        "params_hex": [v.hex() for v in net.params.tolist()],
    }


def net_from_dict(d: dict) -> Mlp:
    params = np.array([float.fromhex(h) for h in d["params_hex"]], dtype=np.float64)
    return Mlp(d["layer_sizes"], d["activations"], params=params)


def save_checkpoint(net: Mlp, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net_to_dict(net), fh)


def load_checkpoint(path: str) -> Mlp:
    with open(path, encoding="utf-8") as fh:
        return net_from_dict(json.load(fh))
