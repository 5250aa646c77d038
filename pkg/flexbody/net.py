"""
.. _net:

A Small Dense Network Engine
============================

Everything the tool-use network needs, and nothing more: stacks of dense
layers with ``tanh`` hidden activations and a linear output, exact
backpropagation, and two optimizers (Adam for offline training, heavy-ball
momentum for the online estimation of the tool state).

>>> import numpy as np
>>> from flexbody import net
>>> stack = net.init_stack([17, 200, 50, 8, 50, 200, 11], rng=0)
>>> out, trace = net.forward(stack, np.zeros((5, 17)))
>>> out.shape
(5, 11)
>>> grads = net.backward(stack, trace, np.ones_like(out))
>>> state = net.AdamState.for_params(net.parameters(stack))
>>> net.adam_step(stack, grads.params, state, lr=1e-3)

Inputs can be a single vector or a batch (one sample per row). ``forward`` and
``backward`` can also run a slice of the layers (``start``/``stop``), which is
how the encoder and decoder halves of an autoencoder are evaluated separately.

All arithmetic is 64-bit floating point.
"""

__all__ = [
    "AdamState",
    "ForwardTrace",
    "Gradients",
    "LayerStack",
    "MomentumState",
    "adam_step",
    "backward",
    "forward",
    "init_stack",
    "load_stack",
    "momentum_step",
    "parameters",
    "save_stack",
    "stack_arrays",
    "stack_from_arrays",
]

from dataclasses import dataclass

import numpy as np


@dataclass
class LayerStack:
    """Weights ``W[i]`` of shape (dims[i], dims[i+1]) and biases ``b[i]``."""

    dims: list
    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.dims) - 1 or len(self.biases) != len(
            self.weights
        ):
            raise ValueError("need one weight matrix and bias per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.dims[i], self.dims[i + 1]) or b.shape != (
                self.dims[i + 1],
            ):
                raise ValueError(
                    f"layer {i}: expected {(self.dims[i], self.dims[i + 1])}, "
                    f"got {w.shape} and {b.shape}"
                )

    @property
    def n_layers(self):
        return len(self.weights)

    def copy(self):
        return LayerStack(
            list(self.dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


@dataclass
class ForwardTrace:
    start: int
    stop: int
    activations: list
    pre_activations: list
    squeeze: bool = False


@dataclass
class Gradients:
    """Weight and bias gradients for every layer, plus the gradient w.r.t. the input."""

    weights: list
    biases: list
    input: np.ndarray

    @property
    def params(self):
        """Gradients ordered like :func:`parameters`."""
        return [g for pair in zip(self.weights, self.biases) for g in pair]


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kwargs):
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **kwargs,
        )


@dataclass
class MomentumState:
    velocity: np.ndarray = None
    momentum: float = 0.9
    step: int = 0


def init_stack(dims, rng=None):
    """Random stack, weights uniform in +/- sqrt(6 / (fan_in + fan_out)), zero biases.

    Parameters
    ----------
    dims : list of int
      Layer widths, input first.
    rng : int or numpy.random.Generator, optional
      Seed or generator.

    Returns
    -------
    stack : LayerStack
    """
    rng = np.random.default_rng(rng)
    dims = [int(d) for d in dims]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return LayerStack(dims, weights, biases)


def parameters(stack):
    """The stack's arrays as ``[W0, b0, W1, b1, ...]``; updating them in place updates the stack."""
    return [p for pair in zip(stack.weights, stack.biases) for p in pair]


def forward(stack, inputs, start=0, stop=None):
    """Run layers ``start`` to ``stop`` (exclusive) on `inputs`.

    Hidden layers use ``tanh``; the last layer of the full stack is linear.

    Parameters
    ----------
    stack : LayerStack
      The network.
    inputs : numpy.ndarray
      A vector of length ``dims[start]`` or a batch of shape (n, dims[start]).
    start, stop : int
      Layer slice to evaluate.

    Returns
    -------
    output : numpy.ndarray
      Same leading shape as `inputs`.
    trace : ForwardTrace
      Cached values for :func:`backward`.
    """
    stop = stack.n_layers if stop is None else stop
    x = np.asarray(inputs, dtype=float)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != stack.dims[start]:
        raise ValueError(
            f"input has {x.shape[1]} features, layer {start} expects {stack.dims[start]}"
        )
    activations, pre_activations = [x], []
    for i in range(start, stop):
        h = x @ stack.weights[i] + stack.biases[i]
        x = h if i == stack.n_layers - 1 else np.tanh(h)
        pre_activations.append(h)
        activations.append(x)
    trace = ForwardTrace(start, stop, activations, pre_activations, squeeze)
    return (x[0] if squeeze else x), trace


def backward(stack, trace, output_grad):
    """Backpropagate `output_grad` through the layers recorded in `trace`.

    Returns
    -------
    grads : Gradients
      Gradients for every layer of the stack (zeros outside the traced slice)
      and the gradient with respect to the traced input.
    """
    g = np.atleast_2d(np.asarray(output_grad, dtype=float))
    last = trace.activations[-1]
    if g.shape != last.shape or len(trace.activations) != trace.stop - trace.start + 1:
        raise ValueError(
            f"stale trace: output gradient {g.shape} does not match traced output "
            f"{last.shape}"
        )
    for i in range(trace.start, trace.stop):
        if trace.activations[i - trace.start].shape[1] != stack.dims[i]:
            raise ValueError("stale trace: stack dims changed since the forward pass")
    weight_grads = [np.zeros_like(w) for w in stack.weights]
    bias_grads = [np.zeros_like(b) for b in stack.biases]
    for i in range(trace.stop - 1, trace.start - 1, -1):
        out = trace.activations[i - trace.start + 1]
        if i != stack.n_layers - 1:
            g = g * (1.0 - out**2)
        weight_grads[i] = trace.activations[i - trace.start].T @ g
        bias_grads[i] = g.sum(axis=0)
        g = g @ stack.weights[i].T
    input_grad = g[0] if trace.squeeze else g
    return Gradients(weight_grads, bias_grads, input_grad)


def adam_step(params, grads, state, lr):
    """One Adam update, in place.

    Parameters
    ----------
    params : LayerStack or list of numpy.ndarray
      What to update; a stack is expanded with :func:`parameters`.
    grads : list of numpy.ndarray
      Gradients in the same order.
    state : AdamState
      Moment estimates, updated in place.
    lr : float
      Learning rate.

    Returns
    -------
    params, state
    """
    arrays = parameters(params) if isinstance(params, LayerStack) else params
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ValueError("params, grads and optimizer state must have equal length")
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g**2
        p -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return params, state


def momentum_step(params, grad, state, lr):
    """Heavy-ball update ``v = momentum * v - lr * grad; params = params + v``.

    Returns a new parameter vector and the updated state.
    """
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if state.velocity is None:
        state.velocity = np.zeros_like(params)
    if state.velocity.shape != params.shape or grad.shape != params.shape:
        raise ValueError("params, grad and velocity shapes differ")
    state.velocity = state.momentum * state.velocity - lr * grad
    state.step += 1
    return params + state.velocity, state


def stack_arrays(stack):
    """Checkpoint layout: a ``dims`` header and ``W{i}``/``b{i}`` arrays."""
    arrays = {"dims": np.asarray(stack.dims, dtype=np.int64)}
    for i, (w, b) in enumerate(zip(stack.weights, stack.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    return arrays


def stack_from_arrays(data):
    """Inverse of :func:`stack_arrays`; `data` may be an open ``.npz`` file."""
    dims = [int(d) for d in data["dims"]]
    weights = [np.array(data[f"W{i}"]) for i in range(len(dims) - 1)]
    biases = [np.array(data[f"b{i}"]) for i in range(len(dims) - 1)]
    return LayerStack(dims, weights, biases)


def save_stack(stack, path):
    np.savez(path, **stack_arrays(stack))


def load_stack(path):
    with np.load(path) as data:
        return stack_from_arrays(data)
