"""Dense tanh networks with hand-written reverse mode and Adam.

Matrices are plain 2-D float64 numpy arrays in row-major order. A weight
matrix has shape ``(out, in)`` and a layer computes ``x @ W.T + b``; every
layer but the last applies tanh.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError, TrainingError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def as_matrix(x, cols=None, name="x"):
    """Return ``x`` as a contiguous float64 matrix, checking the column count."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {x.shape}")
    if cols is not None and x.shape[1] != cols:
        raise ShapeError(f"{name} has {x.shape[1]} columns, expected {cols}")
    return x


@dataclass
class MlpParams:
    """Weights ``(out, in)`` and biases ``(out,)`` for each layer, input first."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("MlpParams needs the same, nonzero number of weights and biases")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {k}: weight {w.shape} and bias {b.shape} disagree")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(
                    f"layer {k} takes {w.shape[1]} inputs but layer {k - 1} emits "
                    f"{self.weights[k - 1].shape[0]}"
                )

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in layer order, weight before bias."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, arrays: Sequence[np.ndarray]) -> "MlpParams":
        return cls(list(arrays[0::2]), list(arrays[1::2]))

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "MlpParams":
        """New params of the same shapes filled from a flat vector."""
        arrays, pos = [], 0
        for a in self.arrays():
            arrays.append(np.array(vec[pos:pos + a.size], dtype=np.float64).reshape(a.shape))
            pos += a.size
        if pos != len(vec):
            raise ShapeError(f"flat vector has {len(vec)} entries, expected {pos}")
        return MlpParams.from_arrays(arrays)

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def init_params(sizes: Sequence[int], seed) -> MlpParams:
    """Glorot-uniform weights and zero biases for the given layer sizes.

    ``sizes`` lists the input width followed by every layer's output width,
    so ``[2, 3]`` is a single affine layer from 2 to 3.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise ConfigError(f"need an input size and at least one layer, got {sizes}")
    if min(sizes) < 1:
        raise ConfigError(f"layer sizes must be >= 1, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def forward_cached(p: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass that also returns the layer inputs needed by backprop.

    ``acts[k]`` is the input to layer ``k``; ``acts[0]`` is ``x`` itself and
    the later ones are tanh outputs.
    """
    x = as_matrix(x, p.n_in)
    acts = [x]
    h = x
    last = len(p.weights) - 1
    for k, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = h @ w.T
        z += b
        if k < last:
            h = np.tanh(z, out=z)
            acts.append(h)
        else:
            h = z
    return h, acts


def mlp_forward(p: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a batch of rows ``x`` of shape (batch, in)."""
    return forward_cached(p, x)[0]


def backward_cached(p: MlpParams, acts: list[np.ndarray], upstream: np.ndarray,
                    need_input_grad: bool = True) -> tuple[MlpParams, np.ndarray | None]:
    """Reverse pass from cached activations; see :func:`mlp_backward`."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (acts[0].shape[0], p.n_out):
        raise ShapeError(
            f"upstream has shape {upstream.shape}, expected {(acts[0].shape[0], p.n_out)}"
        )
    n_layers = len(p.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    delta = upstream
    input_grad = None
    for k in range(n_layers - 1, -1, -1):
        a = acts[k]
        gw[k] = delta.T @ a
        gb[k] = delta.sum(axis=0)
        if k > 0 or need_input_grad:
            delta = delta @ p.weights[k]
            if k > 0:
                delta *= 1.0 - a * a
            else:
                input_grad = delta
    return MlpParams(gw, gb), input_grad


def mlp_backward(p: MlpParams, x: np.ndarray, upstream: np.ndarray) -> tuple[MlpParams, np.ndarray]:
    """Gradients of ``sum(upstream * mlp_forward(p, x))``.

    Returns parameter gradients shaped like ``p`` and the gradient with
    respect to ``x``.
    """
    _, acts = forward_cached(p, x)
    grads, input_grad = backward_cached(p, acts, upstream)
    return grads, input_grad


def add_params(a: MlpParams, b: MlpParams) -> MlpParams:
    return MlpParams([x + y for x, y in zip(a.weights, b.weights)],
                     [x + y for x, y in zip(a.biases, b.biases)])


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, p: MlpParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in p.arrays()],
                   [np.zeros_like(a) for a in p.arrays()], 0)


def adam_step(p: MlpParams, g: MlpParams, st: AdamState, lr: float) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    params, grads = p.arrays(), g.arrays()
    if len(params) != len(grads) or len(params) != len(st.m):
        raise ShapeError("parameters, gradients and optimizer state have different layouts")
    for a, ga in zip(params, grads):
        if a.shape != ga.shape:
            raise ShapeError(f"gradient shape {ga.shape} does not match parameter {a.shape}")
        if not np.isfinite(ga).all():
            raise TrainingError("non-finite gradient passed to adam_step")
    step = st.step + 1
    c1 = 1.0 - ADAM_BETA1 ** step
    c2 = 1.0 - ADAM_BETA2 ** step
    new_p, new_m, new_v = [], [], []
    for a, ga, m, v in zip(params, grads, st.m, st.v):
        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * ga
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * (ga * ga)
        new_p.append(a - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS))
        new_m.append(m)
        new_v.append(v)
    return MlpParams.from_arrays(new_p), AdamState(new_m, new_v, step)


@dataclass(frozen=True)
class LrSchedule:
    """Staircase exponential decay: ``initial * decay_rate ** (i // decay_every)``."""

    initial: float = 1e-3
    decay_rate: float = 0.99
    decay_every: int = 100

    def __post_init__(self):
        if not self.initial > 0 or not 0 < self.decay_rate <= 1 or self.decay_every < 1:
            raise ConfigError(f"invalid learning-rate schedule {self}")


def lr_at(s: LrSchedule, iteration: int) -> float:
    if iteration < 0:
        raise ConfigError(f"iteration must be >= 0, got {iteration}")
    return s.initial * s.decay_rate ** (iteration // s.decay_every)
