"""Unbiased tanh MLP with hand-written reverse mode and Adam.

Every layer computes ``h <- tanh(W h)`` with no bias, the output layer
included, so ``forward(p, 0) == 0`` exactly and outputs lie in (-1, 1).
Inputs may be a single vector ``(d,)`` or a batch ``(B, d)`` of row vectors.

Gradients are collected on a :class:`GradTape`: the forward passes are
recorded with their activations and the loss builder attaches the routine
that walks them backwards. :func:`backward` runs it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, NonFiniteError, OrbitFeedbackError, ParseError
from .linalg import format_matrix, parse_matrix

POLICY_DIMS = (180, 512, 512, 512, 180)


@dataclass
class MlpParams:
    weights: list[np.ndarray]

    def __post_init__(self):
        if not self.weights:
            raise DimensionError("an MLP needs at least one layer")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in self.weights]
        for k, w in enumerate(self.weights):
            if w.ndim != 2:
                raise DimensionError(f"layer {k} weight is not a matrix")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise DimensionError(f"layer {k} expects {w.shape[1]} inputs, previous layer gives {self.weights[k - 1].shape[0]}")
            if not np.all(np.isfinite(w)):
                raise NonFiniteError(f"layer {k} weight has non-finite entries")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights])

    def zeros_like(self) -> list[np.ndarray]:
        return [np.zeros_like(w) for w in self.weights]


def mlp_init(layer_dims: Sequence[int], seed: int) -> MlpParams:
    """Uniform fan-in initialization, ``W_k ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise DimensionError(f"need at least two positive layer sizes, got {layer_dims}")
    rng = np.random.default_rng([seed, 404])
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
    return MlpParams(weights)


def _check_input(p: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != p.layer_dims[0]:
        raise DimensionError(f"input shape {x.shape} does not match input size {p.layer_dims[0]}")
    return x


def trace(p: MlpParams, x) -> list[np.ndarray]:
    """Forward pass keeping every activation ``[h_0, ..., h_L]`` (``h_0 = x``)."""
    x = _check_input(p, x)
    acts = [x]
    for w in p.weights:
        acts.append(np.tanh(acts[-1] @ w.T))
    return acts


def forward(p: MlpParams, x) -> np.ndarray:
    x = _check_input(p, x)
    h = x
    for w in p.weights:
        h = np.tanh(h @ w.T)
    return h


def vjp(p: MlpParams, acts: list[np.ndarray], g_out: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Pull ``g_out`` (gradient at the output) back through one recorded pass.

    Returns the input gradient and the per-layer pre-activation gradients
    ``dz_k``; the weight gradient of layer ``k`` is ``dz_k^T h_k``.
    """
    g = g_out
    dzs = [None] * len(p.weights)
    for k in range(len(p.weights) - 1, -1, -1):
        h = acts[k + 1]
        dz = g * (1.0 - h * h)
        dzs[k] = dz
        g = dz @ p.weights[k]
    return g, dzs


def weight_grads(p: MlpParams, records: list[tuple[list[np.ndarray], list[np.ndarray]]]) -> list[np.ndarray]:
    """Sum ``dz_k^T h_k`` over many ``(acts, dzs)`` records with one GEMM per layer."""
    grads = []
    for k in range(len(p.weights)):
        dz = np.concatenate([np.atleast_2d(r[1][k]) for r in records], axis=0)
        h = np.concatenate([np.atleast_2d(r[0][k]) for r in records], axis=0)
        grads.append(dz.T @ h)
    return grads


class IncompleteTapeError(OrbitFeedbackError):
    """:func:`backward` was called on a tape that has no loss attached."""


class GradTape:
    """Recorded forward passes of one MLP plus the loss that consumed them.

    Loss builders call :meth:`forward` for every network evaluation and
    finish with :meth:`close`, handing over the scalar loss, a function that
    maps the loss seed to weight gradients, and a function that recomputes
    the loss from the recorded inputs.
    """

    def __init__(self, params: MlpParams):
        self.params = params
        self.records: list[list[np.ndarray]] = []
        self.loss: float | None = None
        self._backprop: Callable[[float], list[np.ndarray]] | None = None
        self._replay: Callable[[], float] | None = None

    def forward(self, x) -> np.ndarray:
        acts = trace(self.params, x)
        self.records.append(acts)
        return acts[-1]

    def close(self, loss: float, backprop, replay) -> None:
        self.loss = float(loss)
        self._backprop = backprop
        self._replay = replay

    @property
    def complete(self) -> bool:
        return self._backprop is not None

    def replay(self) -> float:
        if self._replay is None:
            raise IncompleteTapeError("tape has no loss attached")
        return float(self._replay())


def backward(tape: GradTape, loss_grad_seed: float = 1.0) -> list[np.ndarray]:
    """Gradients of ``loss_grad_seed * loss`` with respect to every weight."""
    if not tape.complete:
        raise IncompleteTapeError("tape has no loss attached")
    return tape._backprop(float(loss_grad_seed))


def mse_tape(p: MlpParams, x, y, scale: float = 1.0) -> GradTape:
    """Tape for ``mean_n |y_n - scale * net(x_n)|^2`` over a batch of rows."""
    x = np.atleast_2d(_check_input(p, x))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y.shape != (x.shape[0], p.layer_dims[-1]):
        raise DimensionError(f"targets have shape {y.shape}, expected {(x.shape[0], p.layer_dims[-1])}")
    tape = GradTape(p)
    out = tape.forward(x)
    resid = y - scale * out
    n = x.shape[0]

    def loss_of(res):
        return float(np.sum(res * res) / n)

    def backprop(seed):
        g_out = (-2.0 * seed * scale / n) * resid
        acts = tape.records[0]
        _, dzs = vjp(p, acts, g_out)
        return weight_grads(p, [(acts, dzs)])

    def replay():
        return loss_of(y - scale * forward(p, x))

    tape.close(loss_of(resid), backprop, replay)
    return tape


def global_norm(grads: list[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads)))


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float | None) -> tuple[list[np.ndarray], float]:
    """Rescale ``grads`` so their joint 2-norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0:
        return grads, norm
    c = max_norm / norm
    return [g * c for g in grads], norm


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_counter: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, p: MlpParams, lr: float = 1e-4, **kw) -> "AdamState":
        return cls(p.zeros_like(), p.zeros_like(), lr=lr, **kw)

    def copy(self) -> "AdamState":
        return AdamState(
            [m.copy() for m in self.first_moment],
            [v.copy() for v in self.second_moment],
            self.step_counter,
            self.lr,
            self.beta1,
            self.beta2,
            self.epsilon,
        )


def adam_step(p: MlpParams, grads: list[np.ndarray], st: AdamState) -> tuple[MlpParams, AdamState]:
    """Bias-corrected Adam update.

    Updates ``p`` and ``st`` in place and returns them; callers that need
    the previous weights keep a :meth:`MlpParams.copy`.
    """
    if len(grads) != len(p.weights) or len(st.first_moment) != len(p.weights):
        raise DimensionError("gradient / optimizer state does not match the network depth")
    for w, g, m, v in zip(p.weights, grads, st.first_moment, st.second_moment):
        if not (w.shape == g.shape == m.shape == v.shape):
            raise DimensionError(f"shape mismatch in adam_step: {w.shape}, {g.shape}, {m.shape}, {v.shape}")
    st.step_counter += 1
    for w, g, m, v in zip(p.weights, grads, st.first_moment, st.second_moment):
        kernels.adam_update(
            w, np.ascontiguousarray(g, dtype=np.float64), m, v, st.lr, st.beta1, st.beta2, st.epsilon, st.step_counter
        )
    return p, st


# -- checkpoints --------------------------------------------------------------


def format_checkpoint(p: MlpParams, st: AdamState | None = None) -> str:
    parts = [f"layers {len(p.weights)}\n"]
    parts += [format_matrix(w) for w in p.weights]
    if st is not None:
        parts.append(f"adam {st.step_counter} {st.lr!r} {st.beta1!r} {st.beta2!r} {st.epsilon!r}\n")
        parts += [format_matrix(m) for m in st.first_moment]
        parts += [format_matrix(v) for v in st.second_moment]
    return "".join(parts)


def save_checkpoint(path, p: MlpParams, st: AdamState | None = None) -> None:
    Path(path).write_text(format_checkpoint(p, st))


def load_checkpoint(path) -> tuple[MlpParams, AdamState | None]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or lines[0].split()[0] != "layers":
        raise ParseError("checkpoint must start with 'layers k'", 1)
    try:
        k = int(lines[0].split()[1])
    except (IndexError, ValueError):
        raise ParseError("bad layer count", 1) from None
    pos = 1
    weights = []
    for _ in range(k):
        w, pos = parse_matrix(lines, pos)
        weights.append(w)
    p = MlpParams(weights)
    if pos == len(lines):
        return p, None
    head = lines[pos].split()
    if head[0] != "adam" or len(head) != 6:
        raise ParseError("expected 'adam step lr beta1 beta2 eps'", pos + 1)
    step, lr, b1, b2, eps = int(head[1]), *(float(x) for x in head[2:])
    pos += 1
    moments = []
    for _ in range(2 * k):
        m, pos = parse_matrix(lines, pos)
        moments.append(m)
    if pos != len(lines):
        raise ParseError("trailing content after checkpoint", pos + 1)
    st = AdamState(moments[:k], moments[k:], step, lr, b1, b2, eps)
    for w, m in zip(weights, st.first_moment):
        if m.shape != w.shape:
            raise ParseError("optimizer moment shape does not match weights")
    return p, st
