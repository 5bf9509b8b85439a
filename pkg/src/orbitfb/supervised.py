"""Labeled state/action datasets and supervised policy fitting."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .controllers import SvdController, svd_controller_action
from .env import EnvConfig, RingEnv
from .errors import DimensionError, ParseError
from .neural import AdamState, MlpParams, adam_step, backward, mse_tape

PROVENANCES = ("archive", "svd_labels", "forward_random")


@dataclass
class LabeledDataset:
    states: np.ndarray
    actions: np.ndarray
    provenance: str = "archive"

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise DimensionError("states and actions must be 2-d arrays (n, dim)")
        if self.states.shape != self.actions.shape:
            raise DimensionError(f"states {self.states.shape} and actions {self.actions.shape} differ")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


def gen_dataset_svd_labels(env_config: EnvConfig, r_nominal, lam: float, n: int, seed: int, gain: float = 1.0) -> LabeledDataset:
    """States drawn like :meth:`RingEnv.reset`, labeled by the spectral controller."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ctl = SvdController(r_nominal, lam=lam, gain=gain)
    if ctl.dim != env_config.dim:
        raise DimensionError("nominal ORM does not match the environment dimension")
    rng = np.random.default_rng([seed, 707])
    states = env_config.init_rms * rng.standard_normal((n, env_config.dim))
    return LabeledDataset(states, svd_controller_action(ctl, states), "svd_labels")


def gen_dataset_forward(env: RingEnv, action_sigma: float, n: int, seed: int) -> LabeledDataset:
    """Random kicks on the running machine; each resulting orbit is labeled with minus the kick.

    The environment is reset first (machine time keeps running), then for
    every pair a kick ``a ~ N(0, action_sigma^2 I)`` is applied and the pair
    ``(s', -a)`` recorded. The orbit is not re-centered between kicks.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not action_sigma > 0:
        raise ValueError("action_sigma must be > 0")
    rng = np.random.default_rng([seed, 808])
    env.reset()
    states = np.empty((n, env.dim))
    actions = np.empty((n, env.dim))
    for i in range(n):
        a = action_sigma * rng.standard_normal(env.dim)
        states[i] = env.step(a)
        actions[i] = -a
    return LabeledDataset(states, actions, "forward_random")


def write_dataset(path, d: LabeledDataset) -> None:
    """CSV: a header row holding ``dim``, then ``2 * dim`` values per pair (state, then action)."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([d.dim])
        for s, a in zip(d.states, d.actions):
            w.writerow([f"{x:.17g}" for x in s] + [f"{x:.17g}" for x in a])


def ingest_dataset(path) -> LabeledDataset:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file, expected a 'dim' header", 1)
    try:
        (dim,) = (int(x) for x in rows[0])
    except ValueError:
        raise ParseError(f"bad header {rows[0]!r}", 1) from None
    if dim < 1:
        raise ParseError("dim must be >= 1", 1)
    states, actions = [], []
    for i, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2 * dim:
            raise ParseError(f"expected {2 * dim} values, got {len(row)}", i)
        try:
            vals = [float(x) for x in row]
        except ValueError:
            raise ParseError("non-numeric value", i) from None
        if not np.all(np.isfinite(vals)):
            raise ParseError("non-finite value", i)
        states.append(vals[:dim])
        actions.append(vals[dim:])
    if not states:
        empty = np.zeros((0, dim))
        return LabeledDataset(empty, empty.copy(), "archive")
    return LabeledDataset(np.array(states), np.array(actions), "archive")


def train_supervised(
    p: MlpParams,
    d: LabeledDataset,
    epochs: int,
    batch_size: int,
    st: AdamState,
    seed: int,
    action_scale: float = 1.0,
) -> tuple[MlpParams, np.ndarray]:
    """Minimize ``mean |a - action_scale * net(s)|^2`` by shuffled minibatch Adam.

    Returns new weights and the per-epoch mean training loss; ``st`` is
    advanced in place.
    """
    if len(d) == 0:
        raise ValueError("dataset is empty")
    dims = p.layer_dims
    if d.dim != dims[0] or d.dim != dims[-1]:
        raise DimensionError(f"dataset dim {d.dim} does not match network {dims}")
    p = p.copy()
    rng = np.random.default_rng([seed, 909])
    n = len(d)
    history = np.empty(epochs)
    for ep in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            tape = mse_tape(p, d.states[idx], d.actions[idx], action_scale)
            total += tape.loss * len(idx)
            adam_step(p, backward(tape, 1.0), st)
        history[ep] = total / n
    return p, history


def supervised_loss(p: MlpParams, d: LabeledDataset, action_scale: float = 1.0) -> float:
    return mse_tape(p, d.states, d.actions, action_scale).loss
