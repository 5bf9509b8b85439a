"""Controller contract and the static controllers.

A controller maps an observed orbit to a corrector action. Adaptive
controllers additionally learn from ``observe_transition``; static ones
ignore it.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

from . import linalg
from .errors import ConfigError, DimensionError
from .neural import MlpParams, forward
from .trajectory import TransitionSet


class Controller(Protocol):
    def act(self, s_obs: np.ndarray) -> np.ndarray: ...

    def observe_transition(self, s: np.ndarray, a: np.ndarray, s_next: np.ndarray) -> None: ...


class SvdController:
    """Proportional controller on the SVD modes of a fixed ORM.

    Mode ``i`` of the orbit, ``q_i = u_i . s``, receives the correction
    ``z_i = -sigma_i / (sigma_i^2 + lam) q_i``; the action is
    ``gain * V z``. Modes with ``sigma_i^2 + lam == 0`` get no correction.
    ``lam`` defaults to ``1e-4 * sigma_1^2``.
    """

    def __init__(self, orm, lam: float | None = None, gain: float = 1.0):
        self.orm = linalg.as_matrix(orm, "orm")
        self.decomposition = linalg.svd(self.orm)
        sigma = self.decomposition.sigma
        if lam is None:
            lam = 1e-4 * float(sigma[0]) ** 2
        if not (lam >= 0 and np.isfinite(lam)):
            raise ConfigError(f"lambda must be finite and >= 0, got {lam}")
        if not 0 < gain <= 1:
            raise ConfigError(f"gain must lie in (0, 1], got {gain}")
        self.lam = float(lam)
        self.gain = float(gain)
        denom = sigma * sigma + self.lam
        with np.errstate(divide="ignore", invalid="ignore"):
            self.mode_gain = np.where(denom > 0, -sigma / denom, 0.0)

    @property
    def dim(self) -> int:
        return self.orm.shape[0]

    def act(self, s_obs) -> np.ndarray:
        return svd_controller_action(self, s_obs)

    def observe_transition(self, s, a, s_next) -> None:
        pass


def svd_controller_action(c: SvdController, s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != c.dim:
        raise DimensionError(f"state length {s.shape[-1]} does not match ORM dimension {c.dim}")
    u, _, v = c.decomposition
    q = s @ u
    z = c.mode_gain * q
    return c.gain * (z @ v.T)


def policy_controller_action(p: MlpParams, action_scale: float, s) -> np.ndarray:
    return action_scale * forward(p, s)


class PolicyController:
    """Static neural policy ``a = action_scale * net(s)``."""

    def __init__(self, params: MlpParams, action_scale: float = 1.0):
        if params.layer_dims[0] != params.layer_dims[-1]:
            raise DimensionError("policy input and output sizes differ")
        self.params = params
        self.action_scale = float(action_scale)

    @property
    def dim(self) -> int:
        return self.params.layer_dims[0]

    def act(self, s_obs) -> np.ndarray:
        return policy_controller_action(self.params, self.action_scale, s_obs)

    def observe_transition(self, s, a, s_next) -> None:
        pass


class ReplayBuffer:
    """Fixed-capacity transition store; the oldest entries are overwritten first."""

    def __init__(self, dim: int, capacity: int = 10_000):
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        self.dim = dim
        self.capacity = capacity
        self._s = np.empty((capacity, dim))
        self._a = np.empty((capacity, dim))
        self._sn = np.empty((capacity, dim))
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, s, a, s_next) -> None:
        i = self._next
        self._s[i] = s
        self._a[i] = a
        self._sn[i] = s_next
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def transitions(self) -> TransitionSet:
        """Contents in insertion order, oldest first."""
        if self._size < self.capacity:
            idx = np.arange(self._size)
        else:
            idx = (np.arange(self.capacity) + self._next) % self.capacity
        return TransitionSet(self._s[idx], self._a[idx], self._sn[idx])
