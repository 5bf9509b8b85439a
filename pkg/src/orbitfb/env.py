"""Storage-ring simulator: first-order orbit response with ORM drift and BPM noise.

The true orbit evolves noiselessly as ``s <- s + R(t) a``; BPM readings add
i.i.d. Gaussian noise. ``R(t)`` interpolates linearly from ``r_a`` to
``r_b`` over ``drift_steps`` machine steps and then stays at ``r_b``.
Machine time (``step_count``) survives :meth:`RingEnv.reset`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NonFiniteError
from .linalg import as_matrix
from .trajectory import TrajectoryLog, rms

__all__ = ["EnvConfig", "RingEnv", "generate_orm", "perturb_orm", "random_orthogonal", "rms"]


@dataclass(frozen=True)
class EnvConfig:
    dim: int = 180
    cond_number: float = 100.0
    drift_fraction: float = 0.05
    drift_steps: int = 5000
    noise_sigma: float = 2e-4
    init_rms: float = 0.25
    seed: int = 0
    a_max: float | None = None

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigError(f"dim must be a positive integer, got {self.dim}")
        if not self.cond_number >= 1:
            raise ConfigError(f"cond_number must be >= 1, got {self.cond_number}")
        if not 0.0 <= self.drift_fraction <= 1.0:
            raise ConfigError(f"drift_fraction must lie in [0, 1], got {self.drift_fraction}")
        if int(self.drift_steps) != self.drift_steps or self.drift_steps < 1:
            raise ConfigError(f"drift_steps must be a positive integer, got {self.drift_steps}")
        if not self.noise_sigma >= 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if not self.init_rms > 0:
            raise ConfigError(f"init_rms must be > 0, got {self.init_rms}")
        if self.a_max is not None and not self.a_max > 0:
            raise ConfigError(f"a_max must be > 0 when set, got {self.a_max}")

    def replace(self, **changes) -> "EnvConfig":
        return EnvConfig(**{**asdict(self), **changes})


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR of a Gaussian, signs fixed)."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def generate_orm(dim: int, cond_number: float, seed: int) -> np.ndarray:
    """Synthetic ORM ``U diag(sigma) V^T`` with sigma log-spaced from 1 to 1/cond_number."""
    if dim < 1:
        raise ConfigError("dim must be >= 1")
    if not cond_number >= 1:
        raise ConfigError("cond_number must be >= 1")
    rng = np.random.default_rng([seed, 101])
    u = random_orthogonal(dim, rng)
    v = random_orthogonal(dim, rng)
    sigma = np.logspace(0.0, -np.log10(cond_number), dim)
    return (u * sigma) @ v.T


def perturb_orm(r, drift_fraction: float, seed: int) -> np.ndarray:
    """Second ORM at Frobenius distance ``drift_fraction * |r|_F`` along a seeded Gaussian direction."""
    r = as_matrix(r, "r")
    if drift_fraction < 0:
        raise ConfigError("drift_fraction must be >= 0")
    if drift_fraction == 0:
        return r.copy()
    rng = np.random.default_rng([seed, 202])
    e = rng.standard_normal(r.shape)
    return r + (drift_fraction * np.linalg.norm(r) / np.linalg.norm(e)) * e


class RingEnv:
    """Seedable ring simulator.

    ``r_a``/``r_b`` default to ``generate_orm(dim, cond_number, seed)`` and
    ``perturb_orm(r_a, drift_fraction, seed)``. ``rng_seed`` (default
    ``config.seed``) drives the initial orbits and the BPM noise, so several
    environments can share one machine while sampling independent
    trajectories.
    """

    def __init__(
        self,
        config: EnvConfig,
        r_a=None,
        r_b=None,
        rng_seed: int | None = None,
        keep_states: bool = True,
    ):
        self.config = config
        d = config.dim
        if r_a is None:
            r_a = generate_orm(d, config.cond_number, config.seed)
        self.r_a = as_matrix(r_a, "r_a")
        if r_b is None:
            r_b = perturb_orm(self.r_a, config.drift_fraction, config.seed)
        self.r_b = as_matrix(r_b, "r_b")
        for name, m in (("r_a", self.r_a), ("r_b", self.r_b)):
            if m.shape != (d, d):
                raise DimensionError(f"{name} has shape {m.shape}, expected {(d, d)}")
        self._frozen = np.array_equal(self.r_a, self.r_b)
        self.keep_states = keep_states
        self.rng = np.random.default_rng([config.seed if rng_seed is None else rng_seed, 303])
        self.step_count = 0
        self.true_state = np.zeros(d)
        self.observation = np.zeros(d)
        self.log: TrajectoryLog | None = None

    @property
    def dim(self) -> int:
        return self.config.dim

    def drift_alpha(self, t: int | None = None) -> float:
        t = self.step_count if t is None else t
        return min(t / self.config.drift_steps, 1.0)

    def effective_orm(self, t: int | None = None) -> np.ndarray:
        if self._frozen:
            return self.r_a.copy()
        alpha = self.drift_alpha(t)
        return (1.0 - alpha) * self.r_a + alpha * self.r_b

    def _observe(self) -> np.ndarray:
        sigma = self.config.noise_sigma
        if sigma == 0:
            return self.true_state.copy()
        return self.true_state + sigma * self.rng.standard_normal(self.dim)

    def reset(self) -> np.ndarray:
        """Draw a fresh orbit with per-BPM std ``init_rms``; machine time is kept."""
        self.true_state = self.config.init_rms * self.rng.standard_normal(self.dim)
        self.observation = self._observe()
        self.log = TrajectoryLog(self.dim, keep_states=self.keep_states)
        self.log.start(self.observation)
        return self.observation.copy()

    def step(self, a) -> np.ndarray:
        a = np.array(a, dtype=np.float64)
        if a.shape != (self.dim,):
            raise DimensionError(f"action has shape {a.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(a)):
            raise NonFiniteError("action has non-finite entries")
        if self.config.a_max is not None:
            np.clip(a, -self.config.a_max, self.config.a_max, out=a)
        if self.log is None:
            self.log = TrajectoryLog(self.dim, keep_states=self.keep_states)
            self.log.start(self.observation)
        if self._frozen:
            delta = self.r_a @ a
        else:
            alpha = self.drift_alpha()
            delta = (1.0 - alpha) * (self.r_a @ a) + alpha * (self.r_b @ a)
        self.true_state = self.true_state + delta
        self.step_count += 1
        self.observation = self._observe()
        self.log.append(a, self.observation)
        return self.observation.copy()
