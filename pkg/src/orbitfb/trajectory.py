"""Transition logs shared by the environment, the fitters and the harness."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def rms(s) -> float:
    """Root mean square of a state vector (0 for an empty vector)."""
    s = np.asarray(s, dtype=np.float64)
    if s.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(s * s)))


@dataclass
class TrajectoryLog:
    """Observed states ``s_0 .. s_n`` and the actions ``a_0 .. a_{n-1}`` between them.

    Transition ``k`` is ``(observations[k], actions[k], observations[k + 1])``.
    ``keep_states=False`` keeps only the RMS series, which is all the harness
    metrics need for long campaigns.
    """

    dim: int
    keep_states: bool = True
    observations: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rms_values: list = field(default_factory=list)
    _n_actions: int = 0
    _last: np.ndarray | None = None

    def start(self, s0) -> None:
        if self.rms_values:
            raise ValueError("log already started")
        s0 = np.array(s0, dtype=np.float64)
        self._last = s0
        self.rms_values.append(rms(s0))
        if self.keep_states:
            self.observations.append(s0)

    def append(self, a, s_next) -> None:
        if not self.rms_values:
            raise ValueError("log not started")
        s_next = np.array(s_next, dtype=np.float64)
        self._last = s_next
        self.rms_values.append(rms(s_next))
        self._n_actions += 1
        if self.keep_states:
            self.actions.append(np.array(a, dtype=np.float64))
            self.observations.append(s_next)

    def __len__(self) -> int:
        return self._n_actions

    @property
    def rms_series(self) -> np.ndarray:
        return np.asarray(self.rms_values, dtype=np.float64)

    @property
    def last_observation(self) -> np.ndarray | None:
        return self._last

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(states, actions, next_states)``, each of shape ``(n, dim)``."""
        if not self.keep_states:
            raise ValueError("log was recorded without states")
        n = len(self)
        if n == 0:
            empty = np.zeros((0, self.dim))
            return empty, empty.copy(), empty.copy()
        obs = np.asarray(self.observations)
        return obs[:-1], np.asarray(self.actions), obs[1:]

    def write_csv(self, path) -> None:
        """Columns ``step, rms, s_0.., a_0..``; the final row has empty action cells."""
        if not self.keep_states:
            raise ValueError("log was recorded without states")
        d = self.dim
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "rms"] + [f"s_{i}" for i in range(d)] + [f"a_{i}" for i in range(d)])
            for k, s in enumerate(self.observations):
                a = [repr(float(x)) for x in self.actions[k]] if k < len(self.actions) else [""] * d
                w.writerow([k, repr(self.rms_values[k])] + [repr(float(x)) for x in s] + a)

    @classmethod
    def read_csv(cls, path) -> "TrajectoryLog":
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        d = (len(header) - 2) // 2
        log = cls(dim=d)
        for k, row in enumerate(body):
            s = np.array([float(x) for x in row[2 : 2 + d]])
            if k == 0:
                log.start(s)
            else:
                prev = body[k - 1][2 + d :]
                log.append(np.array([float(x) for x in prev]), s)
        return log


class TransitionSet:
    """Unchained transitions, e.g. the contents of a replay buffer.

    Accepted anywhere a :class:`TrajectoryLog` is used as fitting data.
    """

    def __init__(self, states, actions, next_states):
        self._s = np.atleast_2d(np.asarray(states, dtype=np.float64))
        self._a = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        self._sn = np.atleast_2d(np.asarray(next_states, dtype=np.float64))
        if not (self._s.shape == self._a.shape == self._sn.shape):
            raise ValueError("transition arrays differ in shape")
        self.dim = self._s.shape[1]

    def __len__(self) -> int:
        return self._s.shape[0]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self._s, self._a, self._sn
