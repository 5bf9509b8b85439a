"""Model-based policy optimization with online system identification.

The policy is trained by unrolling it on a differentiable, noiseless
surrogate of the ring and descending the summed RMS of the visited orbits.
The surrogate is either a response matrix refit by least squares on
recent transitions, or a forward-model network trained on them. The
adaptive controller interleaves control, refits and policy retraining.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import linalg
from .controllers import ReplayBuffer
from .errors import ConfigError, DimensionError, DivergenceError, NumericalError
from .neural import (
    AdamState,
    GradTape,
    MlpParams,
    adam_step,
    backward,
    clip_by_global_norm,
    forward,
    mlp_init,
    mse_tape,
    trace,
    vjp,
    weight_grads,
)

log = logging.getLogger(__name__)


# -- surrogate models ---------------------------------------------------------


class SystemModel(Protocol):
    dim: int

    def predict_delta(self, s: np.ndarray, a: np.ndarray) -> np.ndarray: ...

    def delta_and_vjp(self, s: np.ndarray, a: np.ndarray): ...


class LinearModel:
    """``delta = R a``, independent of the state."""

    kind = "linear"

    def __init__(self, r):
        self.r = linalg.as_matrix(r, "r")
        if self.r.shape[0] != self.r.shape[1]:
            raise DimensionError("response matrix must be square")
        self.dim = self.r.shape[0]

    def predict_delta(self, s, a):
        return np.asarray(a) @ self.r.T

    def delta_and_vjp(self, s, a):
        r = self.r

        def pullback(g):
            return None, g @ r

        return a @ r.T, pullback


class NeuralModel:
    """``delta = out_scale * f([s / s_scale, a / a_scale])`` for an unbiased tanh MLP ``f``.

    The scales are fixed when the model is first fitted and keep the
    network inputs and outputs inside the unsaturated range of tanh.
    """

    kind = "neural"

    def __init__(self, params: MlpParams, s_scale: float = 1.0, a_scale: float = 1.0, out_scale: float = 1.0):
        dims = params.layer_dims
        if dims[0] != 2 * dims[-1]:
            raise DimensionError(f"forward model must map 2*dim -> dim, got {dims[0]} -> {dims[-1]}")
        self.params = params
        self.dim = dims[-1]
        self.s_scale = float(s_scale)
        self.a_scale = float(a_scale)
        self.out_scale = float(out_scale)

    def _inputs(self, s, a):
        s = np.atleast_2d(s)
        a = np.atleast_2d(a)
        return np.concatenate([s / self.s_scale, a / self.a_scale], axis=1)

    def predict_delta(self, s, a):
        s = np.asarray(s, dtype=np.float64)
        out = self.out_scale * forward(self.params, self._inputs(s, a))
        return out[0] if s.ndim == 1 else out

    def delta_and_vjp(self, s, a):
        acts = trace(self.params, self._inputs(s, a))
        d = self.dim

        def pullback(g):
            g_in, _ = vjp(self.params, acts, self.out_scale * g)
            return g_in[:, :d] / self.s_scale, g_in[:, d:] / self.a_scale

        return self.out_scale * acts[-1], pullback


# -- trajectory optimization --------------------------------------------------


@dataclass(frozen=True)
class RolloutConfig:
    """Trajectory-sampling settings; the reward is always ``-rms(s)``.

    ``batch_size`` initial orbits are unrolled per episode and their losses
    averaged; ``clip_norm`` bounds the global gradient norm per update
    (``None`` disables clipping); ``divergence_factor`` aborts a rollout
    whose RMS exceeds that multiple of the initial RMS.
    """

    horizon: int = 20
    episodes: int = 2000
    gamma: float = 1.0
    batch_size: int = 4
    clip_norm: float | None = 1.0
    divergence_factor: float = 100.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("clip_norm must be > 0 or None")


def _rms_rows(s):
    return np.sqrt(np.mean(s * s, axis=1))


def rollout_tape(
    p: MlpParams,
    model,
    s0,
    cfg: RolloutConfig,
    action_scale: float = 1.0,
    guard_rms: float | None = None,
) -> GradTape:
    """Unroll ``s_{n+1} = s_n + model(s_n, scale * net(s_n))`` for ``cfg.horizon`` steps.

    Loss is ``sum_{n < N} gamma^n rms(s_n)``, averaged over the rows of
    ``s0``. The surrogate is deterministic; nothing here touches a
    :class:`~orbitfb.env.RingEnv`.
    """
    s0 = np.asarray(s0, dtype=np.float64)
    batch = np.atleast_2d(s0)
    d = p.layer_dims[0]
    if batch.shape[1] != d or p.layer_dims[-1] != d or model.dim != d:
        raise DimensionError("policy, model and state dimensions disagree")
    n_rows = batch.shape[0]
    horizon = cfg.horizon
    if guard_rms is None:
        guard_rms = cfg.divergence_factor * float(np.max(_rms_rows(batch)))
    tape = GradTape(p)
    states = [batch]
    pullbacks = []
    for n in range(horizon - 1):
        s = states[-1]
        a = action_scale * tape.forward(s)
        delta, pull = model.delta_and_vjp(s, a)
        s_next = s + delta
        r_next = _rms_rows(s_next)
        if not np.all(np.isfinite(s_next)):
            raise DivergenceError("non-finite surrogate state", step=n + 1)
        if guard_rms > 0 and np.any(r_next > guard_rms):
            raise DivergenceError(f"surrogate RMS above {guard_rms:.3g}", step=n + 1)
        states.append(s_next)
        pullbacks.append(pull)
    # a_{N-1} only reaches s_N, which is outside the scored window
    discounts = cfg.gamma ** np.arange(horizon)
    row_rms = [_rms_rows(s) for s in states]
    loss = float(sum(discounts[n] * np.sum(row_rms[n]) for n in range(horizon)) / n_rows)

    def backprop(seed):
        g_s = np.zeros_like(batch)
        records = []
        for n in range(horizon - 1, -1, -1):
            if n < horizon - 1:
                g_model_s, g_a = pullbacks[n](g_s)
                acts = tape.records[n]
                g_pol_s, dzs = vjp(p, acts, action_scale * g_a)
                records.append((acts, dzs))
                g_s = g_s + g_pol_s
                if g_model_s is not None:
                    g_s = g_s + g_model_s
            s = states[n]
            r = row_rms[n]
            safe = np.where(r > 0, r, 1.0)
            coef = np.where(r > 0, seed * discounts[n] / (n_rows * d * safe), 0.0)
            g_s = g_s + coef[:, None] * s
        if not records:
            return p.zeros_like()
        return weight_grads(p, records)

    def replay():
        s = batch
        total = 0.0
        for n in range(horizon):
            total += discounts[n] * float(np.sum(_rms_rows(s)))
            if n < horizon - 1:
                s = s + model.predict_delta(s, action_scale * forward(p, s))
        return total / n_rows

    tape.close(loss, backprop, replay)
    return tape


def rollout_loss(p: MlpParams, model, s0, cfg: RolloutConfig, action_scale: float = 1.0, guard_rms: float | None = None):
    """``(loss, grads)`` of one surrogate rollout; see :func:`rollout_tape`."""
    tape = rollout_tape(p, model, s0, cfg, action_scale, guard_rms)
    return tape.loss, backward(tape, 1.0)


def train_policy(
    p: MlpParams,
    model,
    cfg: RolloutConfig,
    init_rms: float,
    st: AdamState,
    seed: int,
    action_scale: float = 1.0,
) -> tuple[MlpParams, np.ndarray]:
    """Policy gradient with trajectory sampling on the surrogate ``model``.

    Each episode draws ``cfg.batch_size`` orbits ``s0 ~ N(0, init_rms^2 I)``,
    unrolls them, clips the gradient and takes one Adam step. Returns a new
    parameter set and the per-episode losses; ``st`` is advanced in place.
    """
    p = p.copy()
    rng = np.random.default_rng([seed, 505])
    d = p.layer_dims[0]
    guard = cfg.divergence_factor * init_rms
    history = np.empty(cfg.episodes)
    for ep in range(cfg.episodes):
        s0 = init_rms * rng.standard_normal((cfg.batch_size, d))
        try:
            loss, grads = rollout_loss(p, model, s0, cfg, action_scale, guard_rms=guard)
        except DivergenceError as exc:
            raise DivergenceError(str(exc), step=exc.step, episode=ep) from exc
        grads, _ = clip_by_global_norm(grads, cfg.clip_norm)
        adam_step(p, grads, st)
        history[ep] = loss
    return p, history


def greedy_rollout(p: MlpParams, model, s0, steps: int, action_scale: float = 1.0) -> np.ndarray:
    """RMS of the noiseless surrogate trajectory ``s_0 .. s_steps`` under the policy."""
    s = np.asarray(s0, dtype=np.float64)
    out = [float(np.sqrt(np.mean(s * s)))]
    for _ in range(steps):
        s = s + model.predict_delta(s, action_scale * forward(p, s))
        out.append(float(np.sqrt(np.mean(s * s))))
    return np.asarray(out)


# -- online model optimization -----------------------------------------------


def refit_linear_model(data) -> LinearModel:
    """Least-squares response matrix from logged transitions."""
    return LinearModel(linalg.fit_response_lstsq(data))


def fit_residual(model, data) -> float:
    s, a, s_next = data.arrays()
    if len(s) == 0:
        return 0.0
    err = (s_next - s) - model.predict_delta(s, a)
    return float(np.mean(np.sum(err * err, axis=1)))


def forward_model_init(dim: int, seed: int, hidden=(512, 512, 512)) -> MlpParams:
    return mlp_init([2 * dim, *hidden, dim], seed)


def train_forward_model(
    f,
    data,
    epochs: int,
    st: AdamState,
    seed: int,
    batch_size: int = 64,
) -> tuple[NeuralModel, np.ndarray]:
    """Fit ``f(s, a) ~ s' - s`` by minibatch Adam on mean squared error.

    ``f`` is an :class:`MlpParams` (scales are then chosen from the data) or
    an existing :class:`NeuralModel` whose scales are kept. Returns the
    trained model and the per-epoch mean loss; ``st`` is advanced in place.
    """
    s, a, s_next = data.arrays()
    n = s.shape[0]
    if n == 0:
        raise ValueError("no transitions to fit")
    target = s_next - s
    if isinstance(f, NeuralModel):
        model = NeuralModel(f.params.copy(), f.s_scale, f.a_scale, f.out_scale)
    else:
        def _scale(x, k):
            v = float(np.sqrt(np.mean(x * x)))
            return k * v if v > 0 else 1.0

        model = NeuralModel(f.copy(), _scale(s, 3.0), _scale(a, 3.0), _scale(target, 8.0))
    if model.dim != s.shape[1]:
        raise DimensionError("forward model does not match the transition dimension")
    x = model._inputs(s, a)
    y = target / model.out_scale
    rng = np.random.default_rng([seed, 606])
    p = model.params
    history = np.empty(epochs)
    for ep in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            tape = mse_tape(p, x[idx], y[idx])
            grads = backward(tape, 1.0)
            total += tape.loss * len(idx)
            adam_step(p, grads, st)
        history[ep] = total / n * model.out_scale**2
    return model, history


# -- adaptive loop ------------------------------------------------------------


@dataclass
class RefitEvent:
    step: int
    model_kind: str
    residual: float
    n_transitions: int
    status: str = "ok"


@dataclass
class AdaptiveConfig:
    """Schedule of the online loop: refit the surrogate every ``refit_every``
    transitions from the newest ``buffer_capacity`` of them, then run
    ``retrain`` (a :class:`RolloutConfig`, usually with a small episode
    budget) on the refreshed surrogate."""

    model_kind: str = "linear"
    refit_every: int = 500
    buffer_capacity: int = 10_000
    retrain: RolloutConfig = field(default_factory=lambda: RolloutConfig(episodes=200))
    init_rms: float = 0.25
    forward_epochs: int = 20
    min_transitions: int | None = None

    def __post_init__(self):
        if self.model_kind not in ("linear", "neural"):
            raise ConfigError(f"model_kind must be 'linear' or 'neural', got {self.model_kind!r}")
        if self.refit_every < 1:
            raise ConfigError("refit_every must be >= 1")


class AdaptiveMbrlController:
    """Policy controller that refits its surrogate and retrains itself online.

    Transitions fed through :meth:`observe_transition` go to a ring buffer.
    Every ``refit_every`` transitions the surrogate is refit on the buffer
    and the policy is retrained on it; control continues with the previous
    policy and model if the refit fails.
    """

    def __init__(
        self,
        policy: MlpParams,
        model,
        cfg: AdaptiveConfig,
        action_scale: float = 1.0,
        adam: AdamState | None = None,
        seed: int = 0,
    ):
        self.policy = policy.copy()
        self.model = model
        self.cfg = cfg
        self.action_scale = float(action_scale)
        self.adam = adam.copy() if adam is not None else AdamState.for_params(self.policy)
        self.dim = self.policy.layer_dims[0]
        self.buffer = ReplayBuffer(self.dim, cfg.buffer_capacity)
        self.seed = seed
        self.events: list[RefitEvent] = []
        self.n_seen = 0
        self._model_adam: AdamState | None = None

    def act(self, s_obs) -> np.ndarray:
        return self.action_scale * forward(self.policy, s_obs)

    def observe_transition(self, s, a, s_next, allow_update: bool = True) -> None:
        """Buffer one transition; every ``refit_every`` of them triggers :meth:`update`
        unless ``allow_update`` is false (e.g. after the last step of a run)."""
        self.buffer.add(s, a, s_next)
        self.n_seen += 1
        if allow_update and self.n_seen % self.cfg.refit_every == 0:
            self.update()

    def update(self) -> RefitEvent:
        """Refit the surrogate on the buffer and retrain the policy on it."""
        data = self.buffer.transitions()
        kind = self.cfg.model_kind
        k = len(self.events)
        try:
            if kind == "linear":
                model = refit_linear_model(data)
            else:
                if self._model_adam is None:
                    base = forward_model_init(self.dim, self.seed)
                    self._model_adam = AdamState.for_params(base)
                else:
                    base = self.model if isinstance(self.model, NeuralModel) else None
                if base is None:
                    base = forward_model_init(self.dim, self.seed)
                model, _ = train_forward_model(base, data, self.cfg.forward_epochs, self._model_adam, seed=self.seed + k)
        except NumericalError as exc:
            ev = RefitEvent(self.n_seen, kind, float("nan"), len(data), status=f"skipped: {exc}")
            log.info("refit at %d skipped: %s", self.n_seen, exc)
            self.events.append(ev)
            return ev
        residual = fit_residual(model, data)
        try:
            policy, _ = train_policy(
                self.policy, model, self.cfg.retrain, self.cfg.init_rms, self.adam, seed=self.seed * 7919 + k, action_scale=self.action_scale
            )
        except DivergenceError as exc:
            ev = RefitEvent(self.n_seen, kind, residual, len(data), status=f"retrain diverged: {exc}")
            self.events.append(ev)
            return ev
        # swap is atomic from the control loop's point of view
        self.model, self.policy = model, policy
        ev = RefitEvent(self.n_seen, kind, residual, len(data))
        self.events.append(ev)
        return ev


def adaptive_loop(env, controller: AdaptiveMbrlController, total_steps: int, reset: bool = True):
    """Run ``controller`` on ``env`` for ``total_steps`` steps.

    Returns the environment's :class:`~orbitfb.trajectory.TrajectoryLog` and a
    metrics dict with the final RMS and the refit events.
    """
    if reset or env.log is None:
        s = env.reset()
    else:
        s = env.observation.copy()
    for k in range(total_steps):
        a = controller.act(s)
        s_next = env.step(a)
        # a refit after the final step could never act on the machine
        controller.observe_transition(s, a, s_next, allow_update=k < total_steps - 1)
        s = s_next
    series = env.log.rms_series
    return env.log, {"final_rms": float(series[-1]), "events": list(controller.events)}
