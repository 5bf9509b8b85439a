"""Experiment configuration, metrics and multi-trajectory campaigns.

A campaign runs ``n_trajectories`` independent trajectories of one
controller. Every trajectory gets a fresh :class:`RingEnv` that shares the
nominal ORM (built from ``env.seed``) but draws its own drift target,
initial orbit and BPM noise from a seed derived from the master seed, so
drift always starts at machine time 0.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np
import yaml

from .controllers import PolicyController, SvdController
from .env import EnvConfig, RingEnv, generate_orm, perturb_orm
from .errors import ConfigError, DimensionError
from .mbrl import AdaptiveConfig, AdaptiveMbrlController, LinearModel, RolloutConfig, adaptive_loop, train_policy
from .neural import POLICY_DIMS, AdamState, MlpParams, load_checkpoint, mlp_init
from .supervised import (
    LabeledDataset,
    gen_dataset_forward,
    gen_dataset_svd_labels,
    ingest_dataset,
    train_supervised,
)
from .trajectory import TrajectoryLog

log = logging.getLogger(__name__)

METHODS = ("svd", "supervised", "mbrl")


# -- configuration ------------------------------------------------------------


def _build(cls, data: Mapping[str, Any] | None, where: str, **overrides):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    data.update(overrides)
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class SvdSpec:
    lam: float | None = None
    gain: float = 1.0


@dataclass
class SupervisedSpec:
    """Dataset recipe and training budget for the supervised baseline.

    ``recipe`` is ``svd_labels`` (spectral-controller labels on reset-like
    states), ``forward_random`` (random kicks, labels ``-a``) or ``archive``
    (``dataset_path``). Spectral labels use ``label_lambda`` / ``label_gain``
    when set and otherwise the ``svd`` section, so by default the network
    imitates the configured SVD baseline. A ``checkpoint`` skips training.
    """

    recipe: str = "svd_labels"
    n_samples: int = 50_000
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-4
    action_scale: float = 30.0
    label_lambda: float | None = None
    label_gain: float | None = None
    action_sigma: float = 0.05
    dataset_path: str | None = None
    checkpoint: str | None = None
    hidden: list[int] = field(default_factory=lambda: list(POLICY_DIMS[1:-1]))

    def __post_init__(self):
        if self.recipe not in ("svd_labels", "forward_random", "archive"):
            raise ConfigError(f"supervised.recipe must be svd_labels, forward_random or archive, got {self.recipe!r}")
        if self.recipe == "archive" and not self.dataset_path and not self.checkpoint:
            raise ConfigError("supervised.recipe 'archive' needs dataset_path")
        if self.n_samples < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("supervised: n_samples and batch_size must be >= 1, epochs >= 0")
        if not self.lr > 0 or not self.action_scale > 0:
            raise ConfigError("supervised: lr and action_scale must be > 0")


@dataclass
class MbrlSpec:
    """Pre-training on the nominal ORM plus the online adaptation schedule."""

    horizon: int = 20
    episodes: int = 2000
    gamma: float = 1.0
    batch_size: int = 4
    clip_norm: float | None = 1.0
    lr: float = 1e-4
    action_scale: float = 10.0
    adaptive: bool = True
    model_kind: str = "linear"
    refit_every: int = 500
    buffer_capacity: int = 10_000
    retrain_episodes: int = 200
    retrain_horizon: int | None = None
    retrain_lr: float | None = None
    forward_epochs: int = 20
    checkpoint: str | None = None
    hidden: list[int] = field(default_factory=lambda: list(POLICY_DIMS[1:-1]))

    def __post_init__(self):
        if not self.lr > 0 or not self.action_scale > 0:
            raise ConfigError("mbrl: lr and action_scale must be > 0")
        if self.retrain_lr is not None and not self.retrain_lr > 0:
            raise ConfigError("mbrl.retrain_lr must be > 0")
        self.rollout()
        self.adaptive_config(0.25)

    def rollout(self) -> RolloutConfig:
        return RolloutConfig(self.horizon, self.episodes, self.gamma, self.batch_size, self.clip_norm)

    def adaptive_config(self, init_rms: float) -> AdaptiveConfig:
        retrain = RolloutConfig(
            self.retrain_horizon or self.horizon, self.retrain_episodes, self.gamma, self.batch_size, self.clip_norm
        )
        return AdaptiveConfig(
            model_kind=self.model_kind,
            refit_every=self.refit_every,
            buffer_capacity=self.buffer_capacity,
            retrain=retrain,
            init_rms=init_rms,
            forward_epochs=self.forward_epochs,
        )


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    methods: list[str] = field(default_factory=lambda: ["mbrl"])
    svd: SvdSpec = field(default_factory=SvdSpec)
    supervised: SupervisedSpec = field(default_factory=SupervisedSpec)
    mbrl: MbrlSpec = field(default_factory=MbrlSpec)
    n_trajectories: int = 20
    trajectory_length: int = 2000
    rms_threshold: float = 0.05
    seed: int = 0
    out_dir: str = "out"
    full_logs: bool = False

    def __post_init__(self):
        if isinstance(self.methods, str):
            self.methods = [self.methods]
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError(f"methods must be a non-empty subset of {METHODS}, got {self.methods}")
        if self.n_trajectories < 1 or self.trajectory_length < 0:
            raise ConfigError("n_trajectories must be >= 1 and trajectory_length >= 0")
        if not self.rms_threshold > 0:
            raise ConfigError("rms_threshold must be > 0")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> "ExperimentConfig":
        data = dict(data or {})
        nested = {
            "env": (EnvConfig, data.pop("env", None)),
            "svd": (SvdSpec, data.pop("svd", None)),
            "supervised": (SupervisedSpec, data.pop("supervised", None)),
            "mbrl": (MbrlSpec, data.pop("mbrl", None)),
        }
        built = {}
        for key, (kind, section) in nested.items():
            if section is not None and not isinstance(section, Mapping):
                raise ConfigError(f"section '{key}' must be a mapping")
            built[key] = _build(kind, section, key)
        return _build(cls, data, "config", **built)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if data is not None and not isinstance(data, Mapping):
            raise ConfigError("config root must be a mapping")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig.from_dict({**self.to_dict(), **changes})


def trajectory_seeds(master_seed: int, n: int) -> list[int]:
    """Independent 32-bit seeds for trajectories ``0 .. n-1``."""
    return [int(np.random.SeedSequence([master_seed, i]).generate_state(1)[0]) for i in range(n)]


# -- metrics ------------------------------------------------------------------


@dataclass
class MetricsSummary:
    """Best / worst / final observed RMS (mean and std across trajectories)
    and the first step at which RMS reaches the threshold.

    ``steps_to_threshold`` averages over the trajectories that reached it
    and is ``None`` when none did; ``reach_fraction`` says how many did.
    """

    min_rms: float
    min_rms_std: float
    max_rms: float
    max_rms_std: float
    final_rms: float
    final_rms_std: float
    steps_to_threshold: float | None
    steps_std: float | None
    reach_fraction: float
    n_trajectories: int
    threshold: float
    per_trajectory_steps: list = field(default_factory=list, repr=False)

    @property
    def reached(self) -> bool:
        return self.steps_to_threshold is not None


def first_reach(series: np.ndarray, threshold: float) -> int | None:
    hit = np.flatnonzero(series <= threshold)
    return int(hit[0]) if hit.size else None


def compute_metrics(logs: Iterable, threshold: float = 0.05) -> MetricsSummary:
    """Metrics over trajectory logs (or bare RMS series)."""
    series = [np.asarray(getattr(x, "rms_series", x), dtype=np.float64) for x in logs]
    if not series:
        raise ValueError("compute_metrics needs at least one trajectory")
    if any(s.size == 0 for s in series):
        raise ValueError("empty RMS series")
    lo = np.array([s.min() for s in series])
    hi = np.array([s.max() for s in series])
    fin = np.array([s[-1] for s in series])
    steps = [first_reach(s, threshold) for s in series]
    reached = np.array([k for k in steps if k is not None], dtype=np.float64)
    return MetricsSummary(
        min_rms=float(lo.mean()),
        min_rms_std=float(lo.std()),
        max_rms=float(hi.mean()),
        max_rms_std=float(hi.std()),
        final_rms=float(fin.mean()),
        final_rms_std=float(fin.std()),
        steps_to_threshold=float(reached.mean()) if reached.size else None,
        steps_std=float(reached.std()) if reached.size else None,
        reach_fraction=reached.size / len(series),
        n_trajectories=len(series),
        threshold=float(threshold),
        per_trajectory_steps=steps,
    )


SUMMARY_COLUMNS = [
    "method",
    "best_rms",
    "best_rms_std",
    "worst_rms",
    "worst_rms_std",
    "final_rms",
    "final_rms_std",
    "steps_to_threshold",
    "steps_std",
    "reach_fraction",
    "n_trajectories",
    "threshold",
]


def _num(x) -> str:
    return "N/A" if x is None else repr(float(x))


def write_summary(path, name: str, m: MetricsSummary) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerow(
            [
                name,
                _num(m.min_rms),
                _num(m.min_rms_std),
                _num(m.max_rms),
                _num(m.max_rms_std),
                _num(m.final_rms),
                _num(m.final_rms_std),
                _num(m.steps_to_threshold),
                _num(m.steps_std),
                _num(m.reach_fraction),
                m.n_trajectories,
                _num(m.threshold),
            ]
        )


def read_summary(path) -> tuple[str, MetricsSummary]:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != 1 or set(rows[0]) != set(SUMMARY_COLUMNS):
        raise ConfigError(f"{path} is not a summary file")
    r = rows[0]

    def val(key):
        return None if r[key] == "N/A" else float(r[key])

    m = MetricsSummary(
        val("best_rms"),
        val("best_rms_std"),
        val("worst_rms"),
        val("worst_rms_std"),
        val("final_rms"),
        val("final_rms_std"),
        val("steps_to_threshold"),
        val("steps_std"),
        val("reach_fraction"),
        int(r["n_trajectories"]),
        val("threshold"),
    )
    return r["method"], m


def compare_report(summaries, path=None) -> str:
    """Render the comparison table; the best value of every column is starred.

    ``summaries`` is a mapping or a sequence of ``(name, MetricsSummary)``.
    When ``path`` is given the table is written there, and a CSV twin next to
    it with the same stem.
    """
    items = list(summaries.items()) if isinstance(summaries, Mapping) else list(summaries)
    if not items:
        raise ValueError("compare_report needs at least one summary")
    threshold = items[0][1].threshold
    headers = ["Method", "Best state RMS", "Worst state RMS", "Final state RMS", f"Steps to reach {threshold:g}"]
    cols = [
        [m.min_rms for _, m in items],
        [m.max_rms for _, m in items],
        [m.final_rms for _, m in items],
        [m.steps_to_threshold for _, m in items],
    ]
    best = []
    for values in cols:
        present = [v for v in values if v is not None]
        best.append(min(present) if present else None)

    def cell(v, b, fmt):
        if v is None:
            return "N/A"
        text = fmt(v)
        return text + " *" if len(items) > 1 and v == b else text

    rows = []
    for i, (name, _) in enumerate(items):
        rows.append(
            [
                name,
                cell(cols[0][i], best[0], lambda v: f"{v:.6g}"),
                cell(cols[1][i], best[1], lambda v: f"{v:.6g}"),
                cell(cols[2][i], best[2], lambda v: f"{v:.6g}"),
                cell(cols[3][i], best[3], lambda v: f"{v:.1f}"),
            ]
        )
    widths = [max(len(r[c]) for r in [headers] + rows) for c in range(len(headers))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(x.ljust(w) for x, w in zip(r, widths)).rstrip() for r in rows]
    if len(items) > 1:
        lines.append("(* best in column)")
    text = "\n".join(lines) + "\n"
    if path is not None:
        path = Path(path)
        path.write_text(text)
        with open(path.with_suffix(".csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(headers)
            for name, m in items:
                w.writerow([name, _num(m.min_rms), _num(m.max_rms), _num(m.final_rms), _num(m.steps_to_threshold)])
    return text


# -- controller construction -------------------------------------------------


def nominal_orm(env: EnvConfig) -> np.ndarray:
    return generate_orm(env.dim, env.cond_number, env.seed)


def _policy_dims(dim: int, hidden) -> list[int]:
    return [dim, *[int(h) for h in hidden], dim]


def _load_policy(path, dim: int) -> MlpParams:
    p, _ = load_checkpoint(path)
    dims = p.layer_dims
    if dims[0] != dim or dims[-1] != dim:
        raise DimensionError(f"checkpoint {path} maps {dims[0]} -> {dims[-1]}, environment has dim {dim}")
    return p


def supervised_dataset(cfg: ExperimentConfig, seed: int) -> LabeledDataset:
    spec = cfg.supervised
    if spec.recipe == "archive":
        d = ingest_dataset(spec.dataset_path)
        if d.dim != cfg.env.dim:
            raise DimensionError(f"dataset dim {d.dim} does not match environment dim {cfg.env.dim}")
        return d
    r = nominal_orm(cfg.env)
    if spec.recipe == "svd_labels":
        lam = cfg.svd.lam if spec.label_lambda is None else spec.label_lambda
        gain = cfg.svd.gain if spec.label_gain is None else spec.label_gain
        return gen_dataset_svd_labels(cfg.env, r, lam, spec.n_samples, seed, gain=gain)
    env = RingEnv(cfg.env, r_a=r, r_b=r, rng_seed=seed, keep_states=False)
    return gen_dataset_forward(env, spec.action_sigma, spec.n_samples, seed)


def train_supervised_policy(cfg: ExperimentConfig, seed: int, dataset: LabeledDataset | None = None):
    spec = cfg.supervised
    if dataset is None:
        dataset = supervised_dataset(cfg, seed)
    p = mlp_init(_policy_dims(cfg.env.dim, spec.hidden), seed)
    st = AdamState.for_params(p, lr=spec.lr)
    return train_supervised(p, dataset, spec.epochs, spec.batch_size, st, seed, action_scale=spec.action_scale) + (st,)


def pretrain_mbrl_policy(cfg: ExperimentConfig, seed: int):
    """Trajectory optimization against the nominal ORM. Returns ``(params, history, adam)``."""
    spec = cfg.mbrl
    p = mlp_init(_policy_dims(cfg.env.dim, spec.hidden), seed)
    st = AdamState.for_params(p, lr=spec.lr)
    model = LinearModel(nominal_orm(cfg.env))
    p, hist = train_policy(p, model, spec.rollout(), cfg.env.init_rms, st, seed, action_scale=spec.action_scale)
    return p, hist, st


@dataclass
class PreparedMethod:
    """Everything a campaign needs to instantiate a controller per trajectory."""

    name: str
    svd: SvdController | None = None
    policy: MlpParams | None = None
    action_scale: float = 1.0
    adam: AdamState | None = None


def prepare_method(cfg: ExperimentConfig, method: str, policy: MlpParams | None = None, adam: AdamState | None = None) -> PreparedMethod:
    """Build or load the controller of ``method``; trains it when no checkpoint is available."""
    dim = cfg.env.dim
    if method == "svd":
        return PreparedMethod("svd", svd=SvdController(nominal_orm(cfg.env), cfg.svd.lam, cfg.svd.gain))
    if method == "supervised":
        spec = cfg.supervised
        if policy is None and spec.checkpoint:
            policy = _load_policy(spec.checkpoint, dim)
        if policy is None:
            policy, _, _ = train_supervised_policy(cfg, cfg.seed)
        return PreparedMethod("supervised", policy=policy, action_scale=spec.action_scale)
    if method == "mbrl":
        spec = cfg.mbrl
        if policy is None and spec.checkpoint:
            policy, adam = load_checkpoint(spec.checkpoint)
            if policy.layer_dims[0] != dim or policy.layer_dims[-1] != dim:
                raise DimensionError(f"checkpoint {spec.checkpoint} does not match environment dim {dim}")
        if policy is None:
            policy, _, adam = pretrain_mbrl_policy(cfg, cfg.seed)
        return PreparedMethod("mbrl", policy=policy, action_scale=spec.action_scale, adam=adam)
    raise ConfigError(f"unknown method {method!r}")


def _controller_for(cfg: ExperimentConfig, prep: PreparedMethod, seed: int):
    if prep.svd is not None:
        return prep.svd
    if prep.name == "mbrl" and cfg.mbrl.adaptive:
        adam = prep.adam.copy() if prep.adam is not None else None
        if adam is not None and cfg.mbrl.retrain_lr is not None:
            adam.lr = cfg.mbrl.retrain_lr
        ctl = AdaptiveMbrlController(
            prep.policy,
            LinearModel(nominal_orm(cfg.env)),
            cfg.mbrl.adaptive_config(cfg.env.init_rms),
            action_scale=prep.action_scale,
            adam=adam,
            seed=seed,
        )
        if adam is None and cfg.mbrl.retrain_lr is not None:
            ctl.adam.lr = cfg.mbrl.retrain_lr
        return ctl
    return PolicyController(prep.policy, prep.action_scale)


# -- campaigns ----------------------------------------------------------------


@dataclass
class TrajectoryResult:
    index: int
    seed: int
    rms_series: np.ndarray
    final_observation: np.ndarray
    events: list = field(default_factory=list)
    log: TrajectoryLog | None = None


def run_trajectory(cfg: ExperimentConfig, prep: PreparedMethod, index: int, seed: int, r_nominal=None) -> TrajectoryResult:
    r_a = nominal_orm(cfg.env) if r_nominal is None else r_nominal
    r_b = perturb_orm(r_a, cfg.env.drift_fraction, seed)
    env = RingEnv(cfg.env, r_a=r_a, r_b=r_b, rng_seed=seed, keep_states=cfg.full_logs)
    ctl = _controller_for(cfg, prep, seed)
    if isinstance(ctl, AdaptiveMbrlController):
        trace, info = adaptive_loop(env, ctl, cfg.trajectory_length)
        events = info["events"]
    else:
        s = env.reset()
        for _ in range(cfg.trajectory_length):
            s = env.step(ctl.act(s))
        trace, events = env.log, []
    return TrajectoryResult(
        index, seed, trace.rms_series, trace.last_observation.copy(), events, trace if cfg.full_logs else None
    )


def run_campaign(cfg: ExperimentConfig, prep: PreparedMethod) -> list[TrajectoryResult]:
    r_a = nominal_orm(cfg.env)
    seeds = trajectory_seeds(cfg.seed, cfg.n_trajectories)
    return [run_trajectory(cfg, prep, i, s, r_a) for i, s in enumerate(seeds)]


def rms_curve(results: list[TrajectoryResult]) -> tuple[np.ndarray, np.ndarray]:
    stack = np.vstack([r.rms_series for r in results])
    return stack.mean(axis=0), stack.std(axis=0)


def write_campaign(out_dir, name: str, cfg: ExperimentConfig, results: list[TrajectoryResult]) -> MetricsSummary:
    """Write the RMS curve, per-trajectory CSVs, final BPM readings, events and the summary."""
    out = Path(out_dir)
    tdir = out / f"{name}_trajectories"
    tdir.mkdir(parents=True, exist_ok=True)
    mean, std = rms_curve(results)
    with open(out / f"{name}_rms_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "mean_rms", "std_rms"])
        for k, (m, s) in enumerate(zip(mean, std)):
            w.writerow([k, repr(float(m)), repr(float(s))])
    for r in results:
        with open(tdir / f"traj_{r.index:04d}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "rms"])
            for k, v in enumerate(r.rms_series):
                w.writerow([k, repr(float(v))])
        if r.log is not None:
            r.log.write_csv(tdir / f"traj_{r.index:04d}_log.csv")
    with open(out / f"{name}_final_states.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trajectory", "seed"] + [f"s_{i}" for i in range(cfg.env.dim)])
        for r in results:
            w.writerow([r.index, r.seed] + [repr(float(x)) for x in r.final_observation])
    with open(out / f"{name}_events.log", "w") as fh:
        fh.write(f"method {name} trajectories {len(results)} length {cfg.trajectory_length} seed {cfg.seed}\n")
        for r in results:
            for ev in r.events:
                fh.write(
                    f"traj {r.index} step {ev.step} refit {ev.model_kind} residual {ev.residual!r} "
                    f"transitions {ev.n_transitions} status {ev.status}\n"
                )
    summary = compute_metrics([r.rms_series for r in results], cfg.rms_threshold)
    write_summary(out / f"{name}_summary.csv", name, summary)
    return summary


def run_experiment(cfg: ExperimentConfig, out_dir=None, prepared: Mapping[str, PreparedMethod] | None = None) -> dict[str, MetricsSummary]:
    """Run every configured method and write its artifacts (plus a comparison report)."""
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prepared = dict(prepared or {})
    for method in cfg.methods:
        if method not in prepared:
            prepared[method] = prepare_method(cfg, method)
        _check_dims(cfg, prepared[method])
    summaries = {}
    for method in cfg.methods:
        prep = prepared[method]
        log.info("running %s: %d x %d", method, cfg.n_trajectories, cfg.trajectory_length)
        results = run_campaign(cfg, prep)
        summaries[method] = write_campaign(out, method, cfg, results)
    compare_report(summaries, out / "report.txt")
    return summaries


def _check_dims(cfg: ExperimentConfig, prep: PreparedMethod) -> None:
    dim = cfg.env.dim
    if prep.svd is not None and prep.svd.dim != dim:
        raise ConfigError(f"SVD controller has dim {prep.svd.dim}, environment has {dim}")
    if prep.policy is not None and prep.policy.layer_dims[0] != dim:
        raise ConfigError(f"policy has input dim {prep.policy.layer_dims[0]}, environment has {dim}")
