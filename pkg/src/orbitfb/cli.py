"""Command-line driver: ``orbitfb <subcommand> --config cfg.yaml --seed N --out DIR``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import harness
from .env import RingEnv, perturb_orm
from .errors import ConfigError, DimensionError, NumericalError, ParseError
from .harness import ExperimentConfig
from .linalg import read_matrix, write_matrix
from .mbrl import fit_residual, forward_model_init, refit_linear_model, train_forward_model
from .neural import AdamState, load_checkpoint, save_checkpoint
from .supervised import ingest_dataset, write_dataset
from .trajectory import TrajectoryLog

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("orbitfb")


def _write_history(path: Path, column: str, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", column])
        for i, v in enumerate(values):
            w.writerow([i, repr(float(v))])


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_yaml(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def cmd_gen_orm(cfg: ExperimentConfig, out: Path, args) -> None:
    r_a = harness.nominal_orm(cfg.env)
    r_b = perturb_orm(r_a, cfg.env.drift_fraction, cfg.seed)
    write_matrix(out / "orm_a.txt", r_a)
    write_matrix(out / "orm_b.txt", r_b)


def cmd_gen_dataset(cfg: ExperimentConfig, out: Path, args) -> None:
    d = harness.supervised_dataset(cfg, cfg.seed)
    write_dataset(out / "dataset.csv", d)


def cmd_train_supervised(cfg: ExperimentConfig, out: Path, args) -> None:
    dataset = ingest_dataset(args.dataset) if args.dataset else None
    p, hist, st = harness.train_supervised_policy(cfg, cfg.seed, dataset)
    save_checkpoint(out / "supervised_policy.ckpt", p, st)
    _write_history(out / "supervised_loss.csv", "loss", hist)


def cmd_train_policy(cfg: ExperimentConfig, out: Path, args) -> None:
    p, hist, st = harness.pretrain_mbrl_policy(cfg, cfg.seed)
    save_checkpoint(out / "mbrl_policy.ckpt", p, st)
    _write_history(out / "policy_loss.csv", "loss", hist)


def _exploration_log(cfg: ExperimentConfig, n: int, sigma: float) -> TrajectoryLog:
    """Random Gaussian kicks on a fresh machine; used when no log is supplied."""
    env = RingEnv(cfg.env, rng_seed=cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1001])
    env.reset()
    for _ in range(n):
        env.step(sigma * rng.standard_normal(env.dim))
    return env.log


def cmd_fit_model(cfg: ExperimentConfig, out: Path, args) -> None:
    if args.log:
        data = TrajectoryLog.read_csv(args.log)
    else:
        data = _exploration_log(cfg, args.transitions, args.action_sigma)
        data.write_csv(out / "exploration_log.csv")
    kind = args.model_kind or cfg.mbrl.model_kind
    if kind == "linear":
        model = refit_linear_model(data)
        write_matrix(out / "orm_fit.txt", model.r)
        history = []
    else:
        f = forward_model_init(data.dim, cfg.seed, cfg.mbrl.hidden)
        st = AdamState.for_params(f, lr=cfg.mbrl.lr)
        model, history = train_forward_model(f, data, cfg.mbrl.forward_epochs, st, cfg.seed)
        save_checkpoint(out / "forward_model.ckpt", model.params, st)
        (out / "forward_model_scales.txt").write_text(
            f"s_scale {model.s_scale!r}\na_scale {model.a_scale!r}\nout_scale {model.out_scale!r}\n"
        )
        _write_history(out / "forward_model_loss.csv", "loss", history)
    residual = fit_residual(model, data)
    with open(out / "fit_events.log", "w") as fh:
        fh.write(f"step {len(data)} model {kind} residual {residual!r} transitions {len(data)}\n")


def cmd_simulate(cfg: ExperimentConfig, out: Path, args) -> None:
    prepared = {}
    for method, path in (("mbrl", args.policy), ("supervised", args.supervised_policy)):
        if path is None:
            continue
        if method not in cfg.methods:
            raise ConfigError(f"a {method} checkpoint was given but '{method}' is not in methods")
        p, st = load_checkpoint(path)
        prepared[method] = harness.prepare_method(cfg, method, policy=p, adam=st)
    summaries = harness.run_experiment(cfg, out, prepared)
    sys.stdout.write(harness.compare_report(summaries))


def cmd_report(cfg: ExperimentConfig, out: Path, args) -> None:
    paths = list(args.summaries)
    if not paths:
        paths = sorted(Path(args.input or out).glob("*_summary.csv"))
    if not paths:
        raise ConfigError("no summary files given or found")
    items = [harness.read_summary(p) for p in paths]
    sys.stdout.write(harness.compare_report(items, out / "report.txt"))


COMMANDS = {
    "gen-orm": (cmd_gen_orm, "write the nominal ORM and its drift target"),
    "gen-dataset": (cmd_gen_dataset, "generate a supervised dataset (recipe from the config)"),
    "train-supervised": (cmd_train_supervised, "train the supervised baseline policy"),
    "train-policy": (cmd_train_policy, "pre-train the model-based policy on the nominal ORM"),
    "fit-model": (cmd_fit_model, "fit a linear or neural system model from transitions"),
    "simulate": (cmd_simulate, "run trajectory campaigns for the configured methods"),
    "report": (cmd_report, "render the comparison table from summary CSVs"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orbitfb", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", type=Path, help="YAML experiment config (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, help="master seed, overrides the config")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        if name == "train-supervised":
            sp.add_argument("--dataset", type=Path, help="train on this dataset CSV instead of generating one")
        if name == "fit-model":
            sp.add_argument("--log", type=Path, help="trajectory log CSV to fit")
            sp.add_argument("--model-kind", choices=["linear", "neural"])
            sp.add_argument("--transitions", type=int, default=2000, help="exploration steps when no log is given")
            sp.add_argument("--action-sigma", type=float, default=0.05)
        if name == "simulate":
            sp.add_argument("--policy", type=Path, help="pre-trained model-based policy checkpoint")
            sp.add_argument("--supervised-policy", type=Path, help="trained supervised policy checkpoint")
        if name == "report":
            sp.add_argument("summaries", nargs="*", type=Path, help="summary CSV files")
            sp.add_argument("--input", type=Path, help="directory to search for *_summary.csv")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handler, _ = COMMANDS[args.command]
    try:
        cfg = _load_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        handler(cfg, args.out, args)
    except (ConfigError, DimensionError, ParseError, FileNotFoundError, yaml.YAMLError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
