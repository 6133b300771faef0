"""Experiment command line.

Subcommands: train, probe, spectrum, fig1a, fig1b, fig1c, fig1d, scaling,
chaos.  Every scenario key in docs/config.md can be set in a flat
`key = value` config file and overridden by the flag of the same name.
Exit code 0 on success, 2 on numerical abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .activations import get_activation
from .dynamics import TrainConfig
from .ensembles import PiConfig
from .landscape import probe_report
from .objective import reduced_loss
from .quadrature import SingularFeatureCovariance, draw_eval_set
from .serialize import ensure_dir, load_ensemble, parse_config, write_json
from .spectral import eigen, hessian_matrix, subsample_uniform
from .dynamics import grad_field
from . import scenarios as scn_mod
from .scenarios import Scenario

_SCENARIO_FIELDS = {f.name: f.type for f in dataclasses.fields(Scenario)
                    if f.name not in ("train",)}
_TRAIN_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)
                 if f.name not in ("seed", "pi")}
_PI_FIELDS = {"pi_a_scale": float, "pi_w_std": float, "pi_antithetic": bool}


def _coerce(name: str, raw: str):
    if name in ("name", "eval_dist", "mode", "activation", "batch_mode", "w0_init"):
        return raw
    if name in ("project_a", "pi_antithetic"):
        return raw.lower() in ("1", "true", "yes", "on")
    if name == "eta_w":
        return None if raw.lower() in ("", "none") else float(raw)
    if name in ("seed", "k", "k_teacher", "d", "n_particles", "n_teacher",
                "teacher_rank", "eval_m", "tau", "max_steps", "window",
                "batch_size", "snapshot_every"):
        return int(raw)
    return float(raw)


def _all_keys():
    keys = dict(_SCENARIO_FIELDS)
    keys.update(_TRAIN_FIELDS)
    keys.update(_PI_FIELDS)
    return keys


def scenario_from_options(defaults: Scenario, options: dict) -> Scenario:
    """Apply string-valued config/flag overrides onto a default scenario."""
    scn_kwargs = {}
    train_kwargs = {}
    pi_kwargs = {}
    for key, raw in options.items():
        if raw is None:
            continue
        value = _coerce(key, raw) if isinstance(raw, str) else raw
        if key in _SCENARIO_FIELDS:
            scn_kwargs[key] = value
        elif key in _TRAIN_FIELDS:
            train_kwargs[key] = value
        elif key in _PI_FIELDS:
            pi_kwargs[key[3:]] = value
        else:
            raise ValueError(f"unknown config key {key!r}")
    pi = dataclasses.replace(defaults.train.pi, **pi_kwargs) if pi_kwargs else defaults.train.pi
    train = dataclasses.replace(defaults.train, pi=pi, **train_kwargs)
    return dataclasses.replace(defaults, train=train, **scn_kwargs)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value scenario file")
    p.add_argument("--seed", type=int, help="master seed (mandatory here or in the config)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--mode", help="training mode: attention | static | modified")
    p.add_argument("--quadrature-size", type=int, dest="quadrature_size",
                   help="number of quadrature nodes (eval_m)")
    for key in sorted(_all_keys()):
        if key in ("name", "seed", "mode", "eval_m"):
            continue
        p.add_argument(f"--{key.replace('_', '-')}", dest=f"opt_{key}")


def _collect_options(args) -> dict:
    options = {}
    if args.config:
        options.update(parse_config(args.config))
    for key in _all_keys():
        raw = getattr(args, f"opt_{key}", None)
        if raw is not None:
            options[key] = raw
    if args.mode is not None:
        options["mode"] = args.mode
    if args.quadrature_size is not None:
        options["eval_m"] = args.quadrature_size
    if args.seed is not None:
        options["seed"] = args.seed
    if "seed" not in options:
        raise SystemExit("a master seed is mandatory: pass --seed or set seed in the config")
    return options


_DEFAULT_BUILDERS = {
    "train": scn_mod.fig1a_scenario,
    "fig1a": scn_mod.fig1a_scenario,
    "fig1b": scn_mod.fig1b_scenario,
    "fig1c": scn_mod.fig1c_scenario,
    "fig1d": scn_mod.fig1d_scenario,
    "scaling": scn_mod.scaling_scenario,
    "chaos": scn_mod.chaos_scenario,
}


def _build_scenario(cmd: str, args) -> Scenario:
    options = _collect_options(args)
    seed = int(options.pop("seed"))
    defaults = _DEFAULT_BUILDERS[cmd](seed)
    if cmd == "train":
        defaults = dataclasses.replace(defaults, name="train")
    return scenario_from_options(defaults, options)


def cmd_train(args) -> int:
    scn = _build_scenario("train", args)
    result = scn_mod.run_train(scn, args.out)
    print(result["csv"])
    return 2 if result["aborted"] else 0


def cmd_figure(cmd, runner):
    def run(args) -> int:
        scn = _build_scenario(cmd, args)
        print(runner(scn, args.out))
        return 0
    return run


def cmd_probe(args) -> int:
    mu = load_ensemble(args.ensemble)
    teacher = load_ensemble(args.teacher)
    act = get_activation(args.activation)
    es = draw_eval_set(args.seed, args.quadrature_size or 4096, mu.d)
    report = probe_report(mu, teacher, es, act, delta=args.delta)
    ensure_dir(args.out)
    path = os.path.join(args.out, "probe.json")
    write_json(path, report.to_dict())
    print(path)
    return 0


def cmd_spectrum(args) -> int:
    mu = load_ensemble(args.ensemble)
    teacher = load_ensemble(args.teacher)
    act = get_activation(args.activation)
    es = draw_eval_set(args.seed, args.quadrature_size or 2048, mu.d)
    rng = np.random.default_rng(args.seed)
    mu = subsample_uniform(mu, args.n_spec, rng)
    op = hessian_matrix(mu, teacher, es, args.eps_h, act)
    ga, gw = grad_field(mu, teacher, es, act)
    report = eigen(op, np.concatenate([ga, gw], axis=1))
    ensure_dir(args.out)
    path = os.path.join(args.out, "spectrum.json")
    payload = report.to_dict()
    payload["symmetry_defect"] = op.symmetry_defect()
    write_json(path, payload)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icfl",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    for cmd, runner in (("train", None),
                        ("fig1a", scn_mod.run_fig1a),
                        ("fig1b", scn_mod.run_fig1b),
                        ("fig1c", scn_mod.run_fig1c),
                        ("fig1d", scn_mod.run_fig1d),
                        ("scaling", scn_mod.finite_width_scaling),
                        ("chaos", scn_mod.chaos_experiment)):
        p = sub.add_parser(cmd)
        _add_common(p)
        p.set_defaults(func=cmd_train if cmd == "train" else cmd_figure(cmd, runner))

    p = sub.add_parser("probe", help="landscape probe of an ensemble snapshot")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--quadrature-size", type=int, dest="quadrature_size")
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--activation", default="sigmoid")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("spectrum", help="Hessian-kernel spectrum of a snapshot")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--teacher", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--quadrature-size", type=int, dest="quadrature_size")
    p.add_argument("--n-spec", type=int, default=200, dest="n_spec")
    p.add_argument("--eps-h", type=float, default=1e-5, dest="eps_h")
    p.add_argument("--activation", default="sigmoid")
    p.set_defaults(func=cmd_spectrum)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FloatingPointError, SingularFeatureCovariance) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
