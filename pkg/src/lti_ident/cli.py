"""Command-line entry point: lti-ident {simulate,design,fit,sysid,mcc,experiment}."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import harness
from .environments import (
    EnvironmentSpec,
    TrajectorySet,
    design_max_variability,
    generate_dataset,
    sample_means,
    sample_random_design,
    variability_matrix,
)
from .errors import LTIError
from .estimator import FitConfig, LinearDecoder, center, fit, predict_controls
from .metrics import mcc, transfer_equivalence
from .physical import DcMotorParams, dc_motor
from .sysid import ho_kalman
from .systems import StateSpace, discretize, markov_params


def _str2bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2))


def _load_system(args) -> StateSpace:
    if args.system == "dc_motor":
        return discretize(dc_motor(DcMotorParams()), args.dt)
    if args.system == "random":
        return harness.sample_system(args.d_x, args.d_u, args.d_y or args.d_u, args.seed)
    return StateSpace.from_dict(_read_json(args.system))


def _fit_config_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("fit options")
    for f in fields(FitConfig):
        conv = _str2bool if f.type in (bool, "bool") else type(f.default)
        g.add_argument(f"--{f.name}", type=conv, default=None)


def _fit_config_from(args) -> FitConfig:
    given = {f.name: getattr(args, f.name) for f in fields(FitConfig) if getattr(args, f.name) is not None}
    return FitConfig(**given)


def cmd_simulate(args):
    sys_ = _load_system(args)
    specs = [EnvironmentSpec.from_dict(d) for d in _read_json(args.design)["environments"]]
    data = generate_dataset(sys_, specs, args.steps, args.obs_noise_var, args.seed)
    out = data.save(args.out)
    _write_json(Path(args.out) / "system.json", sys_.to_dict())
    print(f"wrote {len(specs)} trajectories to {out} (fingerprint {data.fingerprint()})")


def cmd_design(args):
    E = args.n_envs or args.d_u + 1
    means = sample_means(E, args.d_u, args.seed) if args.nonzero_mean else None
    if args.design == "max_variability":
        specs = design_max_variability(args.d_u, means=means)
    else:
        specs = sample_random_design(args.d_u, E, (args.low, args.high), args.seed, means)
    diag = variability_matrix(specs)
    doc = {
        "environments": [s.to_dict() for s in specs],
        "column_rank": diag.column_rank,
        "condition_number": diag.condition_number,
    }
    if args.out:
        _write_json(args.out, doc)
    print(f"{len(specs)} environments, rank(delta) = {diag.column_rank}/{args.d_u}, "
          f"cond = {diag.condition_number:.4g}")


def cmd_fit(args):
    data = TrajectorySet.load(args.dataset)
    known = [s.mean for s in data.specs] if args.known_means else None
    data, _ = center(data, known)
    cfg = _fit_config_from(args)
    decoder, report = fit(data.fit_view(), cfg)
    decoder.save(args.out, cfg, data.fingerprint())
    print(f"loss {report.initial_loss:.6g} -> {report.final_loss:.6g} "
          f"(best epoch {report.best_epoch}/{report.epochs_run}, {report.wall_time:.1f}s)")


def cmd_sysid(args):
    sys_ = _load_system(args)
    d_x = args.order or sys_.d_x
    T1 = args.T1 or d_x
    T2 = args.T2 or d_x
    mp = markov_params(sys_, T1 + T2 + 1)
    res = ho_kalman(mp, d_x, T1, T2)
    eq = transfer_equivalence(sys_, res.sys, tol=1e-7)
    if args.out:
        _write_json(args.out, {**res.sys.to_dict(), "singular_values": res.singular_values.tolist()})
    print("hankel singular values:", np.array2string(res.singular_values, precision=4))
    print(f"transfer-function match: {eq.equivalent} (max rel error {eq.max_rel_error:.3g})")


def cmd_mcc(args):
    data = TrajectorySet.load(args.dataset)
    if args.known_means:
        data, _ = center(data, [s.mean for s in data.specs])
    decoder = LinearDecoder.load(args.decoder)
    u_hat = np.vstack([predict_controls(decoder, tr.y) for tr in data.trajectories])
    u = np.vstack([tr.u for tr in data.trajectories])
    rep = mcc(u, u_hat)
    print(f"mcc {rep.mcc:.6f} permutation {rep.permutation.tolist()} "
          f"per-component {np.round(rep.per_component_corr, 6).tolist()}")


def cmd_experiment(args, overrides):
    # precedence: kind preset < config file < command-line overrides
    from_file = harness.load_config(args.config) if args.config else {}
    kind = overrides.get("kind") or from_file.get("kind") or args.kind
    flat = harness.preset(kind) if kind else {}
    flat.update(from_file)
    flat.update(overrides)
    cfg = harness.ExperimentConfig.from_flat(flat)
    rows = harness.run_experiment(cfg, persist=not args.no_save)
    for r in rows:
        status = "DIVERGED " + r.error if r.diverged else f"train {r.train_mcc:.4f} val {r.val_mcc:.4f}"
        print(f"seed {r.seed}: {status} ({r.wall_time:.1f}s)")
    print(harness.emit_table(rows), end="")


def _parse_overrides(tokens) -> dict:
    """Turn ``--field value`` pairs into a flat config dict (values parsed as YAML)."""
    import yaml

    out, i = {}, 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise SystemExit(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        elif i + 1 < len(tokens):
            val = tokens[i + 1]
            i += 2
        else:
            raise SystemExit(f"missing value for --{key}")
        parsed = yaml.safe_load(val)
        if key == "seeds" and isinstance(parsed, str):
            parsed = [int(s) for s in parsed.split(",")]
        elif key == "seeds" and isinstance(parsed, int):
            parsed = [parsed]
        out[key] = parsed
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lti-ident", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def system_args(sp):
        sp.add_argument("--system", default="random",
                        help="system JSON path, 'dc_motor' or 'random' (default)")
        sp.add_argument("--d_x", type=int, default=2)
        sp.add_argument("--d_u", type=int, default=2)
        sp.add_argument("--d_y", type=int, default=None)
        sp.add_argument("--dt", type=float, default=1e-2)
        sp.add_argument("--seed", type=int, default=0)

    sp = sub.add_parser("simulate", help="generate a multi-environment dataset")
    system_args(sp)
    sp.add_argument("--design", required=True, help="design JSON written by 'design'")
    sp.add_argument("--steps", type=int, default=12000)
    sp.add_argument("--obs_noise_var", type=float, default=0.0)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("design", help="build environment designs and report variability")
    sp.add_argument("--d_u", type=int, required=True)
    sp.add_argument("--design", choices=harness.DESIGNS, default="max_variability")
    sp.add_argument("--n_envs", type=int, default=None)
    sp.add_argument("--low", type=float, default=0.1)
    sp.add_argument("--high", type=float, default=1.0)
    sp.add_argument("--nonzero_mean", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("fit", help="fit a linear decoder to a stored dataset")
    sp.add_argument("dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--known_means", action="store_true",
                    help="use the design's control means in the likelihood")
    _fit_config_args(sp)

    sp = sub.add_parser("sysid", help="Ho-Kalman realization from exact Markov parameters")
    system_args(sp)
    sp.add_argument("--order", type=int, default=None)
    sp.add_argument("--T1", type=int, default=None)
    sp.add_argument("--T2", type=int, default=None)
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("mcc", help="score a decoder against a dataset's true controls")
    sp.add_argument("dataset")
    sp.add_argument("decoder")
    sp.add_argument("--known_means", action="store_true")

    sp = sub.add_parser(
        "experiment",
        help="run a seeded experiment grid",
        description="Any config field may be overridden with --<field_name> <value>.",
    )
    sp.add_argument("--config", default=None, help="flat YAML/JSON config")
    sp.add_argument("--kind", choices=harness.KINDS, default=None,
                    help="start from the preset for this kind")
    sp.add_argument("--no_save", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if rest and args.verb != "experiment":
        parser.error(f"unrecognized arguments: {' '.join(rest)}")
    try:
        if args.verb == "experiment":
            cmd_experiment(args, _parse_overrides(rest))
        else:
            {"simulate": cmd_simulate, "design": cmd_design, "fit": cmd_fit,
             "sysid": cmd_sysid, "mcc": cmd_mcc}[args.verb](args)
    except (LTIError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
