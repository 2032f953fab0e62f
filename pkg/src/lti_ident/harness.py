"""Seeded experiment runner: builds systems and designs, generates data,
fits decoders, scores MCC and writes per-seed artifacts and result tables."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np
import yaml

from .environments import (
    design_max_variability,
    generate_dataset,
    sample_means,
    sample_random_design,
    split_trajectory_set,
)
from .errors import ConfigError, DegenerateDecoderError, DivergenceError, LTIError
from .estimator import FitConfig, center, fit, predict_controls
from .metrics import mcc
from .physical import DcMotorParams, dc_motor
from .systems import StateSpace, discretize, validate_system

logger = logging.getLogger(__name__)

KINDS = ("dc_motor", "table1_cell", "table3_cell", "custom")
DESIGNS = ("max_variability", "random_uniform")
OUTPUT_DIR_ENV = "LTI_IDENT_OUTPUT_DIR"
RESULT_SCHEMA_VERSION = 1
FACTORS = ("kind", "d_u", "design", "B_identity", "C_identity", "control_mean_nonzero", "obs_noise_var")

SPECTRAL_RADIUS = 0.9
MAX_CONDITION = 100.0
MAX_SAMPLE_ATTEMPTS = 100


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV, "runs"))


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "table1_cell"
    d_u: int = 2
    design: str = "max_variability"
    B_identity: bool = False
    C_identity: bool = False
    control_mean_nonzero: bool = True
    obs_noise_var: float = 0.0
    steps_per_env: int = 12000
    fit: FitConfig = FitConfig()
    seeds: tuple = (0, 1, 2, 3, 4)
    output_dir: Optional[str] = None
    # secondary knobs; None means "derive from kind"
    n_envs: Optional[int] = None
    d_x: Optional[int] = None
    d_y: Optional[int] = None
    variance_low: float = 0.1
    variance_high: float = 1.0
    dt: float = 1e-2
    val_fraction: float = 0.1
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.design not in DESIGNS:
            raise ConfigError(f"unknown design {self.design!r}; expected one of {DESIGNS}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be unsigned")
        if self.d_u < 1 or self.steps_per_env < 2:
            raise ConfigError("d_u must be >= 1 and steps_per_env >= 2")
        if self.obs_noise_var < 0:
            raise ConfigError("obs_noise_var must be nonnegative")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.kind == "dc_motor":
            if self.d_u != 1:
                raise ConfigError("the DC motor has a single input; set d_u = 1")
            if self.design == "max_variability":
                raise ConfigError("dc_motor uses the random_uniform design")
        if self.kind in ("table1_cell", "table3_cell") and (self.d_x or self.d_y):
            if (self.d_x or self.d_u) != self.d_u or (self.d_y or self.d_u) != self.d_u:
                raise ConfigError(f"{self.kind} requires d_x = d_y = d_u")
        if self.design == "max_variability" and self.n_envs not in (None, self.d_u + 1):
            raise ConfigError("max_variability fixes n_envs = d_u + 1")
        if self.n_envs is not None and self.n_envs < self.d_u + 1:
            raise ConfigError("need at least d_u + 1 environments")

    @property
    def environments(self) -> int:
        return self.n_envs if self.n_envs is not None else (3 if self.kind == "dc_motor" else self.d_u + 1)

    def factors(self) -> dict:
        return {k: getattr(self, k) for k in FACTORS}

    def to_flat(self) -> dict:
        """Flat key/value form; FitConfig fields sit at the top level."""
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "fit"}
        out["seeds"] = list(self.seeds)
        out.update(asdict(self.fit))
        return out

    def fingerprint(self) -> str:
        """Hash of everything that affects results (not seeds, paths or workers)."""
        d = self.to_flat()
        for k in ("seeds", "output_dir", "workers"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_flat(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        own = {f.name for f in fields(cls)} - {"fit"}
        fit_keys = {f.name for f in fields(FitConfig)}
        unknown = set(d) - own - fit_keys
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            fit_cfg = FitConfig(**{k: v for k, v in d.items() if k in fit_keys})
            return cls(fit=fit_cfg, **{k: v for k, v in d.items() if k in own})
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc


def preset(kind: str, **overrides) -> dict:
    """Flat config with the published hyperparameters for each kind."""
    base = {
        "dc_motor": dict(
            kind="dc_motor", d_u=1, design="random_uniform", control_mean_nonzero=False,
            steps_per_env=5000, learning_rate=1e-2, epochs=50, batch_size=8,
        ),
        "table1_cell": dict(kind="table1_cell", steps_per_env=12000, epochs=4000),
        "table3_cell": dict(kind="table3_cell", design="random_uniform", steps_per_env=12000, epochs=4000),
        "custom": dict(kind="custom"),
    }
    if kind not in base:
        raise ConfigError(f"unknown experiment kind {kind!r}")
    return {**base[kind], **overrides}


def load_config(path) -> dict:
    """Read a flat YAML or JSON mapping."""
    with open(path) as fh:
        d = yaml.safe_load(fh)
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    nested = [k for k, v in d.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: config must be flat, found nested keys {nested}")
    return d


def sample_system(
    d_x: int,
    d_u: int,
    d_y: int,
    seed: int,
    B_identity: bool = False,
    C_identity: bool = False,
) -> StateSpace:
    """Random stable controllable/observable system.

    A is Gaussian rescaled to spectral radius 0.9. B and C are identity when
    flagged (square shapes only), else Gaussian with singular values clamped
    to at least 1/100 of the largest. Rejected draws are resampled from the
    same generator.
    """
    if B_identity and d_x != d_u:
        raise ConfigError("B_identity needs d_x = d_u")
    if C_identity and d_x != d_y:
        raise ConfigError("C_identity needs d_x = d_y")
    rng = np.random.default_rng([int(seed), 0x535953])

    def clamped(shape):
        U, s, Vt = np.linalg.svd(rng.standard_normal(shape), full_matrices=False)
        s = np.maximum(s, s[0] / MAX_CONDITION)
        return (U * s) @ Vt

    for _ in range(MAX_SAMPLE_ATTEMPTS):
        A = rng.standard_normal((d_x, d_x))
        rho = np.max(np.abs(np.linalg.eigvals(A)))
        B = np.eye(d_x) if B_identity else clamped((d_x, d_u))
        C = np.eye(d_x) if C_identity else clamped((d_y, d_x))
        if rho == 0:
            continue
        sys = StateSpace(A * (SPECTRAL_RADIUS / rho), B, C)
        if validate_system(sys).ok:
            return sys
    raise LTIError(f"no valid system after {MAX_SAMPLE_ATTEMPTS} draws (seed {seed})")


def build_system(cfg: ExperimentConfig, seed: int) -> StateSpace:
    if cfg.kind == "dc_motor":
        return discretize(dc_motor(DcMotorParams()), cfg.dt)
    d_x = cfg.d_x or cfg.d_u
    d_y = cfg.d_y or cfg.d_u
    return sample_system(d_x, cfg.d_u, d_y, seed, cfg.B_identity, cfg.C_identity)


def build_design(cfg: ExperimentConfig, seed: int):
    E = cfg.environments
    means = sample_means(E, cfg.d_u, seed) if cfg.control_mean_nonzero else None
    if cfg.design == "max_variability":
        return design_max_variability(cfg.d_u, means=means)
    return sample_random_design(cfg.d_u, E, (cfg.variance_low, cfg.variance_high), seed, means)


@dataclass(frozen=True)
class ResultRow:
    config_fingerprint: str
    seed: int
    train_mcc: float
    val_mcc: float
    final_loss: float
    wall_time: float
    factors: dict = field(default_factory=dict)
    diverged: bool = False
    error: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def comparable(self) -> dict:
        """Everything except wall time, for determinism checks."""
        d = self.to_dict()
        d.pop("wall_time")
        return d


def _pooled(decoder, data):
    uh = np.vstack([predict_controls(decoder, tr.y) for tr in data.trajectories])
    u = np.vstack([tr.u for tr in data.trajectories])
    return u, uh


def run_seed(cfg: ExperimentConfig, seed: int, out_dir: Optional[Path] = None) -> ResultRow:
    t0 = time.perf_counter()
    sys = build_system(cfg, seed)
    specs = build_design(cfg, seed)
    data = generate_dataset(sys, specs, cfg.steps_per_env, cfg.obs_noise_var, seed)
    known = [s.mean for s in specs] if cfg.control_mean_nonzero else None
    data, _ = center(data, known)
    train, val = split_trajectory_set(data, cfg.val_fraction)
    fit_cfg = replace(cfg.fit, seed=int(seed))

    row = dict(config_fingerprint=cfg.fingerprint(), seed=int(seed), factors=cfg.factors())
    try:
        decoder, report = fit(train.fit_view(), fit_cfg)
    except (DivergenceError, DegenerateDecoderError) as exc:
        logger.warning("seed %d diverged: %s", seed, exc)
        result = ResultRow(
            train_mcc=float("nan"), val_mcc=float("nan"), final_loss=float("nan"),
            wall_time=time.perf_counter() - t0, diverged=True, error=str(exc), **row,
        )
        decoder = None
    else:
        result = ResultRow(
            train_mcc=mcc(*_pooled(decoder, train)).mcc,
            val_mcc=mcc(*_pooled(decoder, val)).mcc,
            final_loss=report.final_loss,
            wall_time=time.perf_counter() - t0,
            **row,
        )

    if out_dir is not None:
        d = Path(out_dir) / f"seed_{seed:04d}"
        d.mkdir(parents=True, exist_ok=True)
        data.save(d / "dataset")
        (d / "system.json").write_text(json.dumps(sys.to_dict()))
        if decoder is not None:
            decoder.save(d / "decoder.json", fit_cfg, train.fingerprint())
        (d / "row.json").write_text(json.dumps(
            {"schema_version": RESULT_SCHEMA_VERSION, "dataset_fingerprint": data.fingerprint(),
             "system_fingerprint": sys.fingerprint(), **result.to_dict()},
            indent=2,
        ))
    return result


def _run_seed_args(args):
    return run_seed(*args)


def run_experiment(cfg: ExperimentConfig, persist: bool = True) -> list[ResultRow]:
    """Run every seed; rows come back (and are written) in seed order."""
    out_dir = None
    if persist:
        out_dir = Path(cfg.output_dir or default_output_dir()) / f"{cfg.kind}_{cfg.fingerprint()}"
        out_dir.mkdir(parents=True, exist_ok=True)
        meta = {"schema_version": RESULT_SCHEMA_VERSION, "config": cfg.to_flat(), "fingerprint": cfg.fingerprint()}
        if cfg.kind == "dc_motor":
            meta["motor_params"] = asdict(DcMotorParams())
            meta["note"] = "motor parameters are unit defaults, not measured values"
        elif cfg.kind != "custom":
            meta["note"] = (
                "system distribution is a documented choice; compare trends across cells, "
                "not individual cell values"
            )
        (out_dir / "experiment.json").write_text(json.dumps(meta, indent=2))

    jobs = [(cfg, s, out_dir) for s in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_run_seed_args, jobs))
    else:
        rows = [run_seed(*j) for j in jobs]

    if out_dir is not None:
        with open(out_dir / "rows.jsonl", "w") as fh:
            for r in rows:
                fh.write(json.dumps(r.to_dict()) + "\n")
        (out_dir / "table.csv").write_text(emit_table(rows))
    return rows


def _sort_key(key):
    # numbers sort numerically, anything else by its text
    return tuple((0, float(v), "") if isinstance(v, (int, float)) else (1, 0.0, str(v)) for v in key)


def emit_table(
    rows: Sequence[ResultRow],
    group_by: Optional[Sequence[str]] = None,
    metric: str = "val_mcc",
) -> str:
    """CSV with one line per factor combination: factors, mean_mcc, std_mcc,
    n_seeds, n_failed.

    Statistics cover the rows whose fit completed; std is the population
    std (ddof = 0). Lines are sorted by the factor tuple.
    """
    if not rows:
        raise ValueError("no rows to tabulate")
    if group_by is None:
        group_by = list(rows[0].factors)
    groups: dict = {}
    for r in rows:
        try:
            key = tuple(r.factors[k] for k in group_by)
        except KeyError as exc:
            raise ConfigError(f"rows lack factor {exc.args[0]!r}") from None
        groups.setdefault(key, []).append(r)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*group_by, "mean_mcc", "std_mcc", "n_seeds", "n_failed"])
    for key in sorted(groups, key=_sort_key):
        vals = np.array([getattr(r, metric) for r in groups[key]], dtype=float)
        ok = vals[np.isfinite(vals)]
        mean = float(ok.mean()) if ok.size else float("nan")
        std = float(ok.std(ddof=0)) if ok.size else float("nan")
        w.writerow([*key, f"{mean:.6f}", f"{std:.6f}", len(vals), len(vals) - ok.size])
    return buf.getvalue()
