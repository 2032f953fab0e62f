"""Multi-environment intervention designs and dataset generation."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, LTIError
from .systems import StateSpace, Trajectory, simulate, validate_system

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class EnvironmentSpec:
    """Diagonal Gaussian control distribution for one environment.

    ``variances`` are the per-component (sigma_i^e)^2. Zero variances are
    accepted here (deterministic controls, useful for simulation checks) but
    rejected by anything that needs the precision matrix.
    """

    index: int
    variances: np.ndarray
    mean: Optional[np.ndarray] = None

    def __post_init__(self):
        var = np.array(self.variances, dtype=float, ndmin=1)
        if var.ndim != 1:
            raise DimensionError("variances must be a vector")
        if np.any(~np.isfinite(var)) or np.any(var < 0):
            raise ValueError(f"variances must be finite and nonnegative, got {var}")
        mean = np.zeros_like(var) if self.mean is None else np.array(self.mean, dtype=float, ndmin=1)
        if mean.shape != var.shape:
            raise DimensionError(f"mean shape {mean.shape} does not match variances {var.shape}")
        var.setflags(write=False)
        mean.setflags(write=False)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "mean", mean)

    @property
    def d_u(self) -> int:
        return self.variances.shape[0]

    def to_dict(self) -> dict:
        return {"index": self.index, "variances": self.variances.tolist(), "mean": self.mean.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "EnvironmentSpec":
        return cls(int(d["index"]), d["variances"], d.get("mean"))


@dataclass(frozen=True)
class DesignDiagnostics:
    delta: np.ndarray
    column_rank: int
    condition_number: float

    @property
    def satisfies_variability(self) -> bool:
        return self.column_rank == self.delta.shape[1]


def variability_matrix(specs: Sequence[EnvironmentSpec], rel_tol: float = 1e-12) -> DesignDiagnostics:
    """Environment variability matrix relative to environment 0.

    Row e - 1 holds 1/var[e] - 1/var[0]; the base row is identically zero and
    left out. Rank uses singular-value thresholding; the condition number is
    sigma_max / sigma_min (inf when rank-deficient).
    """
    if len(specs) < 2:
        raise ValueError("need at least two environments")
    d_u = specs[0].d_u
    if any(s.d_u != d_u for s in specs):
        raise DimensionError("environments disagree on d_u")
    var = np.stack([s.variances for s in specs])
    if np.any(var <= 0):
        raise ValueError("variability matrix needs strictly positive variances")
    prec = 1.0 / var
    delta = prec[1:] - prec[0]
    s = np.linalg.svd(delta, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(s > max(delta.shape) * s[0] * rel_tol))
    cond = float(s[0] / s[-1]) if rank == d_u and s[-1] > 0 else float("inf")
    return DesignDiagnostics(delta=delta, column_rank=rank, condition_number=cond)


def design_max_variability(
    d_u: int, high: float = 0.9999, low: float = 0.0001, means: Optional[np.ndarray] = None
) -> list[EnvironmentSpec]:
    """d_u + 1 environments: a base with every variance ``low`` and, for
    e = 1..d_u, environment e raising component e - 1 to ``high``.

    The resulting variability matrix is (1/high - 1/low) * I, so its
    condition number is exactly one. ``means`` optionally gives one mean
    vector per environment (shape (d_u + 1, d_u)).
    """
    if not 0 < low < high:
        raise ValueError("need 0 < low < high")
    specs = []
    for e in range(d_u + 1):
        var = np.full(d_u, low)
        if e > 0:
            var[e - 1] = high
        specs.append(EnvironmentSpec(e, var, None if means is None else means[e]))
    return specs


def sample_random_design(
    d_u: int,
    E: int,
    variance_interval: tuple[float, float] = (0.1, 1.0),
    seed: int = 0,
    means: Optional[np.ndarray] = None,
) -> list[EnvironmentSpec]:
    """E environments with variances drawn i.i.d. uniform on ``variance_interval``."""
    lo, hi = variance_interval
    if not 0 < lo < hi:
        raise ValueError(f"invalid variance interval {variance_interval}")
    if E < d_u + 1:
        raise ValueError(f"need E > d_u environments, got E={E}, d_u={d_u}")
    rng = np.random.default_rng(seed)
    var = rng.uniform(lo, hi, size=(E, d_u))
    return [EnvironmentSpec(e, var[e], None if means is None else means[e]) for e in range(E)]


def sample_means(n_envs: int, d_u: int, seed: int, scale: float = 1.0) -> np.ndarray:
    """Per-environment control means, uniform on [-scale, scale]."""
    rng = np.random.default_rng([seed, 0x6D65616E])
    return rng.uniform(-scale, scale, size=(n_envs, d_u))


def env_seed(seed: int, env_index: int) -> int:
    """Derive an independent 64-bit seed for one environment."""
    digest = hashlib.sha256(f"{int(seed)}:{int(env_index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass(frozen=True)
class CenteringRecord:
    """Shift removed from one environment's outputs, plus its known control mean."""

    y_mean: np.ndarray
    control_mean: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "y_mean": self.y_mean.tolist(),
            "control_mean": None if self.control_mean is None else self.control_mean.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CenteringRecord":
        cm = d.get("control_mean")
        return cls(np.asarray(d["y_mean"], dtype=float), None if cm is None else np.asarray(cm, dtype=float))


@dataclass(frozen=True)
class FitData:
    """What the estimator is allowed to see: outputs, designs, centering.

    Ground-truth controls are deliberately absent.
    """

    y: tuple
    specs: tuple
    centering: Optional[tuple] = None
    fingerprint: str = ""

    @property
    def d_y(self) -> int:
        return self.y[0].shape[1]

    @property
    def d_u(self) -> int:
        return self.specs[0].d_u


@dataclass(frozen=True, eq=False)
class TrajectorySet:
    trajectories: tuple
    specs: tuple
    system_fingerprint: str
    obs_noise_var: float
    horizon: int
    seed: int = 0
    centering: Optional[tuple] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        object.__setattr__(self, "specs", tuple(self.specs))
        indices = {s.index for s in self.specs}
        d_us = {tr.u.shape[1] for tr in self.trajectories}
        d_ys = {tr.y.shape[1] for tr in self.trajectories}
        if len(d_us) > 1 or len(d_ys) > 1:
            raise DimensionError("trajectories disagree on d_u or d_y")
        for tr in self.trajectories:
            if tr.env_index not in indices:
                raise ValueError(f"trajectory references unknown environment {tr.env_index}")

    def spec_for(self, env_index: int) -> EnvironmentSpec:
        for s in self.specs:
            if s.index == env_index:
                return s
        raise KeyError(env_index)

    def fingerprint(self) -> str:
        """Hash over the observed outputs, designs and generation metadata."""
        h = hashlib.sha256()
        h.update(self.system_fingerprint.encode())
        h.update(repr((self.obs_noise_var, self.horizon, self.seed)).encode())
        for s in self.specs:
            h.update(json.dumps(s.to_dict()).encode())
        for tr in self.trajectories:
            h.update(np.ascontiguousarray(tr.y, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def fit_view(self) -> FitData:
        """Restrict to the fields the estimator may read (no controls, no states)."""
        ys = tuple(np.array(tr.y, copy=True) for tr in self.trajectories)
        specs = tuple(self.spec_for(tr.env_index) for tr in self.trajectories)
        return FitData(y=ys, specs=specs, centering=self.centering, fingerprint=self.fingerprint())

    def save(self, path) -> Path:
        """Write metadata.json and one env_<index>.csv per trajectory.

        CSV columns are t, u_1..u_du, y_1..y_dy; the last row (t = T) has no
        control and stores NaN there.
        """
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        files = []
        for k, tr in enumerate(self.trajectories):
            name = f"env_{k:03d}_{tr.env_index}.csv"
            T, d_u = tr.u.shape
            d_y = tr.y.shape[1]
            u_pad = np.vstack([tr.u, np.full((1, d_u), np.nan)])
            rows = np.column_stack([np.arange(T + 1), u_pad, tr.y])
            header = ",".join(["t"] + [f"u_{i + 1}" for i in range(d_u)] + [f"y_{i + 1}" for i in range(d_y)])
            np.savetxt(path / name, rows, delimiter=",", header=header, comments="", fmt="%.17g")
            files.append({"file": name, "env_index": tr.env_index, "seed": tr.seed})
        meta = {
            "schema_version": SCHEMA_VERSION,
            "system_fingerprint": self.system_fingerprint,
            "dataset_fingerprint": self.fingerprint(),
            "obs_noise_var": self.obs_noise_var,
            "horizon": self.horizon,
            "seed": self.seed,
            "specs": [s.to_dict() for s in self.specs],
            "trajectories": files,
            "centering": None if self.centering is None else [c.to_dict() for c in self.centering],
            "meta": self.meta,
        }
        (path / "metadata.json").write_text(json.dumps(meta, indent=2))
        return path

    @classmethod
    def load(cls, path) -> "TrajectorySet":
        path = Path(path)
        meta = json.loads((path / "metadata.json").read_text())
        if meta.get("schema_version") != SCHEMA_VERSION:
            raise LTIError(f"unsupported dataset schema {meta.get('schema_version')}")
        specs = [EnvironmentSpec.from_dict(d) for d in meta["specs"]]
        d_u = specs[0].d_u
        trajs = []
        for entry in meta["trajectories"]:
            rows = np.loadtxt(path / entry["file"], delimiter=",", skiprows=1, ndmin=2)
            u = rows[:-1, 1:1 + d_u]
            y = rows[:, 1 + d_u:]
            trajs.append(Trajectory(env_index=int(entry["env_index"]), u=u, y=y, seed=int(entry["seed"])))
        centering = meta.get("centering")
        return cls(
            trajectories=trajs,
            specs=specs,
            system_fingerprint=meta["system_fingerprint"],
            obs_noise_var=float(meta["obs_noise_var"]),
            horizon=int(meta["horizon"]),
            seed=int(meta["seed"]),
            centering=None if centering is None else tuple(CenteringRecord.from_dict(c) for c in centering),
            meta=meta.get("meta", {}),
        )


def generate_dataset(
    sys: StateSpace,
    specs: Sequence[EnvironmentSpec],
    steps_per_env: int,
    obs_noise_var: float = 0.0,
    seed: int = 0,
    allow_unstable: bool = False,
    x0: Optional[np.ndarray] = None,
) -> TrajectorySet:
    """One trajectory of ``steps_per_env`` steps per environment.

    Each environment is simulated with its own seed derived from
    (seed, env index), so the result does not depend on generation order.
    """
    report = validate_system(sys)
    if not report.is_stable and not allow_unstable:
        raise LTIError(f"system is unstable (spectral radius {report.spectral_radius:.4g})")
    if any(s.d_u != sys.d_u for s in specs):
        raise DimensionError("environment dimension does not match system d_u")
    trajs = [
        simulate(sys, s, steps_per_env, obs_noise_var, x0=x0, seed=env_seed(seed, s.index))
        for s in specs
    ]
    return TrajectorySet(
        trajectories=trajs,
        specs=tuple(specs),
        system_fingerprint=sys.fingerprint(),
        obs_noise_var=float(obs_noise_var),
        horizon=int(steps_per_env),
        seed=int(seed),
    )


def split_trajectory_set(data: TrajectorySet, val_fraction: float = 0.1) -> tuple[TrajectorySet, TrajectorySet]:
    """Split each trajectory in time; the last ``val_fraction`` of pairs is held out.

    The two pieces share the boundary output sample so no (t, t+1) pair is lost.
    """
    train, val = [], []
    for tr in data.trajectories:
        n_val = int(round(val_fraction * tr.T))
        cut = tr.T - n_val
        x = tr.x
        train.append(replace(tr, u=tr.u[:cut], y=tr.y[:cut + 1], x=None if x is None else x[:cut + 1]))
        val.append(replace(tr, u=tr.u[cut:], y=tr.y[cut:], x=None if x is None else x[cut:]))
    return (
        replace(data, trajectories=tuple(train), horizon=train[0].T),
        replace(data, trajectories=tuple(val), horizon=val[0].T),
    )
