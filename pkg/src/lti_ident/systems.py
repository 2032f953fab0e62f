"""Discrete and continuous LTI state-space models.

Holds the system containers, structural checks (stability, controllability,
observability), discretization, simulation, and the derived input-output
objects: Markov parameters, transfer function, unrolled maps and Gaussian
densities of trajectories and outputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import DimensionError, NumericError, PoleError, SingularCovarianceError

if TYPE_CHECKING:
    from .environments import EnvironmentSpec

LOG_2PI = np.log(2.0 * np.pi)


def _as_matrix(name, value):
    arr = np.array(value, dtype=float, copy=True)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def _check_triple(A, B, C):
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"A must be square, got {A.shape}")
    if B.shape[0] != A.shape[0]:
        raise DimensionError(f"B has {B.shape[0]} rows, expected {A.shape[0]}")
    if C.shape[1] != A.shape[0]:
        raise DimensionError(f"C has {C.shape[1]} columns, expected {A.shape[0]}")


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Discrete system x[t+1] = A x[t] + B u[t], y[t] = C x[t] + eps[t].

    Matrices are copied and frozen on construction.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = _as_matrix("A", self.A)
        B = _as_matrix("B", self.B)
        C = _as_matrix("C", self.C)
        _check_triple(A, B, C)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def d_x(self) -> int:
        return self.A.shape[0]

    @property
    def d_u(self) -> int:
        return self.B.shape[1]

    @property
    def d_y(self) -> int:
        return self.C.shape[0]

    def fingerprint(self) -> str:
        """Short sha256 of the shapes and float64 bytes of (A, B, C)."""
        h = hashlib.sha256()
        for M in (self.A, self.B, self.C):
            h.update(repr(M.shape).encode())
            h.update(np.ascontiguousarray(M, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StateSpace":
        return cls(np.asarray(d["A"]), np.asarray(d["B"]), np.asarray(d["C"]))

    def __eq__(self, other):
        if not isinstance(other, StateSpace):
            return NotImplemented
        return all(
            a.shape == b.shape and np.array_equal(a, b)
            for a, b in zip((self.A, self.B, self.C), (other.A, other.B, other.C))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ContinuousStateSpace:
    """Continuous system dx/dt = A_c x + B_c u, y = C_c x (A_c in 1/seconds)."""

    A_c: np.ndarray
    B_c: np.ndarray
    C_c: np.ndarray

    def __post_init__(self):
        A = _as_matrix("A_c", self.A_c)
        B = _as_matrix("B_c", self.B_c)
        C = _as_matrix("C_c", self.C_c)
        _check_triple(A, B, C)
        object.__setattr__(self, "A_c", A)
        object.__setattr__(self, "B_c", B)
        object.__setattr__(self, "C_c", C)

    @property
    def d_x(self) -> int:
        return self.A_c.shape[0]


@dataclass(frozen=True)
class SystemReport:
    spectral_radius: float
    controllability_rank: int
    observability_rank: int
    d_x: int

    @property
    def is_stable(self) -> bool:
        return self.spectral_radius < 1.0

    @property
    def is_controllable(self) -> bool:
        return self.controllability_rank == self.d_x

    @property
    def is_observable(self) -> bool:
        return self.observability_rank == self.d_x

    @property
    def ok(self) -> bool:
        """All structural assumptions hold."""
        return self.is_stable and self.is_controllable and self.is_observable


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One recorded rollout.

    ``u`` has T rows, ``y`` has T + 1 rows (y[0] observes x[0]). ``x`` is
    ``None`` when the trajectory was loaded from disk without states.
    """

    env_index: int
    u: np.ndarray
    y: np.ndarray
    x: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        if self.u.ndim != 2 or self.y.ndim != 2:
            raise DimensionError("u and y must be 2-D arrays (time x channel)")
        if self.y.shape[0] != self.u.shape[0] + 1:
            raise DimensionError(f"y must have T+1 rows; got u {self.u.shape}, y {self.y.shape}")
        if self.x is not None and self.x.shape[0] != self.y.shape[0]:
            raise DimensionError("x must have T+1 rows")

    @property
    def T(self) -> int:
        return self.u.shape[0]


@dataclass(frozen=True)
class MarkovParams:
    """Impulse-response blocks [I, CB, CAB, ..., CA^(T-2)B] for horizon T.

    ``impulse[k - 1]`` holds C A^(k-1) B for k = 1..T-1. The leading identity
    block only exists when d_y == d_u; otherwise ``identity_block`` is False
    and ``blocks`` starts at CB.
    """

    impulse: np.ndarray
    identity_block: bool

    @property
    def horizon(self) -> int:
        return self.impulse.shape[0] + 1

    @property
    def d_y(self) -> int:
        return self.impulse.shape[1]

    @property
    def d_u(self) -> int:
        return self.impulse.shape[2]

    def block(self, k: int) -> np.ndarray:
        """Block k of the Markov parameter sequence (k = 0 is the identity)."""
        if k == 0:
            if not self.identity_block:
                raise DimensionError("identity block is undefined when d_y != d_u")
            return np.eye(self.d_y)
        if not 1 <= k < self.horizon:
            raise IndexError(f"block index {k} outside 0..{self.horizon - 1}")
        return self.impulse[k - 1]

    @property
    def blocks(self) -> list:
        head = [np.eye(self.d_y)] if self.identity_block else []
        return head + list(self.impulse)


@dataclass(frozen=True)
class HankelMatrix:
    """(T1 x T2) block Hankel matrix of impulse blocks; block (i, j) = C A^(i+j) B (0-based)."""

    T1: int
    T2: int
    data: np.ndarray
    d_y: int
    d_u: int

    def block(self, i: int, j: int) -> np.ndarray:
        return self.data[i * self.d_y:(i + 1) * self.d_y, j * self.d_u:(j + 1) * self.d_u]


def numerical_rank(M: np.ndarray, rel: float = 1e-12) -> int:
    """Rank by singular-value thresholding at max(dim) * sigma_max * rel."""
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    tol = max(M.shape) * s[0] * rel
    return int(np.sum(s > tol))


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """[B, AB, ..., A^(n-1) B]."""
    n = A.shape[0]
    cols = [B]
    for _ in range(n - 1):
        cols.append(A @ cols[-1])
    return np.hstack(cols)


def observability_matrix(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    """[C; CA; ...; C A^(n-1)]."""
    n = A.shape[0]
    rows = [C]
    for _ in range(n - 1):
        rows.append(rows[-1] @ A)
    return np.vstack(rows)


def spectral_radius(A: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0


def validate_system(sys: StateSpace) -> SystemReport:
    """Stability, controllability and observability summary of ``sys``."""
    return SystemReport(
        spectral_radius=spectral_radius(sys.A),
        controllability_rank=numerical_rank(controllability_matrix(sys.A, sys.B)),
        observability_rank=numerical_rank(observability_matrix(sys.A, sys.C)),
        d_x=sys.d_x,
    )


def discretize(csys: ContinuousStateSpace, dt: float, method: str = "zoh") -> StateSpace:
    """Convert a continuous system to discrete time with step ``dt`` seconds.

    ``zoh`` exponentiates the augmented matrix [[A_c, B_c], [0, 0]] * dt, whose
    top blocks are exp(A_c dt) and the integral of exp(A_c s) B_c over one
    step; this covers singular A_c without a separate branch.
    ``forward_euler`` gives A = I + A_c dt, B = B_c dt.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n, m = csys.B_c.shape
    if method == "zoh":
        aug = np.zeros((n + m, n + m))
        aug[:n, :n] = csys.A_c
        aug[:n, n:] = csys.B_c
        with np.errstate(over="raise", invalid="raise"):
            try:
                E = linalg.expm(aug * dt)
            except FloatingPointError as exc:
                raise NumericError(f"matrix exponential overflowed for dt={dt}") from exc
        A, B = E[:n, :n], E[:n, n:]
    elif method == "forward_euler":
        A = np.eye(n) + csys.A_c * dt
        B = csys.B_c * dt
    else:
        raise ValueError(f"unknown discretization method {method!r}")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise NumericError(f"discretization with dt={dt} produced non-finite matrices")
    return StateSpace(A, B, csys.C_c)


def simulate(
    sys: StateSpace,
    env: "EnvironmentSpec",
    T: int,
    obs_noise_var: float = 0.0,
    x0: Optional[np.ndarray] = None,
    seed: int = 0,
) -> Trajectory:
    """Roll out ``T`` steps with controls drawn i.i.d. from ``env``.

    u[t] ~ N(mean, diag(variances)); x[t+1] = A x[t] + B u[t];
    y[t] = C x[t] + eps[t] with eps[t] ~ N(0, obs_noise_var I).
    The same ``seed`` always yields bit-identical arrays.
    """
    if T < 1:
        raise ValueError("T must be a positive integer")
    if obs_noise_var < 0:
        raise ValueError("obs_noise_var must be nonnegative")
    var = np.asarray(env.variances, dtype=float)
    mean = np.asarray(env.mean, dtype=float)
    if var.shape != (sys.d_u,) or mean.shape != (sys.d_u,):
        raise DimensionError(f"environment has dimension {var.shape}, system d_u = {sys.d_u}")
    x0 = np.zeros(sys.d_x) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (sys.d_x,):
        raise DimensionError(f"x0 must have shape ({sys.d_x},)")

    rng = np.random.default_rng(seed)
    u = mean + np.sqrt(var) * rng.standard_normal((T, sys.d_u))
    eps = rng.standard_normal((T + 1, sys.d_y))

    x = np.empty((T + 1, sys.d_x))
    x[0] = x0
    Bu = u @ sys.B.T
    A = sys.A
    for t in range(T):
        x[t + 1] = A @ x[t] + Bu[t]
    y = x @ sys.C.T
    if obs_noise_var > 0:
        y = y + np.sqrt(obs_noise_var) * eps
    return Trajectory(env_index=int(env.index), u=u, x=x, y=y, seed=int(seed))


def markov_params(sys: StateSpace, T: int) -> MarkovParams:
    """Blocks [I, CB, CAB, ..., C A^(T-2) B] (T blocks counting the identity)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    impulse = np.empty((T - 1, sys.d_y, sys.d_u))
    AkB = sys.B
    for k in range(T - 1):
        impulse[k] = sys.C @ AkB
        AkB = sys.A @ AkB
    impulse.setflags(write=False)
    return MarkovParams(impulse=impulse, identity_block=sys.d_y == sys.d_u)


def transfer_function(sys: StateSpace, z: complex, pole_tol: float = 1e-12) -> np.ndarray:
    """H(z) = C (zI - A)^{-1} B."""
    M = z * np.eye(sys.d_x) - sys.A
    s = np.linalg.svd(M, compute_uv=False)
    if s[-1] <= pole_tol * max(1.0, s[0]):
        raise PoleError(z)
    return sys.C @ np.linalg.solve(M, sys.B.astype(complex))


def similarity_transform(sys: StateSpace, P: np.ndarray, max_cond: float = 1e12) -> StateSpace:
    """(P A P^-1, P B, C P^-1)."""
    P = np.asarray(P, dtype=float)
    if P.shape != (sys.d_x, sys.d_x):
        raise DimensionError(f"P must be {sys.d_x}x{sys.d_x}")
    if not np.linalg.cond(P) < max_cond:
        raise NumericError("P is numerically singular")
    Pinv = np.linalg.inv(P)
    return StateSpace(P @ sys.A @ Pinv, P @ sys.B, sys.C @ Pinv)


def unrolled_map(sys: StateSpace, t: int) -> np.ndarray:
    """Cumulative input-to-output map sum_{i=1..t} C A^(i-1) B."""
    if t < 1:
        raise ValueError("t must be >= 1")
    total = np.zeros((sys.d_y, sys.d_u))
    AkB = sys.B
    for _ in range(t):
        total += sys.C @ AkB
        AkB = sys.A @ AkB
    return total


def gaussian_logpdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """Log density of N(mean, cov) at x via a Cholesky factor."""
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("covariance is not positive definite") from exc
    ev = np.linalg.eigvalsh(cov)
    # rank-deficient covariances can still factor thanks to round-off
    if ev[0] <= len(x) * np.finfo(float).eps * ev[-1]:
        raise SingularCovarianceError("covariance is numerically singular")
    r = linalg.solve_triangular(L, x - mean, lower=True)
    return float(-0.5 * r @ r - np.sum(np.log(np.diag(L))) - 0.5 * len(x) * LOG_2PI)


def trajectory_log_density(
    sys: StateSpace,
    traj: Trajectory,
    env: "EnvironmentSpec",
    process_noise_var: float = 0.0,
    obs_noise_var: float = 1.0,
) -> float:
    """Markov-factorized log density of (x[1..T], y[1..T]) given x[0].

    log p(x1 | x0) + sum_t log p(x[t+1] | x[t]) + sum_t log p(y[t] | x[t]),
    with p(x[t+1] | x[t]) = N(A x[t] + B mean, B Sigma_u B^T + q I) and
    p(y[t] | x[t]) = N(C x[t], r I).
    """
    if traj.x is None:
        raise ValueError("trajectory has no recorded states")
    if obs_noise_var <= 0:
        raise SingularCovarianceError("obs_noise_var must be positive")
    var = np.asarray(env.variances, dtype=float)
    mean = np.asarray(env.mean, dtype=float)
    Q = sys.B @ np.diag(var) @ sys.B.T + process_noise_var * np.eye(sys.d_x)
    R = obs_noise_var * np.eye(sys.d_y)
    drift = sys.B @ mean
    x, y = traj.x, traj.y
    total = 0.0
    for t in range(traj.T):
        total += gaussian_logpdf(x[t + 1], sys.A @ x[t] + drift, Q)
        total += gaussian_logpdf(y[t + 1], sys.C @ x[t + 1], R)
    return total


def output_log_density(sys: StateSpace, variances: Sequence[float], t: int, y: np.ndarray) -> float:
    """Log density of y[t] for zero-mean controls, zero x0 and no noise.

    Uses the change of variables u = T_t^{-1} y with T_t = unrolled_map(sys, t),
    so it needs d_y == d_u and an invertible T_t.
    """
    Tt = unrolled_map(sys, t)
    if Tt.shape[0] != Tt.shape[1]:
        raise DimensionError("change of variables needs d_y == d_u")
    var = np.asarray(variances, dtype=float)
    v = np.linalg.solve(Tt, np.asarray(y, dtype=float))
    _, logabsdet = np.linalg.slogdet(Tt)
    return float(-logabsdet - np.sum(0.5 * v**2 / var + 0.5 * np.log(var) + 0.5 * LOG_2PI))


def log_odds(sys: StateSpace, env: "EnvironmentSpec", base: "EnvironmentSpec", t: int, y: np.ndarray) -> float:
    """log p_{env,t}(y) - log p_{base,t}(y) for the output at time t."""
    return output_log_density(sys, env.variances, t, y) - output_log_density(sys, base.variances, t, y)


def stationary_covariance(sys: StateSpace, control_cov: np.ndarray) -> np.ndarray:
    """Solution of S = A S A^T + B Sigma_u B^T (requires spectral radius < 1)."""
    return linalg.solve_discrete_lyapunov(sys.A, sys.B @ control_cov @ sys.B.T)
