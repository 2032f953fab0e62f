"""Linear decoder fitted by multi-environment Gaussian maximum likelihood.

The decoder maps stacked consecutive outputs z_t = (y[t+1]; y[t]) to a
control estimate u_hat_t = M z_t. Each environment e contributes the
Gaussian log-likelihood of u_hat under its known diagonal control
covariance, and a volume term -log|det M1| (M1 is the y[t+1] block) keeps
the decoder from collapsing to zero.
"""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .environments import CenteringRecord, FitData, TrajectorySet, variability_matrix
from .errors import DegenerateDecoderError, DimensionError, DivergenceError
from .systems import LOG_2PI, StateSpace

logger = logging.getLogger(__name__)

LOG_DET_FLOOR = np.log(1e-300)
DECODER_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 3e-3
    batch_size: int = 64
    epochs: int = 4000
    grad_clip_norm: float = 0.5
    init: str = "orthogonal"
    seed: int = 0
    include_log_det: bool = True
    weighting: str = "precision"
    whiten: bool = True
    mean_warmup: float = 0.25

    def __post_init__(self):
        for name in ("learning_rate", "grad_clip_norm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("batch_size", "epochs"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.init not in ("orthogonal", "scaled_gaussian"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.weighting not in ("precision", "covariance"):
            raise ValueError(f"unknown weighting {self.weighting!r}")
        if not 0 <= self.mean_warmup <= 1:
            raise ValueError("mean_warmup must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class LinearDecoder:
    """u_hat = M @ (y[t+1]; y[t]) with M = [M1 | M2] of shape (d_u, 2 d_y)."""

    M: np.ndarray

    def __post_init__(self):
        M = np.array(self.M, dtype=float, copy=True)
        if M.ndim != 2 or M.shape[1] % 2:
            raise DimensionError(f"M must be (d_u, 2*d_y), got {M.shape}")
        if not np.all(np.isfinite(M)):
            raise ValueError("decoder has non-finite entries")
        M.setflags(write=False)
        object.__setattr__(self, "M", M)

    @property
    def d_u(self) -> int:
        return self.M.shape[0]

    @property
    def d_y(self) -> int:
        return self.M.shape[1] // 2

    @property
    def M1(self) -> np.ndarray:
        return self.M[:, : self.d_y]

    @property
    def M2(self) -> np.ndarray:
        return self.M[:, self.d_y:]

    def to_dict(self, cfg: Optional[FitConfig] = None, dataset_fingerprint: str = "") -> dict:
        return {
            "schema_version": DECODER_SCHEMA_VERSION,
            "shape": list(self.M.shape),
            "M": self.M.ravel(order="C").tolist(),
            "config": None if cfg is None else asdict(cfg),
            "dataset_fingerprint": dataset_fingerprint,
        }

    def save(self, path, cfg: Optional[FitConfig] = None, dataset_fingerprint: str = "") -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(cfg, dataset_fingerprint), indent=2))
        return path

    @classmethod
    def from_dict(cls, d: dict) -> "LinearDecoder":
        if d.get("schema_version") != DECODER_SCHEMA_VERSION:
            raise ValueError(f"unsupported decoder schema {d.get('schema_version')}")
        return cls(np.asarray(d["M"], dtype=float).reshape(d["shape"]))

    @classmethod
    def load(cls, path) -> "LinearDecoder":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class FitReport:
    final_loss: float
    initial_loss: float
    loss_curve: list = field(default_factory=list)
    epochs_run: int = 0
    best_epoch: int = 0
    wall_time: float = 0.0


def analytic_decoder(sys: StateSpace) -> LinearDecoder:
    """Exact noise-free inverse u_t = B^+ (C^+ y[t+1] - A C^+ y[t])."""
    Cp = np.linalg.pinv(sys.C)
    Bp = np.linalg.pinv(sys.B)
    return LinearDecoder(np.hstack([Bp @ Cp, -Bp @ sys.A @ Cp]))


def predict_controls(decoder: LinearDecoder, y: np.ndarray) -> np.ndarray:
    """u_hat[t] = M (y[t+1]; y[t]) for t = 0..len(y) - 2."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] != decoder.d_y:
        raise DimensionError(f"y must be (T, {decoder.d_y})")
    if y.shape[0] < 2:
        raise ValueError("need at least two output samples")
    return y[1:] @ decoder.M1.T + y[:-1] @ decoder.M2.T


def center(
    data: TrajectorySet,
    known_control_means: Optional[Union[Sequence, Mapping]] = None,
) -> tuple[TrajectorySet, tuple]:
    """Subtract each trajectory's empirical output mean.

    With ``known_control_means`` (one vector per environment, by position in
    ``data.specs`` or keyed by environment index) the means are recorded so
    the likelihood can score M(z + shift) - mean, which is the uncentered
    likelihood with the mean known; the stored controls are shifted too so
    evaluation compares against centered u. Re-centering is a no-op up to
    round-off.
    """
    if known_control_means is not None and not isinstance(known_control_means, Mapping):
        known_control_means = {s.index: m for s, m in zip(data.specs, known_control_means)}

    trajs, records = [], []
    prev = data.centering or (None,) * len(data.trajectories)
    for tr, old in zip(data.trajectories, prev):
        y_mean = tr.y.mean(axis=0)
        old_y = np.zeros_like(y_mean) if old is None else old.y_mean
        old_mu = None if old is None else old.control_mean
        mu = old_mu
        if known_control_means is not None and tr.env_index in known_control_means:
            mu = np.asarray(known_control_means[tr.env_index], dtype=float)
        u = tr.u
        if mu is not None:
            u = u - (mu - (0.0 if old_mu is None else old_mu))
        x = None if tr.x is None else tr.x - tr.x.mean(axis=0)
        trajs.append(replace(tr, y=tr.y - y_mean, u=u, x=x))
        records.append(CenteringRecord(y_mean=old_y + y_mean, control_mean=mu))
    records = tuple(records)
    return replace(data, trajectories=tuple(trajs), centering=records), records


class _Problem:
    """Pooled (z, weight, target) arrays for one dataset.

    ``Zc`` holds the stacked pairs as stored; when a control mean is known the
    likelihood scores Zc + shift against that mean (``Z`` and ``mu``).
    """

    def __init__(self, data: FitData, cfg: FitConfig):
        d_u, d_y = data.d_u, data.d_y
        if d_y < d_u:
            raise DimensionError(f"need d_y >= d_u for a left-invertible decoder (d_y={d_y}, d_u={d_u})")
        Zc, S, W, mu, const = [], [], [], [], []
        self.has_means = False
        for k, (y, spec) in enumerate(zip(data.y, data.specs)):
            var = spec.variances
            if np.any(var <= 0):
                raise ValueError(f"environment {spec.index} has a non-positive variance")
            z = np.hstack([y[1:], y[:-1]])
            n = z.shape[0]
            rec = None if data.centering is None else data.centering[k]
            shift, target = np.zeros(2 * d_y), np.zeros(d_u)
            if rec is not None and rec.control_mean is not None:
                shift = np.concatenate([rec.y_mean, rec.y_mean])
                target = rec.control_mean
                self.has_means = True
            Zc.append(z)
            S.append(np.broadcast_to(shift, (n, 2 * d_y)))
            W.append(np.broadcast_to(1.0 / var if cfg.weighting == "precision" else var, (n, d_u)))
            mu.append(np.broadcast_to(target, (n, d_u)))
            const.append(n * 0.5 * np.sum(np.log(var) + LOG_2PI))
        self.Zc = np.vstack(Zc)
        self.Z = self.Zc + np.vstack(S)
        self.W = np.ascontiguousarray(np.vstack(W))
        self.mu = np.ascontiguousarray(np.vstack(mu))
        self.const = float(np.sum(const))
        self.n = self.Z.shape[0]
        self.d_u, self.d_y = d_u, d_y
        self.include_log_det = cfg.include_log_det
        self.U = np.eye(d_y) if d_y == d_u else innovation_basis(data.y, d_u)

    def volume(self, M):
        """log|det(M1 U)| and its gradient w.r.t. M1."""
        J = M[:, : self.d_y] @ self.U
        sign, logabsdet = np.linalg.slogdet(J)
        if sign == 0 or logabsdet < LOG_DET_FLOOR:
            raise DegenerateDecoderError("|det M1| fell below 1e-300")
        return logabsdet, np.linalg.solve(J.T, self.U.T)

    def row_losses(self, M):
        """Quadratic likelihood term split by decoder row."""
        r = self.Z @ M.T - self.mu
        return 0.5 * np.sum(self.W * r * r, axis=0)

    def loss_and_grad(self, M, with_grad=True):
        r = self.Z @ M.T - self.mu
        Wr = self.W * r
        loss = 0.5 * np.sum(Wr * r)
        grad = Wr.T @ self.Z if with_grad else None
        if self.include_log_det:
            logdet, dlogdet = self.volume(M)
            loss -= self.n * logdet
            if with_grad:
                grad[:, : self.d_y] -= self.n * dlogdet
        return loss, grad


def innovation_basis(ys: Sequence[np.ndarray], d_u: int) -> np.ndarray:
    """Orthonormal basis (d_y, d_u) of the directions in which y[t+1] moves
    beyond what y[t] linearly predicts.

    When d_y > d_u the stacked outputs are rank-deficient, and |det M1| alone
    is unbounded along those null directions; the volume term is measured on
    this subspace instead.
    """
    Y1 = np.vstack([y[1:] - y[1:].mean(axis=0) for y in ys])
    Y0 = np.vstack([y[:-1] - y[:-1].mean(axis=0) for y in ys])
    F, *_ = np.linalg.lstsq(Y0, Y1, rcond=None)
    R = Y1 - Y0 @ F
    _, _, Vt = np.linalg.svd(R, full_matrices=False)
    return Vt[:d_u].T


def whitening_matrix(Z: np.ndarray, weights: Optional[np.ndarray] = None, rel_floor: float = 1e-10) -> np.ndarray:
    """Symmetric inverse square root of the (weighted) second-moment matrix of ``Z``.

    Directions with eigenvalue below ``rel_floor`` times the largest carry no
    signal (e.g. exact linear dependencies between outputs) and are zeroed.
    """
    w = np.ones(Z.shape[0]) if weights is None else weights
    S = (Z * w[:, None]).T @ Z / Z.shape[0]
    evals, evecs = np.linalg.eigh(S)
    keep = evals > rel_floor * evals[-1]
    inv_root = np.zeros_like(evals)
    inv_root[keep] = 1.0 / np.sqrt(evals[keep])
    return (evecs * inv_root) @ evecs.T


def _as_fit_data(data) -> FitData:
    return data.fit_view() if isinstance(data, TrajectorySet) else data


def negative_log_likelihood(decoder: LinearDecoder, data, cfg: FitConfig = FitConfig()) -> float:
    """Total negative log-likelihood over every (t, t+1) pair of every environment.

    sum_e sum_t [1/2 r^T W_e r + 1/2 log det(2 pi Sigma_e)] - N log|det M1|,
    where r = u_hat - known mean and W_e is the precision (or, with
    ``weighting='covariance'``, the covariance) of environment e.
    """
    prob = _Problem(_as_fit_data(data), cfg)
    _check_shape(decoder, prob)
    loss, _ = prob.loss_and_grad(decoder.M, with_grad=False)
    return float(loss + prob.const)


def nll_gradient(decoder: LinearDecoder, data, cfg: FitConfig = FitConfig()) -> np.ndarray:
    """Analytic gradient of :func:`negative_log_likelihood` w.r.t. M."""
    prob = _Problem(_as_fit_data(data), cfg)
    _check_shape(decoder, prob)
    return prob.loss_and_grad(decoder.M)[1]


def _check_shape(decoder, prob):
    if decoder.M.shape != (prob.d_u, 2 * prob.d_y):
        raise DimensionError(f"decoder shape {decoder.M.shape} does not match data ({prob.d_u}, {2 * prob.d_y})")


def initial_decoder(d_u: int, d_y: int, init: str, rng: np.random.Generator) -> np.ndarray:
    G = rng.standard_normal((2 * d_y, d_u))
    if init == "scaled_gaussian":
        return G.T / np.sqrt(2 * d_y)
    Q, R = np.linalg.qr(G)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return (Q * signs).T


def _resolve_signs(V, M, prob):
    """Negate every decoder row whose negation lowers the likelihood.

    Away from the known-mean term the loss is invariant to negating a row,
    and the quadratic term separates over rows, so each row's sign is chosen
    independently from its own term. The flip crosses the -log|det M1|
    barrier that gradient steps cannot.
    """
    if not prob.has_means:
        return V, M
    keep = prob.row_losses(M)
    flipped = prob.row_losses(-M)
    signs = np.where(flipped < keep, -1.0, 1.0)
    if np.all(signs > 0):
        return V, M
    return V * signs[:, None], M * signs[:, None]


def fit(data, cfg: FitConfig = FitConfig()) -> tuple[LinearDecoder, FitReport]:
    """Minibatch gradient descent with norm clipping on the negative log-likelihood.

    Pairs from all environments are pooled and shuffled each epoch with a
    generator seeded by ``cfg.seed``. The step uses the batch-mean gradient.
    Returns the decoder with the lowest full-data loss seen at an epoch end.
    """
    t0 = time.perf_counter()
    fd = _as_fit_data(data)
    if len(fd.y) < 2:
        raise ValueError("fit needs at least two environments")
    try:
        diag = variability_matrix(list(fd.specs))
        if not diag.satisfies_variability:
            warnings.warn(
                f"variability matrix has column rank {diag.column_rank} < d_u = {fd.d_u}; "
                "the decoder is not identifiable from these environments",
                stacklevel=2,
            )
    except ValueError:
        pass

    prob = _Problem(fd, cfg)
    rng = np.random.default_rng(cfg.seed)
    # Descent runs on V with row i of M equal to V[i] @ P[i]; each P[i]
    # whitens the inputs under that row's likelihood weights.
    d_u, d_y = prob.d_u, prob.d_y
    if cfg.whiten:
        P = np.stack([whitening_matrix(prob.Zc, prob.W[:, i]) for i in range(d_u)])
    else:
        P = np.broadcast_to(np.eye(2 * d_y), (d_u, 2 * d_y, 2 * d_y))
    V = initial_decoder(d_u, d_y, cfg.init, rng)
    lr, clip, bs = cfg.learning_rate, cfg.grad_clip_norm, int(cfg.batch_size)
    warmup = int(round(cfg.mean_warmup * cfg.epochs)) if prob.has_means else 0
    zero_mu = np.zeros_like(prob.mu)

    def full_loss(M):
        return prob.loss_and_grad(M, with_grad=False)[0] + prob.const

    M = np.einsum("ij,ijk->ik", V, P)
    initial = full_loss(M)
    best_M, best_loss, best_epoch = M.copy(), initial, 0
    curve = []
    for epoch in range(1, int(cfg.epochs) + 1):
        # warm-up epochs fit the centered likelihood, which has an optimum on
        # both sides of det M1 = 0
        Zsrc, musrc = (prob.Zc, zero_mu) if epoch <= warmup else (prob.Z, prob.mu)
        order = rng.permutation(prob.n)
        Z, W, mu = Zsrc[order], prob.W[order], musrc[order]
        for start in range(0, prob.n, bs):
            z, w, m = Z[start:start + bs], W[start:start + bs], mu[start:start + bs]
            M = np.einsum("ij,ijk->ik", V, P)
            r = z @ M.T - m
            g = (w * r).T @ z
            if prob.include_log_det:
                _, dlogdet = prob.volume(M)
                g[:, :d_y] -= z.shape[0] * dlogdet
            g = np.einsum("ik,ikj->ij", g, P) / z.shape[0]
            norm = np.sqrt(np.sum(g * g))
            if norm > clip:
                g *= clip / norm
            V = V - lr * g
        M = np.einsum("ij,ijk->ik", V, P)
        if not np.all(np.isfinite(M)):
            raise DivergenceError(epoch, float("nan"))
        V, M = _resolve_signs(V, M, prob)
        loss = full_loss(M)
        if not np.isfinite(loss):
            raise DivergenceError(epoch, float(loss))
        curve.append(float(loss))
        if loss < best_loss:
            best_M, best_loss, best_epoch = M.copy(), loss, epoch
    report = FitReport(
        final_loss=float(best_loss),
        initial_loss=float(initial),
        loss_curve=curve,
        epochs_run=len(curve),
        best_epoch=best_epoch,
        wall_time=time.perf_counter() - t0,
    )
    return LinearDecoder(best_M), report
