"""Identifiability scores: MCC under optimal assignment and transfer-function
equivalence up to column permutation and scaling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment as _scipy_lsa

from .errors import DimensionError, UndefinedCorrelationError
from .systems import StateSpace, transfer_function


@dataclass(frozen=True)
class MccReport:
    mcc: float
    permutation: np.ndarray
    per_component_corr: np.ndarray
    n_samples: int


def linear_sum_assignment(cost, tie_tol: float = 1e-12) -> tuple[np.ndarray, float]:
    """Permutation ``perm`` minimizing sum_i cost[i, perm[i]].

    Among optimal permutations (within ``tie_tol`` relative to the cost scale)
    the lexicographically smallest is returned.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DimensionError(f"cost must be square, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost has non-finite entries")
    n = cost.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int), 0.0
    rows, cols = _scipy_lsa(cost)
    best = float(cost[rows, cols].sum())
    tol = tie_tol * max(1.0, float(np.abs(cost).max()) * n)

    # Fix rows one at a time to the smallest column that keeps the optimum.
    perm = np.empty(n, dtype=int)
    free_cols = list(range(n))
    fixed_cost = 0.0
    for i in range(n):
        for j in sorted(free_cols):
            rest_cols = [c for c in free_cols if c != j]
            sub = cost[np.ix_(range(i + 1, n), rest_cols)]
            sub_cost = float(sub[_scipy_lsa(sub)].sum()) if sub.size else 0.0
            if fixed_cost + cost[i, j] + sub_cost <= best + tol:
                perm[i] = j
                fixed_cost += cost[i, j]
                free_cols.remove(j)
                break
    return perm, float(cost[np.arange(n), perm].sum())


def correlation_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pearson correlations corr[i, j] between a[:, i] and b[:, j]."""
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    sa = np.sqrt(np.sum(a * a, axis=0))
    sb = np.sqrt(np.sum(b * b, axis=0))
    for which, s in (("u_true", sa), ("u_hat", sb)):
        bad = np.flatnonzero(s == 0)
        if bad.size:
            raise UndefinedCorrelationError(which, int(bad[0]))
    return (a.T @ b) / np.outer(sa, sb)


def mcc(u_true, u_hat) -> MccReport:
    """Mean absolute Pearson correlation after optimally matching components.

    ``permutation[i]`` is the estimated component assigned to true component i.
    """
    u_true = np.asarray(u_true, dtype=float)
    u_hat = np.asarray(u_hat, dtype=float)
    if u_true.ndim == 1:
        u_true = u_true[:, None]
    if u_hat.ndim == 1:
        u_hat = u_hat[:, None]
    if u_true.shape != u_hat.shape:
        raise DimensionError(f"shape mismatch {u_true.shape} vs {u_hat.shape}")
    if u_true.shape[0] < 2:
        raise ValueError("need at least two samples")
    corr = np.abs(correlation_matrix(u_true, u_hat))
    perm, _ = linear_sum_assignment(-corr)
    matched = np.clip(corr[np.arange(len(perm)), perm], 0.0, 1.0)
    return MccReport(
        mcc=float(matched.mean()),
        permutation=perm,
        per_component_corr=matched,
        n_samples=u_true.shape[0],
    )


@dataclass(frozen=True)
class Equivalence:
    equivalent: bool
    permutation: np.ndarray
    scales: np.ndarray
    max_rel_error: float

    def __iter__(self):
        return iter((self.equivalent, self.permutation, self.scales))


def default_z_samples(n: int = 32, radius: float = 1.5) -> np.ndarray:
    """n points on the circle |z| = radius, offset off the real axis."""
    return radius * np.exp(1j * (2 * np.pi * (np.arange(n) + 0.5) / n))


def transfer_equivalence(
    sys1: StateSpace,
    sys2: StateSpace,
    z_samples: Sequence[complex] = None,
    tol: float = 1e-6,
) -> Equivalence:
    """Test H1(z) = H2(z) P D over ``z_samples`` for a column permutation P and
    real diagonal D.

    Each (column of H2, column of H1) pair gets a least-squares real scale
    over all samples; the assignment on the resulting residuals picks P.
    """
    if (sys1.d_y, sys1.d_u) != (sys2.d_y, sys2.d_u):
        raise DimensionError("systems have different input/output dimensions")
    zs = default_z_samples() if z_samples is None else np.asarray(z_samples, dtype=complex)
    H1 = np.stack([transfer_function(sys1, z) for z in zs])
    H2 = np.stack([transfer_function(sys2, z) for z in zs])
    m = sys1.d_u
    # columns flattened over z and output rows, real and imaginary parts stacked
    c1 = np.concatenate([H1.real, H1.imag], axis=1).transpose(2, 0, 1).reshape(m, -1)
    c2 = np.concatenate([H2.real, H2.imag], axis=1).transpose(2, 0, 1).reshape(m, -1)
    norms2 = np.sum(c2 * c2, axis=1)
    scale = np.zeros((m, m))
    resid = np.zeros((m, m))
    for j in range(m):
        n1 = np.linalg.norm(c1[j]) or 1.0
        for k in range(m):
            d = (c2[k] @ c1[j]) / norms2[k] if norms2[k] > 0 else 0.0
            scale[j, k] = d
            resid[j, k] = np.linalg.norm(c1[j] - d * c2[k]) / n1
    perm, _ = linear_sum_assignment(resid)
    scales = scale[np.arange(m), perm]
    H2pd = H2[:, :, perm] * scales
    num = np.linalg.norm(H1 - H2pd, axis=(1, 2))
    den = np.linalg.norm(H1, axis=(1, 2))
    den = np.where(den > 0, den, 1.0)
    err = float(np.max(num / den))
    return Equivalence(err <= tol, perm, scales, err)
