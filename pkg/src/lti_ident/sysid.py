"""Ho-Kalman realization of (A, B, C) from Markov parameters."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError, RankDeficiencyError
from .systems import HankelMatrix, MarkovParams, StateSpace


class RankGapWarning(UserWarning):
    """The Hankel spectrum has no clear gap after the requested order."""


@dataclass(frozen=True)
class HoKalmanResult:
    sys: StateSpace
    singular_values: np.ndarray
    effective_rank: int
    T1: int
    T2: int


def hankel(mp: MarkovParams, T1: int, T2: int, offset: int = 0) -> HankelMatrix:
    """Block Hankel matrix with block (i, j) = mp.block(i + j + 1 + offset), 0-based i, j.

    With offset 0 this is the C A^(i+j) B layout; the identity block never enters.
    """
    if T1 < 0 or T2 < 0:
        raise ValueError("T1 and T2 must be nonnegative")
    if T1 + T2 + offset > mp.horizon:
        raise DimensionError(f"horizon {mp.horizon} too short for T1 + T2 = {T1 + T2 + offset}")
    dy, du = mp.d_y, mp.d_u
    H = np.zeros((T1 * dy, T2 * du))
    for i in range(T1):
        for j in range(T2):
            H[i * dy:(i + 1) * dy, j * du:(j + 1) * du] = mp.block(i + j + 1 + offset)
    return HankelMatrix(T1=T1, T2=T2, data=H, d_y=dy, d_u=du)


def ho_kalman(
    mp: MarkovParams,
    d_x: int,
    T1: Optional[int] = None,
    T2: Optional[int] = None,
    gap_ratio: float = 0.1,
    rank_floor: float = 1e-10,
) -> HoKalmanResult:
    """Balanced realization from the SVD of the (T1, T2) Hankel matrix.

    H = U S V^T truncated to ``d_x``; observability factor O = U S^1/2 and
    controllability factor Q = S^1/2 V^T. C is the first d_y rows of O, B the
    first d_u columns of Q, and A = O^+ H_shift Q^+ where H_shift is the
    Hankel matrix built one block further along. Needs T1 + T2 + 1 blocks
    (counting the identity) in ``mp``.
    """
    T1 = d_x if T1 is None else T1
    T2 = d_x if T2 is None else T2
    if d_x < 1 or d_x > min(T1 * mp.d_y, T2 * mp.d_u):
        raise DimensionError(f"d_x = {d_x} exceeds Hankel dimensions ({T1 * mp.d_y}, {T2 * mp.d_u})")
    H = hankel(mp, T1, T2).data
    H_shift = hankel(mp, T1, T2, offset=1).data

    U, s, Vt = np.linalg.svd(H, full_matrices=False)
    if s[0] == 0 or s[d_x - 1] < rank_floor * s[0]:
        raise RankDeficiencyError(
            f"Hankel matrix has numerical rank below {d_x} "
            f"(sigma_{d_x} / sigma_1 = {s[d_x - 1] / s[0] if s[0] else 0.0:.3g})"
        )
    if d_x < len(s) and s[d_x] > gap_ratio * s[d_x - 1]:
        warnings.warn(
            f"weak rank gap: sigma_{d_x + 1} / sigma_{d_x} = {s[d_x] / s[d_x - 1]:.3g}",
            RankGapWarning,
            stacklevel=2,
        )
    root = np.sqrt(s[:d_x])
    O = U[:, :d_x] * root
    Q = root[:, None] * Vt[:d_x]
    C = O[: mp.d_y]
    B = Q[:, : mp.d_u]
    A = np.linalg.pinv(O) @ H_shift @ np.linalg.pinv(Q)
    return HoKalmanResult(sys=StateSpace(A, B, C), singular_values=s, effective_rank=d_x, T1=T1, T2=T2)
