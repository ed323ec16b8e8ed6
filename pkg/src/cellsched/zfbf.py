"""Zero-forcing beamforming, effective gains, SINR and mutual information."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_INV_LN2 = 1.0 / np.log(2.0)

#: Relative singular-value threshold below which the active-user channel
#: matrix is treated as rank deficient.
RANK_RTOL = 1e-9


class DegenerateChannelError(ValueError):
    """Active-user channel matrix is (numerically) rank deficient."""


def zf_steering(H_S: np.ndarray) -> np.ndarray:
    """Unit-norm ZF steering vectors for the active-user channel matrix.

    H_S has shape (M, S) with columns the active users' channel vectors.
    Column k of the result is the normalized k-th column of pinv(H_S)^H, so
    h_j^H v_k = 0 for all active j != k.

    Raises DegenerateChannelError when the smallest singular value is below
    RANK_RTOL times the largest; the caller must shrink the active set.
    """
    H_S = np.asarray(H_S)
    if H_S.ndim != 2:
        raise ValueError("H_S must be a 2-D (M, S) matrix")
    M, S = H_S.shape
    if S > M:
        raise DegenerateChannelError(f"cannot zero-force {S} users with {M} antennas")
    U, s, Vh = np.linalg.svd(H_S, full_matrices=False)
    if s[-1] < RANK_RTOL * s[0]:
        raise DegenerateChannelError(
            f"rank-deficient channel matrix: sigma_min/sigma_max = {s[-1] / s[0]:.3e}"
        )
    raw = (U / s) @ Vh  # = pinv(H_S)^H, satisfies H_S^H raw = I
    return raw / np.linalg.norm(raw, axis=0, keepdims=True)


def effective_gain(g: float, h: np.ndarray, v: np.ndarray, P: float) -> float:
    """Received signal power g * |h^H v|^2 * P."""
    return float(g * np.abs(np.vdot(h, v)) ** 2 * P)


def realized_sinr(numerator, chi):
    """numerator / (1 + chi); unit noise power is absorbed in the 1."""
    return numerator / (1.0 + chi)


def mutual_information(numerator, chi):
    """log2(1 + numerator / (1 + chi)) bits per channel use.

    Nonnegative, increasing in the numerator and strictly decreasing in the
    interference power chi whenever the numerator is positive.
    """
    return np.log1p(realized_sinr(numerator, chi)) * _INV_LN2


@dataclass
class BeamAllocation:
    """One cell's transmit choice for a slot.

    active_set: selected user indices (0-based), in selection order;
    steering: (M, |S|) unit-norm columns; powers: (|S|,) nonnegative,
    summing to at most 1.  An empty active set means the cell is silent.
    """

    active_set: list[int]
    steering: np.ndarray
    powers: np.ndarray

    def validate(self, max_users: int | None = None, tol: float = 1e-12) -> None:
        S = len(self.active_set)
        if self.steering.shape[1] != S or self.powers.shape != (S,):
            raise ValueError("BeamAllocation fields have inconsistent sizes")
        if max_users is not None and S > max_users:
            raise ValueError(f"BeamAllocation.active_set larger than {max_users}")
        if S and np.max(np.abs(np.linalg.norm(self.steering, axis=0) - 1.0)) > tol:
            raise ValueError("BeamAllocation.steering columns must be unit norm")
        if np.any(self.powers < 0) or self.powers.sum() > 1.0 + tol:
            raise ValueError("BeamAllocation.powers must be nonnegative with sum <= 1")
