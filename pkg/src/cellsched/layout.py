"""1-D torus cell layout, static path gains, and Rayleigh block-fading draws.

Cells of unit width sit at integer positions 0..C-1 on a ring (modulo-C
distance), which removes border effects.  Users are placed on a uniform grid
inside each cell.  The path gain from BS c' to user (k, c) is

    g = G0 / (1 + (d / delta)^nu),   d = torus distance from u(k, c) to c',

so G0 is the gain at distance zero and delta is the 3 dB breakpoint.  Fading
is i.i.d. CN(0, 1) per antenna, redrawn independently every slot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import ChannelStream


@dataclass(frozen=True)
class LayoutParams:
    """Cell-grid geometry and propagation constants.

    C: number of cells, K: users per cell, M: BS antennas,
    G0: gain scale (linear power ratio), nu: propagation exponent,
    delta: 3 dB breakpoint distance in cell widths.
    """

    C: int
    K: int
    M: int
    G0: float
    nu: float
    delta: float

    def __post_init__(self):
        if self.C < 1:
            raise ValueError(f"LayoutParams.C must be >= 1, got {self.C}")
        if self.K < 1:
            raise ValueError(f"LayoutParams.K must be >= 1, got {self.K}")
        if self.M < 1:
            raise ValueError(f"LayoutParams.M must be >= 1, got {self.M}")
        if not self.G0 > 0:
            raise ValueError(f"LayoutParams.G0 must be > 0, got {self.G0}")
        if not self.nu > 0:
            raise ValueError(f"LayoutParams.nu must be > 0, got {self.nu}")
        if not self.delta > 0:
            raise ValueError(f"LayoutParams.delta must be > 0, got {self.delta}")


def user_position(k: int, c: int, K: int) -> float:
    """Grid position u(k, c) = (2k - K - 1) / (2K) + c, with k in 1..K."""
    if not 1 <= k <= K:
        raise ValueError(f"user index k must be in 1..{K}, got {k}")
    return (2 * k - K - 1) / (2 * K) + c


def torus_distance(u: float, cprime: float, C: int) -> float:
    """min_z |u - cprime + z*C|; always in [0, C/2]."""
    r = (u - cprime) % C
    return min(r, C - r)


def path_gain(layout: LayoutParams, k: int, c: int, cprime: int) -> float:
    """Gain from BS cprime to user k (1-based) of cell c; positive, decreasing in distance."""
    d = torus_distance(user_position(k, c, layout.K), cprime, layout.C)
    return layout.G0 / (1.0 + (d / layout.delta) ** layout.nu)


@dataclass(frozen=True)
class PathGainMap:
    """Static gain tensor g[k, c, cprime] (0-based user axis), shape (K, C, C)."""

    g: np.ndarray

    @property
    def K(self) -> int:
        return self.g.shape[0]

    @property
    def C(self) -> int:
        return self.g.shape[1]

    def own_gains(self) -> np.ndarray:
        """Own-BS gains as a (C, K) array."""
        idx = np.arange(self.C)
        return self.g[:, idx, idx].T.copy()

    def cross_tensor(self) -> np.ndarray:
        """Copy of g with the own-BS entries zeroed (used for interference sums)."""
        gx = self.g.copy()
        idx = np.arange(self.C)
        gx[:, idx, idx] = 0.0
        return gx

    def mean_cross(self) -> np.ndarray:
        """Mean interference power per user under full-power interferers, (C, K)."""
        return self.cross_tensor().sum(axis=2).T.copy()


def build_path_gain_map(layout: LayoutParams) -> PathGainMap:
    """Evaluate the gain formula for every (user, cell, BS) triple.

    Gains depend on the user's in-cell offset and on (c - cprime) mod C only,
    so a (K, C) table of distances covers the full tensor.
    """
    K, C = layout.K, layout.C
    base = np.array([user_position(k, 0, K) for k in range(1, K + 1)])
    # dist[k, o]: torus distance from u(k, c) to BS c - o (any c)
    offs = np.arange(C)
    r = (base[:, None] + offs[None, :]) % C
    dist = np.minimum(r, C - r)
    table = layout.G0 / (1.0 + (dist / layout.delta) ** layout.nu)
    cidx = np.arange(C)
    omap = (cidx[:, None] - cidx[None, :]) % C  # omap[c, cprime] = c - cprime mod C
    g = table[:, omap]  # (K, C, C)
    return PathGainMap(g=np.ascontiguousarray(g))


@dataclass(frozen=True)
class ChannelSet:
    """One slot's fading realizations h[k, c, cprime] in C^M, shape (K, C, C, M)."""

    h: np.ndarray
    slot: int


def draw_channels(layout: LayoutParams, slot: int, stream: ChannelStream) -> ChannelSet:
    """Draw the full (K, C, C, M) tensor of i.i.d. CN(0, 1) channel vectors.

    Deterministic given (stream master seed, slot): the same call repeated is
    bit-identical, and slots are independent by the counter construction.
    """
    rng = stream.rng_for(slot)
    K, C, M = layout.K, layout.C, layout.M
    raw = rng.standard_normal((K, C, C, M, 2))
    h = raw.view(np.complex128).reshape(K, C, C, M) * np.sqrt(0.5)
    return ChannelSet(h=h, slot=slot)
