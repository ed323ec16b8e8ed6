"""Drift-plus-penalty scheduler: virtual queues, flow control, rate allocation.

Each cell maintains one virtual queue per user (an accounting scalar, not a
packet buffer).  Per slot:

  1. admit virtual arrivals A maximizing V * U(A) - sum_k A_k Q_k over
     [0, A_max]^K (closed form for proportional-fair and max-min utilities);
  2. choose the transmit covariance to maximize the queue-weighted service
     surrogate (greedy selection + waterfilling against mean interference);
  3. in variable-rate/outage mode, pick each active user's coding rate to
     maximize the expected outage rate r * F(S / (2^r - 1) - 1) on a grid;
  4. update queues with Q' = max(0, Q - service) + A, where service is the
     outage rate (variable-rate mode) or the observed mutual information
     (HARQ and genie-reference modes).

Larger V drives the achieved utility closer to optimal at the price of
linearly larger queues; the shortfall is bounded by kappa / V.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ici import EmpiricalCdf, IciModel
from .selection import SelectionInput, greedy_select, weighted_waterfilling
from .zfbf import BeamAllocation, zf_steering

_INV_LN2 = 1.0 / np.log(2.0)

UTILITY_PF = "pf"
UTILITY_MAXMIN = "maxmin"
MODE_ARQLLC = "arqllc"
MODE_HARQ = "harq"
MODE_GENIE = "genie"

_UTILITIES = (UTILITY_PF, UTILITY_MAXMIN)
_MODES = (MODE_ARQLLC, MODE_HARQ, MODE_GENIE)


@dataclass(frozen=True)
class SchedulerParams:
    """Policy constants: penalty weight V, arrival cap A_max (bits/channel
    use), utility ('pf' = sum log, 'maxmin' = min) and service mode."""

    V: float = 50.0
    A_max: float = 50.0
    utility: str = UTILITY_PF
    mode: str = MODE_ARQLLC
    rate_step: float = 0.01
    rate_max: float = 20.0

    def __post_init__(self):
        if not self.V > 0:
            raise ValueError(f"SchedulerParams.V must be > 0, got {self.V}")
        if not self.A_max > 0:
            raise ValueError(f"SchedulerParams.A_max must be > 0, got {self.A_max}")
        if self.utility not in _UTILITIES:
            raise ValueError(f"SchedulerParams.utility must be one of {_UTILITIES}")
        if self.mode not in _MODES:
            raise ValueError(f"SchedulerParams.mode must be one of {_MODES}")
        if not 0 < self.rate_step <= self.rate_max:
            raise ValueError("SchedulerParams.rate_step must be in (0, rate_max]")


@dataclass
class SchedulerState:
    """Per-cell mutable state: queue backlogs and running service averages."""

    Q: np.ndarray
    service_sum: np.ndarray | None = None
    slots: int = 0

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        if self.service_sum is None:
            self.service_sum = np.zeros_like(self.Q)

    def record_service(self, service: np.ndarray) -> None:
        self.service_sum = self.service_sum + np.asarray(service, dtype=float)
        self.slots += 1

    def average_rates(self) -> np.ndarray:
        return self.service_sum / max(self.slots, 1)


@dataclass
class RateAllocation:
    """Coding rates for the active users, aligned with BeamAllocation.active_set.
    Empty in HARQ / genie modes (rate adaptation happens via retransmission)."""

    rates: np.ndarray

    @classmethod
    def none(cls) -> "RateAllocation":
        return cls(rates=np.zeros(0))


def flow_control(Q: np.ndarray, params: SchedulerParams) -> np.ndarray:
    """Virtual arrivals maximizing V * U(A) - sum A_k Q_k over [0, A_max]^K.

    Proportional fair: A_k = min(A_max, V / Q_k), hitting the cap at Q_k = 0.
    Max-min: the objective is linear in the common arrival level, so the
    solution is bang-bang: A_max for everyone iff V >= sum_k Q_k, else 0.
    Works on a (K,) vector or a batched (C, K) array (per-row cells).
    """
    Q = np.asarray(Q, dtype=float)
    if params.utility == UTILITY_PF:
        with np.errstate(divide="ignore"):
            return np.where(Q > 0, np.minimum(params.A_max, params.V / np.where(Q > 0, Q, 1.0)),
                            params.A_max)
    total = Q.sum(axis=-1, keepdims=True)
    return np.where(params.V >= total, params.A_max, 0.0) * np.ones_like(Q)


def queue_update(Q: np.ndarray, service: np.ndarray, arrivals: np.ndarray) -> np.ndarray:
    """Q' = max(0, Q - service) + arrivals (elementwise, any matching shape)."""
    return np.maximum(0.0, Q - service) + arrivals


class _RateGrid:
    """Cached coding-rate grid {step, 2*step, ..., rate_max} and 2^r - 1."""

    _cache: dict = {}

    @classmethod
    def get(cls, step: float, rmax: float):
        key = (step, rmax)
        if key not in cls._cache:
            n = int(round(rmax / step))
            r = step * np.arange(1, n + 1)
            cls._cache[key] = (r, np.expm1(r * np.log(2.0)))
        return cls._cache[key]


def optimal_outage_rate(
    eff_power: float, F: EmpiricalCdf, rate_step: float = 0.01, rate_max: float = 20.0
) -> float:
    """Grid argmax of the expected outage rate r * F(S / (2^r - 1) - 1).

    S = g |h^H v|^2 P is the received signal power fixed by the power
    allocation; F is the user's interference CDF.  Returns 0 when every grid
    point has zero objective (hopeless interference).

    Only grid points whose interference threshold falls inside the CDF's
    sample range need evaluating: below that window F = 1 so the objective is
    r itself (best at the window edge), above it F = 0.
    """
    if eff_power <= 0:
        return 0.0
    r, pow2m1 = _RateGrid.get(rate_step, rate_max)
    n = r.size
    x_min = float(F.samples[0])
    x_max = float(F.samples[-1])
    # largest grid index with threshold >= x_max (F = 1), -1 if none
    r_full = np.log2(1.0 + eff_power / (1.0 + x_max))
    i_full = min(int(np.floor(r_full / rate_step + 1e-9)), n) - 1
    best_r, best_obj = (r[i_full], r[i_full]) if i_full >= 0 else (0.0, 0.0)
    # beyond this index the threshold is below every sample (F = 0)
    r_zero = np.log2(1.0 + eff_power / (1.0 + x_min))
    i_hi = min(int(np.ceil(r_zero / rate_step)), n)
    lo, hi = i_full + 1, i_hi
    if lo < hi:
        # coarse pass; the objective r * F is bounded on each coarse interval
        # by (top rate) * (F at bottom rate) since F(threshold(r)) is
        # nonincreasing in r, so most intervals prune away exactly
        block = 64
        if hi - lo <= 2 * block:
            sl = slice(lo, hi)
            obj = r[sl] * F.eval(eff_power / pow2m1[sl] - 1.0)
            k = int(np.argmax(obj))
            if obj[k] > best_obj:
                best_r, best_obj = r[sl][k], obj[k]
        else:
            edges = np.arange(lo, hi, block)
            Fe = F.eval(eff_power / pow2m1[edges] - 1.0)
            coarse_obj = r[edges] * Fe
            k = int(np.argmax(coarse_obj))
            if coarse_obj[k] > best_obj:
                best_r, best_obj = r[edges][k], coarse_obj[k]
            tops = np.minimum(edges + block, hi) - 1
            bounds = r[tops] * Fe
            for i in np.argsort(-bounds):
                if bounds[i] <= best_obj:
                    break
                sl = slice(edges[i] + 1, tops[i] + 1)
                obj = r[sl] * F.eval(eff_power / pow2m1[sl] - 1.0)
                j = int(np.argmax(obj))
                if obj[j] > best_obj:
                    best_r, best_obj = r[sl][j], obj[j]
    return float(best_r) if best_obj > 0 else 0.0


def arqllc_rate_allocation(
    eff_powers: np.ndarray,
    cdfs: list[EmpiricalCdf],
    rate_step: float = 0.01,
    rate_max: float = 20.0,
) -> RateAllocation:
    """Outage-rate optimization run separately for each active user."""
    rates = np.array(
        [optimal_outage_rate(S, F, rate_step, rate_max) for S, F in zip(eff_powers, cdfs)]
    )
    return RateAllocation(rates=rates)


def arqllc_service(r, I):
    """Outage service: r bits delivered iff r <= I (boundary inclusive), else 0."""
    r = np.asarray(r, dtype=float)
    return np.where(r <= np.asarray(I), r, 0.0)


def schedule_slot(
    H_own: np.ndarray,
    Q: np.ndarray,
    ici_model: IciModel,
    params: SchedulerParams,
    cell: int,
    max_users: int | None = None,
) -> tuple[BeamAllocation, RateAllocation]:
    """One cell's transmit decision for a slot.

    Step 1 selects users and powers greedily against mean interference with
    the current queues as weights; step 2 (variable-rate mode only) optimizes
    each active user's outage rate against its interference CDF.  All queues
    zero means the cell stays silent.
    """
    M, K = H_own.shape
    if max_users is None:
        max_users = min(M, K)
    own_g = ici_model.gains.g[:, cell, cell]
    chibar = ici_model.chi_mean[cell]
    inp = SelectionInput(H=H_own, weights=np.asarray(Q, dtype=float),
                         mean_ici=chibar, own_gains=own_g)
    active = greedy_select(inp, max_users)
    if not active:
        return BeamAllocation(active_set=[], steering=np.zeros((M, 0), dtype=complex),
                              powers=np.zeros(0)), RateAllocation.none()
    V = zf_steering(H_own[:, active])
    zf_gain = np.abs(np.einsum("mk,mk->k", H_own[:, active].conj(), V)) ** 2
    a = own_g[active] * zf_gain / (1.0 + chibar[active])
    P = weighted_waterfilling(inp.weights[active], a)
    alloc = BeamAllocation(active_set=active, steering=V, powers=P)
    if params.mode != MODE_ARQLLC:
        return alloc, RateAllocation.none()
    eff = own_g[active] * zf_gain * P
    cdfs = [ici_model.cdf(cell, k) for k in active]
    return alloc, arqllc_rate_allocation(eff, cdfs, params.rate_step, params.rate_max)


def kappa(params: SchedulerParams, numerators: np.ndarray, chis) -> float:
    """Drift constant 0.5 * (K A_max^2 + sum_k E[log2^2(1 + S_k / (1 + chi_k))])
    from Monte Carlo draws.

    numerators: (N, K) draws of g_k ||h_k||^2; chis: matching draws of the
    interference power (scalar 0 for an isolated cell).  The achieved utility
    of the policy falls short of optimal by at most kappa / V.
    """
    numerators = np.atleast_2d(np.asarray(numerators, dtype=float))
    _, K = numerators.shape
    log_terms = np.log1p(numerators / (1.0 + np.asarray(chis, dtype=float))) * _INV_LN2
    return 0.5 * (K * params.A_max**2 + float((log_terms**2).mean(axis=0).sum()))


def kappa_mc(
    params: SchedulerParams,
    M: int,
    own_gains: np.ndarray,
    ici_model: IciModel,
    cell: int = 0,
    n_draws: int = 100_000,
    seed: int = 0,
) -> float:
    """kappa estimated for Rayleigh fading: ||h||^2 ~ chi-squared(2M)/2 per user,
    interference drawn from the given model."""
    rng = np.random.default_rng(seed)
    K = len(own_gains)
    hsq = rng.standard_gamma(M, size=(n_draws, K))
    numerators = np.asarray(own_gains) * hsq
    if ici_model.kind == "mean":
        chis = ici_model.chi_mean[cell][None, :]
    elif ici_model.kind == "rank1":
        g = np.delete(ici_model.gains.g[:, cell, :], cell, axis=1)  # (K, C-1)
        chis = np.einsum("nkj,kj->nk", rng.standard_exponential((n_draws, K, g.shape[1])), g)
    else:
        if ici_model.samples is None:
            raise ValueError("empirical kappa draw requires warm-up samples")
        N = ici_model.samples.shape[2]
        chis = ici_model.samples[cell, np.arange(K)[None, :], rng.integers(0, N, (n_draws, K))]
    return kappa(params, numerators, chis)


def utility_value(throughputs: np.ndarray, utility: str) -> float:
    """Network utility of a per-user throughput vector (natural log for PF)."""
    t = np.asarray(throughputs, dtype=float)
    if utility == UTILITY_PF:
        with np.errstate(divide="ignore"):
            return float(np.sum(np.log(t)))
    return float(t.min())
