"""Incremental-redundancy HARQ: level-crossing state machine and renewal analysis.

Each user's packets carry a fixed first-block rate r (packet bits / slot
length).  The receiver accumulates the mutual information observed on its
scheduled slots and decodes as soon as the accumulated total crosses r; the
overshoot is discarded and the next packet starts fresh.  Every successful
decode delivers r bits, so over t slots the throughput is r * N / t with N
the ACK count.

The inter-ACK time W satisfies E[W] = 1 + sum_t P(A[t]) where A[t] is the
event that the first t slots of a packet accumulate less than r.  As r grows
the throughput r / E[W] climbs toward the mean observed mutual information
(the genie reference), at the price of proportionally longer decoding delay.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

ACK = "ack"
NACK = "nack"
IDLE = "idle"


@dataclass
class HarqUserState:
    """Per-user decoder state.

    acc: mutual information accumulated toward the current packet;
    slot: slots elapsed; last_ack_slot: time of the most recent decode;
    inter_ack: recorded inter-ACK times W(1..N).
    """

    r_first: float
    acc: float = 0.0
    ack_count: int = 0
    slot: int = 0
    last_ack_slot: int = 0
    inter_ack: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.r_first > 0:
            raise ValueError(f"HarqUserState.r_first must be > 0, got {self.r_first}")

    @property
    def elapsed_since_ack(self) -> int:
        return self.slot - self.last_ack_slot


def harq_step(state: HarqUserState, scheduled: bool, i_observed: float) -> str:
    """Advance one slot; returns 'ack' / 'nack' when scheduled, 'idle' otherwise.

    The observed mutual information must be 0 on unscheduled slots (nothing
    was transmitted to this user).  On ACK the inter-ACK time is recorded and
    the accumulator resets to zero: the leftover above r belongs to no packet.
    """
    if i_observed < 0:
        raise ValueError(f"observed mutual information must be >= 0, got {i_observed}")
    state.slot += 1
    if not scheduled:
        if i_observed != 0:
            raise ValueError("unscheduled slots carry zero mutual information")
        return IDLE
    state.acc += i_observed
    if state.acc >= state.r_first:
        state.inter_ack.append(state.slot - state.last_ack_slot)
        state.last_ack_slot = state.slot
        state.ack_count += 1
        state.acc = 0.0
        return ACK
    return NACK


def harq_throughput(state: HarqUserState, t: int) -> float:
    """r * N / t; the denominator equals sum(W) + (slots since the last ACK)."""
    if t < 1:
        raise ValueError("t must be >= 1")
    return state.r_first * state.ack_count / t


def genie_throughput(i_series: np.ndarray) -> float:
    """Time-averaged observed mutual information: the infinite-delay reference
    that HARQ approaches as the first-block rate grows."""
    arr = np.asarray(i_series, dtype=float)
    if arr.size == 0:
        raise ValueError("genie_throughput requires a nonempty series")
    return float(arr.mean())


def renewal_mean_delay(level_crossing_probs: np.ndarray, tail_tol: float = 1e-4) -> float:
    """Mean inter-ACK time 1 + sum_t P(A[t]) from the not-yet-decoded probabilities.

    The inputs must be nonincreasing in t (the events are nested).  A final
    probability above tail_tol means the series was truncated too early; the
    estimate is still returned but a truncation warning is raised.
    """
    p = np.asarray(level_crossing_probs, dtype=float)
    if p.size and (np.any(p < 0) or np.any(p > 1)):
        raise ValueError("level-crossing probabilities must lie in [0, 1]")
    if p.size > 1 and np.any(np.diff(p) > 1e-12):
        raise ValueError("level-crossing probabilities must be nonincreasing in t")
    if p.size and p[-1] >= tail_tol:
        warnings.warn(
            f"renewal series truncated with tail probability {p[-1]:.2e} >= {tail_tol:.0e}",
            RuntimeWarning,
            stacklevel=2,
        )
    return 1.0 + float(p.sum())


@dataclass
class ReplayResult:
    """Level-crossing replay of a fixed trace: ACK count, inter-ACK times and
    the residual slots after the last decode."""

    r_first: float
    slots: int
    ack_count: int
    inter_ack: np.ndarray
    delta: int

    @property
    def throughput(self) -> float:
        return self.r_first * self.ack_count / self.slots

    @property
    def mean_delay(self) -> float:
        return float(self.inter_ack.mean()) if self.ack_count else float("nan")


def replay_level_crossings(i_series: np.ndarray, r_first: float) -> ReplayResult:
    """Run the decode process over a recorded mutual-information trace.

    Unscheduled slots are zeros in the trace.  Crossings are found with
    binary searches on the cumulative sum, so sweeping many r values over the
    same trace is cheap.
    """
    if r_first <= 0:
        raise ValueError("r_first must be > 0")
    arr = np.asarray(i_series, dtype=float)
    cs = np.cumsum(arr)
    T = arr.size
    acks = []
    base = 0.0
    pos = 0
    while pos < T:
        idx = int(np.searchsorted(cs, base + r_first, side="left"))
        if idx >= T:
            break
        acks.append(idx + 1)  # slots are 1-based times
        base = cs[idx]
        pos = idx + 1
    acks_arr = np.asarray(acks, dtype=np.int64)
    inter = np.diff(np.concatenate([[0], acks_arr])) if acks else np.zeros(0, dtype=np.int64)
    delta = T - (acks_arr[-1] if acks else 0)
    return ReplayResult(r_first=float(r_first), slots=T, ack_count=len(acks),
                        inter_ack=inter, delta=int(delta))


def crossing_times_from_starts(i_series: np.ndarray, r_first: float,
                               starts: np.ndarray) -> np.ndarray:
    """First-crossing time (slots) of the accumulated trace from each start
    offset; censored starts (no crossing before the trace ends) are dropped.

    Starting from arbitrary offsets rather than from decode instants gives an
    estimator of the inter-ACK law that is independent of the replayed packet
    process, which the renewal identity is checked against.
    """
    arr = np.asarray(i_series, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(arr)])
    starts = np.asarray(starts, dtype=np.int64)
    idx = np.searchsorted(c, c[starts] + r_first, side="left")
    ok = idx <= arr.size
    return (idx - starts)[ok]


def survival_probs(crossing_times: np.ndarray, t_max: int | None = None) -> np.ndarray:
    """P(A[t]) = P(crossing time > t) for t = 1..t_max, from crossing samples."""
    w = np.asarray(crossing_times, dtype=np.int64)
    if w.size == 0:
        raise ValueError("survival_probs requires at least one crossing sample")
    if t_max is None:
        t_max = int(w.max())
    counts = np.bincount(np.clip(w, 0, t_max + 1), minlength=t_max + 2)
    alive = w.size - np.cumsum(counts)[: t_max + 1]
    return alive[1:] / w.size


def target_rate_for_fraction(
    i_series: np.ndarray,
    fraction: float,
    r_lo: float | None = None,
    r_hi: float | None = None,
    iters: int = 40,
) -> float:
    """Smallest first-block rate whose replayed throughput reaches the given
    fraction of the genie throughput of the same trace (bisection).

    Throughput is nondecreasing in r up to trace-length effects; the upper
    bracket grows geometrically until it reaches the target.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    genie = genie_throughput(i_series)
    if genie <= 0:
        raise ValueError("trace has zero mean mutual information")
    target = fraction * genie

    def tp(r):
        return replay_level_crossings(i_series, r).throughput

    lo = r_lo if r_lo is not None else genie * 0.5
    hi = r_hi if r_hi is not None else genie * 4.0
    while tp(hi) < target:
        lo = hi
        hi *= 2.0
        if replay_level_crossings(i_series, hi).ack_count < 3:
            warnings.warn("trace too short to reach the target fraction reliably",
                          RuntimeWarning, stacklevel=2)
            break
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if tp(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def write_event_log(path, i_series: np.ndarray, scheduled: np.ndarray,
                    r_first: float, user_index: int = 0) -> None:
    """Debug CSV of the decode process: slot, user, scheduled, I, feedback, acc."""
    state = HarqUserState(r_first=r_first)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["slot", "user", "scheduled", "I", "feedback", "acc"])
        for t, (i_obs, sched) in enumerate(zip(i_series, scheduled), start=1):
            fb = harq_step(state, bool(sched), float(i_obs) if sched else 0.0)
            writer.writerow([t, user_index, int(bool(sched)), f"{float(i_obs):.10g}",
                             fb, f"{state.acc:.10g}"])
