"""Multi-cell slot loop: channels, scheduling, interference, service, queues.

A run is two phases over a shared slot axis.  Warm-up bootstraps every cell's
scheduler with the deterministic-mean interference model while recording the
interference each user actually receives; the recorded samples become the
frozen per-user empirical CDFs used during measurement.  Measurement then
runs `slots_measure` slots:

  1. draw the slot's channel tensor (counter-based stream, slot-addressable);
  2. every cell picks users/powers from its own queues (batched greedy
     selection; identical to running the per-cell scheduler in parallel);
  3. realize each user's interference from the other cells' beams of the same
     slot (or from an extremal model for bound experiments);
  4. realize mutual information and the mode's service: outage rate
     (variable-rate coding), observed mutual information (HARQ accounting and
     its genie reference);
  5. flow-control arrivals and queue updates.

Everything is deterministic given the master seed; repeated runs are
bit-identical.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import harq as harq_mod
from .ici import IciModel, rank1_ici_batch
from .layout import LayoutParams, PathGainMap, build_path_gain_map, draw_channels
from .rng import PURPOSE_CHANNELS, PURPOSE_RANK1_ICI, ChannelStream
from .scheduler import (
    MODE_ARQLLC,
    MODE_GENIE,
    MODE_HARQ,
    SchedulerParams,
    flow_control,
    optimal_outage_rate,
    queue_update,
    utility_value,
)
from .selection import greedy_select_batch

_INV_LN2 = 1.0 / np.log(2.0)


@dataclass
class ExperimentConfig:
    """Full description of one experiment (everything a manifest must echo)."""

    layout: LayoutParams
    sched: SchedulerParams
    slots_warmup: int = 10_000
    slots_measure: int = 100_000
    seed: int = 12345
    r_first: object = "auto"        # 'auto', scalar, or per-user array (K,) / (C, K)
    harq_target_fraction: float = 0.97
    probe_slots: int = 20_000
    ici_iterations: int = 1
    reset_queues_after_warmup: bool = True
    trace_cell: int | None = 0

    def __post_init__(self):
        if self.slots_warmup < 1:
            raise ValueError("ExperimentConfig.slots_warmup must be >= 1")
        if self.slots_measure < 1:
            raise ValueError("ExperimentConfig.slots_measure must be >= 1")
        if self.probe_slots < 1:
            raise ValueError("ExperimentConfig.probe_slots must be >= 1")
        if self.ici_iterations < 1:
            raise ValueError("ExperimentConfig.ici_iterations must be >= 1")
        if not 0 < self.harq_target_fraction < 1:
            raise ValueError("ExperimentConfig.harq_target_fraction must be in (0, 1)")
        if self.trace_cell is not None and not 0 <= self.trace_cell < self.layout.C:
            raise ValueError("ExperimentConfig.trace_cell out of range")


@dataclass
class Metrics:
    """Aggregated results of a measurement phase.

    throughput is bits/channel use per user: mean service for the genie and
    variable-rate modes, r_first * acks / slots for HARQ.  Delay fields are
    NaN outside HARQ mode, outage fields NaN outside variable-rate mode.
    """

    mode: str
    utility: str
    slots: int
    throughput: np.ndarray            # (C, K)
    throughput_stderr: np.ndarray     # (C, K)
    mean_service: np.ndarray          # (C, K) observed service average
    per_cell_utility: np.ndarray      # (C,)
    outage_fraction: np.ndarray | None = None
    mean_delay: np.ndarray | None = None
    ack_count: np.ndarray | None = None
    r_first: np.ndarray | None = None
    queue_traj_slots: np.ndarray | None = None
    queue_traj_total: np.ndarray | None = None   # (S, C) summed backlog
    queue_traj_cell0: np.ndarray | None = None   # (S, K) traced cell backlog
    trace_cell: int | None = None
    i_trace: np.ndarray | None = None            # (K, T) observed MI, traced cell
    sched_trace: np.ndarray | None = None        # (K, T) bool
    service_trace: np.ndarray | None = None      # (K, T)

    @property
    def utility_cell0(self) -> float:
        return float(self.per_cell_utility[0])


@dataclass
class SlotRecord:
    """Observer payload handed to test hooks after each simulated slot."""

    slot: int
    users: np.ndarray
    counts: np.ndarray
    powers: np.ndarray
    steering: np.ndarray
    eff_power: np.ndarray
    scheduled: np.ndarray
    chi: np.ndarray
    i_obs: np.ndarray
    rates: np.ndarray | None
    service: np.ndarray
    arrivals: np.ndarray
    q_before: np.ndarray
    q_after: np.ndarray
    channels: np.ndarray


@dataclass
class _SimOut:
    q_final: np.ndarray
    service_sum: np.ndarray
    block_sums: np.ndarray
    outage_count: np.ndarray
    tx_count: np.ndarray
    w_sum: np.ndarray | None
    n_ack: np.ndarray | None
    chi_samples: np.ndarray | None
    i_trace: np.ndarray | None
    sched_trace: np.ndarray | None
    service_trace: np.ndarray | None
    all_traces: np.ndarray | None
    qtraj_slots: np.ndarray
    qtraj_total: np.ndarray
    qtraj_cell0: np.ndarray


def _resolve_r_first(cfg: ExperimentConfig, C: int, K: int) -> np.ndarray | None:
    """Normalize the configured first-block rate to a (C, K) array ('auto' -> None)."""
    r = cfg.r_first
    if isinstance(r, str):
        if r != "auto":
            raise ValueError(f"r_first must be 'auto', a number, or an array; got {r!r}")
        return None
    arr = np.asarray(r, dtype=float)
    if arr.ndim == 0:
        arr = np.full((C, K), float(arr))
    elif arr.shape == (K,):
        arr = np.tile(arr, (C, 1))
    elif arr.shape != (C, K):
        raise ValueError(f"r_first array must have shape ({K},) or ({C}, {K})")
    if np.any(arr <= 0):
        raise ValueError("r_first values must be > 0")
    return arr


def _simulate(
    cfg: ExperimentConfig,
    model: IciModel,
    realization: str,
    first_slot: int,
    n_slots: int,
    q_init: np.ndarray,
    mode: str,
    collect_chi: bool = False,
    r_first: np.ndarray | None = None,
    record_trace: bool = True,
    record_all_traces: bool = False,
    observer: Callable[[SlotRecord], None] | None = None,
) -> _SimOut:
    layout = cfg.layout
    C, K, M = layout.C, layout.K, layout.M
    L = min(M, K)
    params = cfg.sched
    gains = model.gains
    gx = gains.cross_tensor()
    own_g = gains.own_gains()
    chi_mean = model.chi_mean

    chan = ChannelStream(cfg.seed, PURPOSE_CHANNELS)
    rank1_stream = ChannelStream(cfg.seed, PURPOSE_RANK1_ICI)

    cdf_table = None
    if mode == MODE_ARQLLC:
        cdf_table = [[model.cdf(c, k) for k in range(K)] for c in range(C)]

    Q = np.array(q_init, dtype=float)
    service_sum = np.zeros((C, K))
    n_blocks = min(20, n_slots)
    block_edges = np.linspace(0, n_slots, n_blocks + 1).astype(int)
    block_sums = np.zeros((n_blocks, C, K))
    block_idx = np.searchsorted(block_edges, np.arange(n_slots), side="right") - 1
    outage_count = np.zeros((C, K))
    tx_count = np.zeros((C, K))

    harq_on = mode == MODE_HARQ
    if harq_on:
        if r_first is None:
            raise ValueError("HARQ mode requires resolved r_first values")
        acc = np.zeros((C, K))
        last_ack = np.zeros((C, K), dtype=np.int64)
        w_sum = np.zeros((C, K))
        n_ack = np.zeros((C, K), dtype=np.int64)

    chi_samples = np.empty((n_slots, C, K)) if collect_chi else None
    tc = cfg.trace_cell
    do_trace = record_trace and tc is not None
    i_trace = np.empty((K, n_slots)) if do_trace else None
    sched_trace = np.empty((K, n_slots), dtype=bool) if do_trace else None
    service_trace = np.empty((K, n_slots)) if do_trace else None
    all_traces = np.empty((C, K, n_slots)) if record_all_traces else None

    q_stride = max(1, n_slots // 400)
    qtraj_slots, qtraj_total, qtraj_cell0 = [], [], []

    cells = np.arange(C)
    rows_template = np.repeat(cells, L)

    for ti in range(n_slots):
        t = first_slot + ti
        cs = draw_channels(layout, t, chan)
        h = cs.h                                   # (K, C, C, M)
        own = h[:, cells, cells, :]                # (K, C, M)
        Hb = own.transpose(1, 2, 0)                # (C, M, K)

        sel = greedy_select_batch(Hb, Q, chi_mean, own_g, L)
        valid = (sel.users >= 0).ravel()
        rows = rows_template[valid]
        cols = sel.users.ravel()[valid]
        eff_power = np.zeros((C, K))
        eff_power[rows, cols] = (own_g[rows, cols] * sel.zf_gain.ravel()[valid]
                                 * sel.powers.ravel()[valid])
        scheduled = np.zeros((C, K), dtype=bool)
        scheduled[rows, cols] = sel.powers.ravel()[valid] > 0

        rates = None
        if mode == MODE_ARQLLC:
            rates = np.zeros((C, K))
            for c, k in zip(rows, cols):
                rates[c, k] = optimal_outage_rate(
                    eff_power[c, k], cdf_table[c][k], params.rate_step, params.rate_max
                )

        if realization == "mean":
            chi = chi_mean
        elif realization == "rank1":
            chi = rank1_ici_batch(gx, rank1_stream.rng_for(t))
        else:
            # interference from this slot's actual beams of all other cells
            W = np.einsum("cml,cl,cnl->cmn", sel.steering, sel.powers, sel.steering.conj())
            quad = np.einsum("kabm,bmn,kabn->kab", h.conj(), W, h).real
            chi = np.einsum("kab,kab->ka", gx, quad).T

        i_obs = np.where(scheduled, np.log1p(eff_power / (1.0 + chi)) * _INV_LN2, 0.0)

        if mode == MODE_ARQLLC:
            service = np.where((rates > 0) & (rates <= i_obs), rates, 0.0)
            sent = rates > 0
            outage_count += sent & (rates > i_obs)
            tx_count += sent
        else:
            service = i_obs

        if harq_on:
            acc = np.where(scheduled, acc + i_obs, acc)
            ack = (acc >= r_first) & scheduled
            tnow = ti + 1
            w_sum += np.where(ack, tnow - last_ack, 0)
            n_ack += ack
            last_ack = np.where(ack, tnow, last_ack)
            acc = np.where(ack, 0.0, acc)
            block_sums[block_idx[ti]] += np.where(ack, r_first, 0.0)
        else:
            block_sums[block_idx[ti]] += service
        service_sum += service

        arrivals = flow_control(Q, params)
        q_before = Q
        Q = queue_update(Q, service, arrivals)

        if collect_chi:
            chi_samples[ti] = chi
        if do_trace:
            i_trace[:, ti] = i_obs[tc]
            sched_trace[:, ti] = scheduled[tc]
            service_trace[:, ti] = service[tc]
        if record_all_traces:
            all_traces[:, :, ti] = i_obs
        if ti % q_stride == 0:
            qtraj_slots.append(t)
            qtraj_total.append(Q.sum(axis=1))
            qtraj_cell0.append(Q[tc if tc is not None else 0].copy())
        if observer is not None:
            observer(SlotRecord(
                slot=t, users=sel.users, counts=sel.counts, powers=sel.powers,
                steering=sel.steering, eff_power=eff_power, scheduled=scheduled,
                chi=np.broadcast_to(chi, (C, K)), i_obs=i_obs, rates=rates,
                service=service, arrivals=arrivals, q_before=q_before, q_after=Q,
                channels=h,
            ))

    return _SimOut(
        q_final=Q,
        service_sum=service_sum,
        block_sums=block_sums,
        outage_count=outage_count,
        tx_count=tx_count,
        w_sum=w_sum if harq_on else None,
        n_ack=n_ack if harq_on else None,
        chi_samples=chi_samples,
        i_trace=i_trace,
        sched_trace=sched_trace,
        service_trace=service_trace,
        all_traces=all_traces,
        qtraj_slots=np.asarray(qtraj_slots, dtype=np.int64),
        qtraj_total=np.asarray(qtraj_total),
        qtraj_cell0=np.asarray(qtraj_cell0),
    )


def _warmup_with_state(cfg: ExperimentConfig, gains: PathGainMap) -> tuple[IciModel, np.ndarray]:
    """Warm-up pass(es): schedule with the current model, record realized
    interference, rebuild the empirical CDFs.  Returns the model and final queues."""
    C, K = cfg.layout.C, cfg.layout.K
    model = IciModel.deterministic_mean(gains)
    q = np.zeros((C, K))
    for _ in range(cfg.ici_iterations):
        out = _simulate(
            cfg, model, realization="actual", first_slot=0, n_slots=cfg.slots_warmup,
            q_init=np.zeros((C, K)), mode=cfg.sched.mode, collect_chi=True,
            r_first=_resolve_r_first(cfg, C, K) if cfg.sched.mode == MODE_HARQ else None,
            record_trace=False,
        )
        samples = out.chi_samples.transpose(1, 2, 0)
        model = IciModel.empirical(gains, samples)
        q = out.q_final
    return model, q


def run_warmup(cfg: ExperimentConfig) -> IciModel:
    """Measure per-user interference CDFs under the configured scheduler.

    All cells run the same policy against the deterministic-mean bootstrap
    model; every slot the interference each user actually receives is
    recorded (sample count per user = slots_warmup).  With ici_iterations > 1
    the pass repeats against the freshly built CDFs.
    """
    gains = build_path_gain_map(cfg.layout)
    model, _ = _warmup_with_state(cfg, gains)
    return model


def _auto_r_first(cfg: ExperimentConfig, model: IciModel, q0: np.ndarray) -> np.ndarray:
    """Genie probe + per-user replay targeting of the first-block rate."""
    C, K = cfg.layout.C, cfg.layout.K
    probe = _simulate(
        cfg, model, realization="actual" if model.kind == "empirical" else model.kind,
        first_slot=cfg.slots_warmup, n_slots=cfg.probe_slots, q_init=q0,
        mode=MODE_GENIE, record_trace=False, record_all_traces=True,
    )
    r = np.empty((C, K))
    for c in range(C):
        for k in range(K):
            trace = probe.all_traces[c, k]
            if trace.sum() <= 0:
                r[c, k] = 1.0  # never scheduled in the probe; any rate works
                continue
            r[c, k] = harq_mod.target_rate_for_fraction(trace, cfg.harq_target_fraction)
    return r


def run_experiment(
    cfg: ExperimentConfig,
    ici_model: IciModel | None = None,
    observer: Callable[[SlotRecord], None] | None = None,
) -> Metrics:
    """Measurement phase against a frozen interference model.

    With no model given, variable-rate mode runs the warm-up first (its CDFs
    are required for rate allocation); the other modes realize interference
    from the actual cross-cell beams directly.  Deterministic given the seed.
    """
    C, K = cfg.layout.C, cfg.layout.K
    if ici_model is None:
        gains = build_path_gain_map(cfg.layout)
        if cfg.sched.mode == MODE_ARQLLC:
            ici_model, q_warm = _warmup_with_state(cfg, gains)
        else:
            ici_model, q_warm = IciModel.empirical(gains, None), np.zeros((C, K))
    else:
        q_warm = np.zeros((C, K))
    q0 = np.zeros((C, K)) if cfg.reset_queues_after_warmup else q_warm

    realization = "actual" if ici_model.kind == "empirical" else ici_model.kind
    r_first = _resolve_r_first(cfg, C, K)
    if cfg.sched.mode == MODE_HARQ and r_first is None:
        r_first = _auto_r_first(cfg, ici_model, q0)

    out = _simulate(
        cfg, ici_model, realization=realization, first_slot=cfg.slots_warmup,
        n_slots=cfg.slots_measure, q_init=q0, mode=cfg.sched.mode,
        r_first=r_first, observer=observer,
    )

    T = cfg.slots_measure
    mean_service = out.service_sum / T
    if cfg.sched.mode == MODE_HARQ:
        throughput = r_first * out.n_ack / T
        with np.errstate(invalid="ignore"):
            mean_delay = np.where(out.n_ack > 0, out.w_sum / np.maximum(out.n_ack, 1), np.nan)
    else:
        throughput = mean_service
        mean_delay = None

    widths = np.diff(np.linspace(0, T, out.block_sums.shape[0] + 1).astype(int))
    block_means = out.block_sums / widths[:, None, None]
    stderr = block_means.std(axis=0, ddof=1) / np.sqrt(out.block_sums.shape[0])

    per_cell_u = np.array([utility_value(throughput[c], cfg.sched.utility) for c in range(C)])
    outage = None
    if cfg.sched.mode == MODE_ARQLLC:
        with np.errstate(invalid="ignore"):
            outage = np.where(out.tx_count > 0, out.outage_count / np.maximum(out.tx_count, 1),
                              np.nan)
    return Metrics(
        mode=cfg.sched.mode,
        utility=cfg.sched.utility,
        slots=T,
        throughput=throughput,
        throughput_stderr=stderr,
        mean_service=mean_service,
        per_cell_utility=per_cell_u,
        outage_fraction=outage,
        mean_delay=mean_delay,
        ack_count=out.n_ack,
        r_first=r_first,
        queue_traj_slots=out.qtraj_slots,
        queue_traj_total=out.qtraj_total,
        queue_traj_cell0=out.qtraj_cell0,
        trace_cell=cfg.trace_cell,
        i_trace=out.i_trace,
        sched_trace=out.sched_trace,
        service_trace=out.service_trace,
    )


def run_bound_experiments(
    cfg: ExperimentConfig,
) -> tuple[Metrics, Metrics, Metrics]:
    """Genie-reference run under the three interference models.

    Returns (inner, actual, outer) metrics: deterministic-mean interference,
    the real cross-cell interference, and the rank-one extremal model, all
    with identical own-cell ("numerator") channel draws.  Per-user
    throughputs are ordered inner <= actual <= outer up to Monte Carlo noise,
    with the outer-inner gap bounded by gap_constant() bits.
    """
    genie_cfg = dataclasses.replace(
        cfg, sched=dataclasses.replace(cfg.sched, mode=MODE_GENIE)
    )
    gains = build_path_gain_map(cfg.layout)
    inner = run_experiment(genie_cfg, IciModel.deterministic_mean(gains))
    actual = run_experiment(genie_cfg, IciModel.empirical(gains, None))
    outer = run_experiment(genie_cfg, IciModel.rank1_extremal(gains))
    return inner, actual, outer
