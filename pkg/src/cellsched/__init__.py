"""Decentralized multi-cell MU-MIMO downlink scheduling simulator.

Cells schedule independently with zero-forcing beamforming and a
drift-plus-penalty policy; the interference each user sees is random because
it depends on every other cell's slot-by-slot beam choices.  The package
implements and compares two joint scheduling/retransmission schemes --
adaptive variable-rate coding with link-layer ARQ, and incremental-redundancy
HARQ driven by fed-back mutual information -- together with the extremal
interference models that bracket the achievable rates.
"""

__version__ = "0.1.0"

from .engine import ExperimentConfig, Metrics, run_bound_experiments, run_experiment, run_warmup
from .harq import HarqUserState, genie_throughput, harq_step, harq_throughput, renewal_mean_delay
from .ici import (
    EmpiricalCdf,
    IciModel,
    cdf_build,
    cdf_eval,
    gap_constant,
    instantaneous_ici,
    mean_ici,
    rank1_ici_sample,
)
from .layout import (
    ChannelSet,
    LayoutParams,
    PathGainMap,
    build_path_gain_map,
    draw_channels,
    path_gain,
    torus_distance,
    user_position,
)
from .rng import ChannelStream, slot_rng
from .scheduler import (
    RateAllocation,
    SchedulerParams,
    SchedulerState,
    arqllc_rate_allocation,
    arqllc_service,
    flow_control,
    kappa,
    kappa_mc,
    queue_update,
    schedule_slot,
)
from .selection import SelectionInput, greedy_select, weighted_waterfilling
from .zfbf import (
    BeamAllocation,
    DegenerateChannelError,
    effective_gain,
    mutual_information,
    realized_sinr,
    zf_steering,
)

__all__ = [
    "__version__",
    "BeamAllocation",
    "ChannelSet",
    "ChannelStream",
    "DegenerateChannelError",
    "EmpiricalCdf",
    "ExperimentConfig",
    "HarqUserState",
    "IciModel",
    "LayoutParams",
    "Metrics",
    "PathGainMap",
    "RateAllocation",
    "SchedulerParams",
    "SchedulerState",
    "SelectionInput",
    "arqllc_rate_allocation",
    "arqllc_service",
    "build_path_gain_map",
    "cdf_build",
    "cdf_eval",
    "draw_channels",
    "effective_gain",
    "flow_control",
    "gap_constant",
    "genie_throughput",
    "greedy_select",
    "harq_step",
    "harq_throughput",
    "instantaneous_ici",
    "kappa",
    "kappa_mc",
    "mean_ici",
    "mutual_information",
    "path_gain",
    "queue_update",
    "rank1_ici_sample",
    "realized_sinr",
    "renewal_mean_delay",
    "run_bound_experiments",
    "run_experiment",
    "run_warmup",
    "schedule_slot",
    "slot_rng",
    "torus_distance",
    "user_position",
    "weighted_waterfilling",
    "zf_steering",
]
