"""Experiment runner CLI.

Subcommands (one per invocation; every command writes a run manifest JSON
next to its outputs):

  throughput-profile   per-user throughput of the reference cell under the
                       selected schemes (inner_bound | genie | harq@target |
                       arqllc | outer_bound) -> CSV
  rate-delay           HARQ throughput vs decoding delay sweep for selected
                       users, with the renewal-formula cross-estimate -> CSV
  selftest             fast invariant checks of all modules (< 60 s)
  replay               re-run a recorded manifest; outputs are byte-identical

Configs are flat JSON; missing keys fall back to the default system
(C=18 cells, K=36 users, M=2 antennas, 60 dB edge gain, exponent 3.0,
breakpoint 0.05, V=50, A_max=50).  Unknown keys are rejected.  Exit codes:
0 success, 1 validation error, 2 runtime failure.

Interference CDFs can be cached to a sidecar file (.npy tensor of shape
(C, K, N), per-user samples sorted ascending) and reused across runs via
--cdf-cache.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
import traceback
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import harq as harq_mod
from .engine import ExperimentConfig, Metrics, run_experiment
from .ici import IciModel, load_cdf_sidecar, save_cdf_sidecar
from .layout import LayoutParams, build_path_gain_map, user_position
from .scheduler import MODE_ARQLLC, MODE_GENIE, SchedulerParams

PROFILE_HEADER = "user_index,position,mode,throughput_bpcu,stderr"
RATE_DELAY_HEADER = (
    "user_index,r_first,mean_delay_slots_sim,mean_delay_slots_renewal,"
    "throughput_bpcu,genie_fraction"
)
PROFILE_MODES = ("inner_bound", "genie", "harq@target", "arqllc", "outer_bound")

_DEFAULTS = {
    "C": 18,
    "K": 36,
    "M": 2,
    "G0_db": 60.0,
    "nu": 3.0,
    "delta": 0.05,
    "V": 50.0,
    "A_max": 50.0,
    "utility": "pf",
    "mode": "genie",
    "rate_step": 0.01,
    "rate_max": 20.0,
    "slots_warmup": 10_000,
    "slots_measure": 100_000,
    "seed": 12345,
    "r_first": "auto",
    "harq_target_fraction": 0.97,
    "probe_slots": 20_000,
    "ici_iterations": 1,
    "reset_queues_after_warmup": True,
    "trace_cell": 0,
}

# Frozen regression hash of the tiny seeded profile run (see cmd_selftest).
SELFTEST_GOLDEN_SHA256 = "7694c23c94475777f9a29d912dfdeb7328f70a1882cc50ab5c2f66f5be3fbccc"


def config_to_dict(cfg: ExperimentConfig) -> dict:
    r_first = cfg.r_first
    if isinstance(r_first, np.ndarray):
        r_first = r_first.tolist()
    return {
        "C": cfg.layout.C,
        "K": cfg.layout.K,
        "M": cfg.layout.M,
        "G0_db": 10.0 * np.log10(cfg.layout.G0),
        "nu": cfg.layout.nu,
        "delta": cfg.layout.delta,
        "V": cfg.sched.V,
        "A_max": cfg.sched.A_max,
        "utility": cfg.sched.utility,
        "mode": cfg.sched.mode,
        "rate_step": cfg.sched.rate_step,
        "rate_max": cfg.sched.rate_max,
        "slots_warmup": cfg.slots_warmup,
        "slots_measure": cfg.slots_measure,
        "seed": cfg.seed,
        "r_first": r_first,
        "harq_target_fraction": cfg.harq_target_fraction,
        "probe_slots": cfg.probe_slots,
        "ici_iterations": cfg.ici_iterations,
        "reset_queues_after_warmup": cfg.reset_queues_after_warmup,
        "trace_cell": cfg.trace_cell,
    }


def config_from_dict(data: dict) -> ExperimentConfig:
    unknown = sorted(set(data) - set(_DEFAULTS))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    merged = dict(_DEFAULTS, **data)
    layout = LayoutParams(
        C=int(merged["C"]), K=int(merged["K"]), M=int(merged["M"]),
        G0=float(10.0 ** (float(merged["G0_db"]) / 10.0)),
        nu=float(merged["nu"]), delta=float(merged["delta"]),
    )
    sched = SchedulerParams(
        V=float(merged["V"]), A_max=float(merged["A_max"]),
        utility=str(merged["utility"]), mode=str(merged["mode"]),
        rate_step=float(merged["rate_step"]), rate_max=float(merged["rate_max"]),
    )
    return ExperimentConfig(
        layout=layout, sched=sched,
        slots_warmup=int(merged["slots_warmup"]),
        slots_measure=int(merged["slots_measure"]),
        seed=int(merged["seed"]),
        r_first=merged["r_first"],
        harq_target_fraction=float(merged["harq_target_fraction"]),
        probe_slots=int(merged["probe_slots"]),
        ici_iterations=int(merged["ici_iterations"]),
        reset_queues_after_warmup=bool(merged["reset_queues_after_warmup"]),
        trace_cell=None if merged["trace_cell"] is None else int(merged["trace_cell"]),
    )


def parse_config(path: str | Path | None) -> ExperimentConfig:
    """Load a flat JSON config; missing keys take the defaults above."""
    if path is None:
        return config_from_dict({})
    p = Path(path)
    if not p.exists():
        raise ValueError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed config {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValueError(f"config {p} must be a JSON object")
    return config_from_dict(data)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def _write_csv(path: Path, header: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header.split(","))
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_manifest(out_dir: Path, command: str, cfg: ExperimentConfig,
                   extra: dict, outputs: list[str], runtime: float) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "config": config_to_dict(cfg),
        "args": extra,
        "outputs": outputs,
        "runtime_sec": round(runtime, 3),
    }
    path = out_dir / f"{command.replace('-', '_')}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _harq_target_rows(metrics: Metrics, fraction: float):
    """Per-user HARQ throughput at the targeted fraction of the genie rates,
    replayed over the recorded per-user traces of the traced cell."""
    K, T = metrics.i_trace.shape
    tps = np.zeros(K)
    errs = np.zeros(K)
    for k in range(K):
        trace = metrics.i_trace[k]
        if trace.sum() <= 0:
            continue
        r = harq_mod.target_rate_for_fraction(trace, fraction)
        tps[k] = harq_mod.replay_level_crossings(trace, r).throughput
        edges = np.linspace(0, T, 11).astype(int)
        btp = [
            harq_mod.replay_level_crossings(trace[a:b], r).throughput
            for a, b in zip(edges[:-1], edges[1:])
        ]
        errs[k] = np.std(btp, ddof=1) / np.sqrt(len(btp))
    return tps, errs


def cmd_throughput_profile(cfg: ExperimentConfig, modes: list[str], out_dir: Path,
                           cdf_cache: Path | None = None) -> list[Path]:
    """Per-user (cell 0) throughput under the requested schemes -> one CSV."""
    for m in modes:
        if m not in PROFILE_MODES:
            raise ValueError(f"unknown profile mode {m!r}; choose from {PROFILE_MODES}")
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    gains = build_path_gain_map(cfg.layout)
    K = cfg.layout.K
    results: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    genie_cfg = replace(cfg, sched=replace(cfg.sched, mode=MODE_GENIE))
    genie_metrics = None
    if "genie" in modes or "harq@target" in modes:
        genie_metrics = run_experiment(genie_cfg, IciModel.empirical(gains, None))
        results["genie"] = (genie_metrics.throughput[0], genie_metrics.throughput_stderr[0])
    if "inner_bound" in modes:
        m = run_experiment(genie_cfg, IciModel.deterministic_mean(gains))
        results["inner_bound"] = (m.throughput[0], m.throughput_stderr[0])
    if "outer_bound" in modes:
        m = run_experiment(genie_cfg, IciModel.rank1_extremal(gains))
        results["outer_bound"] = (m.throughput[0], m.throughput_stderr[0])
    if "arqllc" in modes:
        arq_cfg = replace(cfg, sched=replace(cfg.sched, mode=MODE_ARQLLC))
        model = None
        if cdf_cache is not None:
            if Path(cdf_cache).exists():
                model = load_cdf_sidecar(cdf_cache, gains)
            else:
                model = run_warmup(arq_cfg)
                save_cdf_sidecar(cdf_cache, model)
        m = run_experiment(arq_cfg, model)
        results["arqllc"] = (m.throughput[0], m.throughput_stderr[0])
    if "harq@target" in modes:
        results["harq@target"] = _harq_target_rows(genie_metrics, cfg.harq_target_fraction)

    rows = []
    for mode in modes:
        tps, errs = results[mode]
        for k in range(K):
            rows.append((k + 1, user_position(k + 1, 0, K), mode, float(tps[k]), float(errs[k])))
    csv_path = out_dir / "throughput_profile.csv"
    _write_csv(csv_path, PROFILE_HEADER, rows)
    manifest = write_manifest(out_dir, "throughput-profile", cfg, {"modes": modes},
                              [csv_path.name], time.time() - t0)
    return [csv_path, manifest]


def cmd_rate_delay(cfg: ExperimentConfig, users: list[int], r_multipliers: list[float],
                   out_dir: Path) -> list[Path]:
    """HARQ throughput/decoding-delay sweep for the given users of cell 0.

    One genie-reference run records each user's observed mutual-information
    trace; every multiplier sets r_first = multiplier * (mean observed MI) and
    the packet process is replayed over the trace.  The renewal column
    re-estimates the mean inter-ACK time from first-crossing times of windows
    started at every slot, independently of the replayed packets.
    """
    if not users:
        raise ValueError("rate-delay needs at least one user index")
    K = cfg.layout.K
    for u in users:
        if not 1 <= u <= K:
            raise ValueError(f"user index {u} out of range 1..{K}")
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    gains = build_path_gain_map(cfg.layout)
    genie_cfg = replace(cfg, sched=replace(cfg.sched, mode=MODE_GENIE))
    metrics = run_experiment(genie_cfg, IciModel.empirical(gains, None))

    rows = []
    for u in users:
        trace = metrics.i_trace[u - 1]
        genie_tp = float(trace.mean())
        if genie_tp <= 0:
            continue
        for mult in r_multipliers:
            r = mult * genie_tp
            rep = harq_mod.replay_level_crossings(trace, r)
            starts = np.arange(trace.size)
            w = harq_mod.crossing_times_from_starts(trace, r, starts)
            renewal = (
                harq_mod.renewal_mean_delay(harq_mod.survival_probs(w))
                if w.size else float("nan")
            )
            rows.append((u, r, rep.mean_delay, renewal, rep.throughput,
                         rep.throughput / genie_tp))
    csv_path = out_dir / "rate_delay.csv"
    _write_csv(csv_path, RATE_DELAY_HEADER, rows)
    manifest = write_manifest(out_dir, "rate-delay", cfg,
                              {"users": users, "r_multipliers": list(r_multipliers)},
                              [csv_path.name], time.time() - t0)
    return [csv_path, manifest]


def _tiny_profile_bytes(out_dir: Path) -> bytes:
    cfg = config_from_dict({
        "C": 3, "K": 4, "M": 2, "slots_warmup": 300, "slots_measure": 600,
        "probe_slots": 300, "seed": 987654321,
    })
    csv_path, _ = cmd_throughput_profile(cfg, ["inner_bound", "genie", "arqllc"], out_dir)
    return csv_path.read_bytes()


def cmd_selftest(out_dir: Path | None = None) -> int:
    """Small-scale invariant checks across all modules; nonzero exit on failure."""
    import tempfile

    from .ici import EmpiricalCdf, validate_cdf_samples
    from .scheduler import flow_control, queue_update
    from .selection import waterfill_exact, weighted_waterfilling
    from .zfbf import zf_steering

    failures = []

    def check(name: str, fn):
        try:
            fn()
            print(f"selftest {name}: PASS")
        except Exception as exc:  # noqa: BLE001 - report and continue
            failures.append(name)
            print(f"selftest {name}: FAIL ({exc})")

    def zf_invariant():
        rng = np.random.default_rng(0)
        for _ in range(300):
            M = int(rng.integers(2, 5))
            S = int(rng.integers(2, M + 1))
            H = rng.standard_normal((M, S)) + 1j * rng.standard_normal((M, S))
            V = zf_steering(H)
            cross = np.abs(H.conj().T @ V)
            off = cross - np.diag(np.diag(cross))
            assert off.max() <= 1e-10 * np.linalg.norm(H, axis=0).max()
            assert np.abs(np.linalg.norm(V, axis=0) - 1).max() <= 1e-12

    def waterfill_agreement():
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(1, 5))
            w = rng.uniform(0.1, 5, n)
            a = rng.uniform(0.1, 50, n)
            p1 = weighted_waterfilling(w, a)
            p2 = waterfill_exact(w, a)
            assert abs(p1.sum() - 1) <= 1e-10
            assert np.abs(p1 - p2).max() <= 1e-7

    def queue_nonneg():
        rng = np.random.default_rng(2)
        q = rng.uniform(0, 5, 8)
        for _ in range(500):
            q = queue_update(q, rng.uniform(0, 3, 8), rng.uniform(0, 2, 8))
            assert np.all(q >= 0)

    def pf_flow_optimality():
        rng = np.random.default_rng(3)
        from .scheduler import SchedulerParams as SP

        for _ in range(50):
            params = SP(V=float(rng.uniform(1, 100)), A_max=float(rng.uniform(1, 20)),
                        utility="pf", mode="genie")
            Q = rng.uniform(0, 50, 2)
            A = flow_control(Q, params)
            grid = np.linspace(1e-4, params.A_max, 400)
            g1, g2 = np.meshgrid(grid, grid, indexing="ij")
            obj = params.V * (np.log(g1) + np.log(g2)) - g1 * Q[0] - g2 * Q[1]
            best = params.V * np.log(A).sum() - (A * Q).sum()
            assert best >= obj.max() - 1e-6

    def cdf_sidecar():
        rng = np.random.default_rng(4)
        samples = np.sort(rng.uniform(0, 2, (2, 3, 50)), axis=-1)
        validate_cdf_samples(samples, 2, 3)
        bad = samples.copy()
        bad[0, 0, 0], bad[0, 0, -1] = bad[0, 0, -1], bad[0, 0, 0]
        try:
            validate_cdf_samples(bad, 2, 3)
        except ValueError as exc:
            assert "sorted ascending" in str(exc)
        else:
            raise AssertionError("corrupted sidecar accepted")
        F = EmpiricalCdf.build([1.0, 2.0, 3.0])
        assert F.eval(2.0) == 2 / 3 and F.eval(0.0) == 0 and F.eval(99) == 1

    def renewal_identity():
        rng = np.random.default_rng(5)
        r = 3.0
        inc = rng.exponential(1.0, 300_000)
        rep = harq_mod.replay_level_crossings(inc, r)
        sim_mean = rep.inter_ack.mean()
        w = harq_mod.crossing_times_from_starts(inc, r, np.arange(0, inc.size - 100, 7))
        renewal = harq_mod.renewal_mean_delay(harq_mod.survival_probs(w))
        assert abs(renewal - sim_mean) / sim_mean < 0.03

    def regression_hash():
        with tempfile.TemporaryDirectory() as tmp:
            b1 = _tiny_profile_bytes(Path(tmp) / "a")
            b2 = _tiny_profile_bytes(Path(tmp) / "b")
            assert b1 == b2, "seeded rerun not byte-identical"
            digest = hashlib.sha256(b1).hexdigest()
            if SELFTEST_GOLDEN_SHA256 != "__GOLDEN_PLACEHOLDER__":
                assert digest == SELFTEST_GOLDEN_SHA256, (
                    f"regression hash {digest} != golden {SELFTEST_GOLDEN_SHA256}"
                )

    check("zero_forcing", zf_invariant)
    check("waterfilling", waterfill_agreement)
    check("queue_nonnegativity", queue_nonneg)
    check("pf_flow_control", pf_flow_optimality)
    check("cdf_sidecar", cdf_sidecar)
    check("renewal_identity", renewal_identity)
    check("seeded_regression", regression_hash)
    if failures:
        print(f"selftest: {len(failures)} failure(s): {', '.join(failures)}")
        return 2
    print("selftest: all checks passed")
    return 0


def cmd_replay(manifest_path: Path, out_dir: Path) -> list[Path]:
    """Re-execute a recorded manifest; regenerated outputs are byte-identical."""
    data = json.loads(Path(manifest_path).read_text())
    cfg = config_from_dict(data["config"])
    command = data["command"]
    args = data.get("args", {})
    if command == "throughput-profile":
        return cmd_throughput_profile(cfg, list(args["modes"]), out_dir)
    if command == "rate-delay":
        return cmd_rate_delay(cfg, [int(u) for u in args["users"]],
                              [float(m) for m in args["r_multipliers"]], out_dir)
    raise ValueError(f"manifest command {command!r} cannot be replayed")


def _apply_overrides(cfg: ExperimentConfig, ns: argparse.Namespace) -> ExperimentConfig:
    if getattr(ns, "seed", None) is not None:
        cfg = replace(cfg, seed=ns.seed)
    if getattr(ns, "slots", None) is not None:
        cfg = replace(cfg, slots_measure=ns.slots)
    if getattr(ns, "mode", None) is not None:
        cfg = replace(cfg, sched=replace(cfg.sched, mode=ns.mode))
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cellsched",
        description="Multi-cell MU-MIMO downlink scheduling experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=Path, default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
        p.add_argument("--mode", type=str, default=None,
                       choices=["arqllc", "harq", "genie"], help="scheduler mode override")
        p.add_argument("--slots", type=int, default=None, help="measurement slots override")

    p_tp = sub.add_parser("throughput-profile", help="per-user throughput CSV for cell 0")
    add_common(p_tp)
    p_tp.add_argument("--modes", type=str, default=",".join(PROFILE_MODES),
                      help="comma list of schemes to run")
    p_tp.add_argument("--cdf-cache", type=Path, default=None,
                      help="sidecar .npy to load/store warm-up interference CDFs")

    p_rd = sub.add_parser("rate-delay", help="HARQ rate vs decoding delay CSV")
    add_common(p_rd)
    p_rd.add_argument("--users", type=str, default="1,18",
                      help="comma list of 1-based user indices in cell 0")
    p_rd.add_argument("--multipliers", type=str, default="5,10,20,50,100",
                      help="r_first as multiples of each user's mean observed MI")

    p_st = sub.add_parser("selftest", help="fast module invariant checks")
    p_st.add_argument("--out", type=Path, default=Path("results"))

    p_rp = sub.add_parser("replay", help="re-run a recorded manifest")
    p_rp.add_argument("manifest", type=Path)
    p_rp.add_argument("--out", type=Path, default=Path("results-replay"))
    return parser


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        if ns.command == "selftest":
            return cmd_selftest()
        if ns.command == "replay":
            outputs = cmd_replay(ns.manifest, ns.out)
            print("\n".join(str(p) for p in outputs))
            return 0
        cfg = _apply_overrides(parse_config(ns.config), ns)
        if ns.command == "throughput-profile":
            modes = [m.strip() for m in ns.modes.split(",") if m.strip()]
            outputs = cmd_throughput_profile(cfg, modes, ns.out, ns.cdf_cache)
        elif ns.command == "rate-delay":
            users = [int(u) for u in ns.users.split(",") if u.strip()]
            mults = [float(m) for m in ns.multipliers.split(",") if m.strip()]
            outputs = cmd_rate_delay(cfg, users, mults, ns.out)
        else:  # pragma: no cover
            raise ValueError(f"unknown command {ns.command}")
        print("\n".join(str(p) for p in outputs))
        return 0
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:  # noqa: BLE001 - report runtime failures with code 2
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
