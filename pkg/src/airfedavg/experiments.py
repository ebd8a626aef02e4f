"""Experiment runners behind the CLI: per-seed instances, sweeps and CSV output."""

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import bound as bd
from . import constants as cst
from . import data as _data
from . import latency as lat
from . import power_control as pc
from . import sim
from .config import ExperimentConfig
from .errors import ConfigError, InfeasibleTargetError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Instance:
    cfg: cst.SystemConfig
    consts: cst.LearningConstants
    sched: cst.RateSchedule
    dataset: _data.SyntheticDataset
    channels: bd.ChannelRealization
    streams: sim.RandomStream
    test_set: tuple


def _apply_overrides(consts, overrides, K):
    changes = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("smoothness", "pl_constant"):
            changes[key] = float(value)
        else:
            changes[key] = cst._vector(value, K, key)
    return replace(consts, **changes) if changes else consts


def build_instance(exp, seed, num_devices=None, outer_iters=None, local_epochs=None, channel_shape=None):
    """Dataset, fitted constants and channels for one seed.

    Channels are drawn with ``channel_shape`` (default ``K x T``) and cut to
    ``K x T``, so instances built with a common larger shape share channels.
    """
    cfg = exp.system_for(num_devices, outer_iters, local_epochs)
    K, T, q = cfg.num_devices, cfg.outer_iters, cfg.model_dim
    d = exp.raw["data"]
    streams = sim.RandomStream(seed)
    dataset = _data.generate_synthetic_dataset(
        q, K * int(d["samples_per_device"]), K, streams.substream("data"), float(d["label_noise_coeff"])
    )
    consts = cst.estimate_constants_from_data(
        dataset, int(d["minibatch_size"]), float(d["ridge_coeff"]), float(d["model_bound_margin"])
    )
    consts = _apply_overrides(consts, exp.raw["constants"], K)
    consts.check_devices(K)
    Kc, Tc = channel_shape or (K, T)
    if Kc < K or Tc < T:
        raise ConfigError("channel_shape must cover the instance")
    gains = sim.sample_channels(Kc, Tc, streams.substream("channels")).gains[:K, :T]
    test = _data.generate_synthetic_dataset(
        q, int(d["test_samples"]), 1, streams.substream("test"), float(d["label_noise_coeff"])
    )
    return Instance(
        cfg, consts, exp.rate_schedule, dataset, bd.ChannelRealization(gains), streams,
        (test.features, test.labels),
    )


def policy_schedule(exp, inst, policy):
    """Power schedule of one policy; the optimizer result is returned for ``optimized``."""
    cfg, consts = inst.cfg, inst.consts
    coeffs = cst.objective_coeff_arrays(consts, inst.sched, cfg)
    h = inst.channels.gains
    if policy == "optimized":
        res = pc.optimize(coeffs, h, cfg.budgets, exp.optimizer, acceleration=exp.acceleration)
        return res.schedule, res
    if policy == "fixed":
        return pc.fixed_power_policy(cfg.budgets, h, coeffs), None
    if policy == "per-iteration-mse":
        return pc.per_iteration_mse_policy(h, cfg.budgets, cfg, consts.model_bound, exp.optimizer), None
    raise ConfigError(f"unknown policy {policy!r}")


# --------------------------------------------------------------------- CSV

def fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return "" if x is None else str(x)


def write_csv(path, header, rows, config_hash, seed=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        tag = f"# config_sha256={config_hash}"
        if seed is not None:
            tag += f" seed={seed}"
        fh.write(tag + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def write_report(path, items, config_hash, seed=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# config_sha256={config_hash}" + (f" seed={seed}" if seed is not None else "")]
    lines += [f"{k} = {fmt(v)}" for k, v in items]
    path.write_text("\n".join(lines) + "\n")
    return path


def map_seeds(fn, args, workers):
    """Apply ``fn`` to each argument tuple, in order, optionally in worker processes."""
    if workers <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=min(workers, len(args))) as pool:
        return list(pool.map(fn, *zip(*args)))


# ------------------------------------------------------------ optimize-power

def _optimize_seed(raw, seed):
    exp = ExperimentConfig(raw)
    inst = build_instance(exp, seed)
    schedule, res = policy_schedule(exp, inst, "optimized")
    return inst.channels.gains, schedule, res.trace, res.converged, res.duals.lambdas


def run_optimize_power(exp, out_dir):
    out = Path(out_dir)
    seeds = exp.seeds
    h_all = map_seeds(_optimize_seed, [(exp.raw, s) for s in seeds], exp.raw["experiment"]["workers"])
    digest = exp.sha256
    written = []
    for seed, (h, schedule, trace, converged, lambdas) in zip(seeds, h_all):
        K, T = schedule.power.shape
        header = ["t", "eta"] + [f"p_{k + 1}" for k in range(K)] + [f"h_{k + 1}" for k in range(K)]
        rows = [
            [t + 1, schedule.eta[t], *schedule.power[:, t], *h[:, t]] for t in range(T)
        ]
        written.append(write_csv(out / f"schedule_seed{seed}.csv", header, rows, digest, seed))
        written.append(
            write_csv(
                out / f"objective_trace_seed{seed}.csv",
                ["round", "objective"],
                [[i + 1, v] for i, v in enumerate(trace)],
                digest,
                seed,
            )
        )
        written.append(
            write_csv(
                out / f"duals_seed{seed}.csv",
                ["device", "lambda"],
                [[k + 1, v] for k, v in enumerate(lambdas)],
                digest,
                seed,
            )
        )
        if not converged:
            log.warning("seed %d: optimizer stopped after %d rounds without converging", seed, len(trace))
    return written


# --------------------------------------------------------------------- train

@dataclass
class SeedRun:
    seed: int
    traces: dict  # policy -> TrainingTrace
    bounds: dict  # policy -> bound value
    initial_gap: float
    power_cap: np.ndarray  # P^max_k in watts, for the energy audit


def train_seed(raw, seed, num_devices=None):
    exp = ExperimentConfig(raw)
    inst = build_instance(exp, seed, num_devices=num_devices)
    mode = exp.raw["experiment"]["aggregation"]
    cfg, consts, sched = inst.cfg, inst.consts, inst.sched
    traces, bounds = {}, {}
    common = dict(
        ridge=float(exp.raw["data"]["ridge_coeff"]),
        test_set=inst.test_set,
        quant_levels=exp.timing.quant_levels,
    )
    if mode == "air":
        for policy in exp.raw["experiment"]["policies"]:
            schedule, _ = policy_schedule(exp, inst, policy)
            traces[policy] = sim.run_training(
                cfg, consts, sched, inst.dataset, inst.streams, "air", schedule, inst.channels, **common
            )
            bounds[policy] = bd.air_gap_bound(consts, sched, cfg, schedule, inst.channels)
    else:
        traces[mode] = sim.run_training(cfg, consts, sched, inst.dataset, inst.streams, mode, **common)
        if mode == "oma":
            q_hat = lat.quantizer_variance_factor(cfg.model_dim, exp.timing.quant_levels)
            bounds[mode] = bd.oma_gap_bound(consts, sched, cfg, q_hat)
        else:
            bounds[mode] = bd.error_free_bound(consts, sched, cfg)
    cap = cfg.max_power * consts.model_bound**2 / cfg.model_dim
    return SeedRun(seed, traces, bounds, consts.initial_gap, cap)


TRACE_COLUMNS = ["policy", "t", "loss", "gap", "prediction_error", "aggregation_error", "max_energy_ratio"]


def trace_rows(policy, tr, cap):
    T = tr.outer_iters
    rows = []
    for t in range(T + 1):
        if t == 0:
            tail = [None, None] + [None] * tr.energy.shape[0]
        else:
            e = tr.energy[:, t - 1]
            tail = [tr.aggregation_error[t - 1], float(np.max(e / cap)), *e]
        rows.append([policy, t, tr.loss[t], tr.gap[t], tr.prediction_error[t], *tail])
    return rows


def run_train(exp, out_dir):
    out = Path(out_dir)
    seeds = exp.seeds
    runs = map_seeds(train_seed, [(exp.raw, s) for s in seeds], exp.raw["experiment"]["workers"])
    digest = exp.sha256
    K = exp.system.num_devices
    written = []
    for run in runs:
        header = TRACE_COLUMNS + [f"energy_{k + 1}" for k in range(K)]
        rows = [r for policy, tr in run.traces.items() for r in trace_rows(policy, tr, run.power_cap)]
        written.append(write_csv(out / f"train_seed{run.seed}.csv", header, rows, digest, run.seed))
    written.append(write_final(out / "final.csv", runs, digest))
    written.append(write_summary(out / "summary.csv", runs, digest))
    return written, runs


def write_final(path, runs, digest):
    rows = [
        [r.seed, p, tr.final_gap, r.bounds[p], r.initial_gap, tr.prediction_error[-1]]
        for r in runs
        for p, tr in r.traces.items()
    ]
    header = ["seed", "policy", "final_gap", "bound", "initial_gap", "final_prediction_error"]
    return write_csv(path, header, rows, digest)


def summarize(runs):
    """Per-policy mean / std / standard error of the gap at every ``t``."""
    out = {}
    for policy in runs[0].traces:
        gaps = np.array([r.traces[policy].gap for r in runs])
        pred = np.array([r.traces[policy].prediction_error for r in runs])
        n = gaps.shape[0]
        std = gaps.std(axis=0, ddof=1) if n > 1 else np.zeros(gaps.shape[1])
        out[policy] = {
            "mean_gap": gaps.mean(axis=0),
            "std_gap": std,
            "sem_gap": std / math.sqrt(n),
            "mean_prediction_error": pred.mean(axis=0),
            "seeds": n,
        }
    return out


def write_summary(path, runs, digest):
    stats = summarize(runs)
    rows = []
    for policy, s in stats.items():
        for t in range(s["mean_gap"].size):
            rows.append(
                [policy, t, s["mean_gap"][t], s["std_gap"][t], s["sem_gap"][t],
                 s["mean_prediction_error"][t], s["seeds"]]
            )
    header = ["policy", "t", "mean_gap", "std_gap", "sem_gap", "mean_prediction_error", "seeds"]
    return write_csv(path, header, rows, digest)


# ------------------------------------------------------------------- latency

def _omega_range(sec):
    lo, hi = sec["local_epochs_range"]
    return range(int(lo), int(hi) + 1)


def latency_plans(exp, seed, num_devices, rho, channel_devices=None):
    """Air and OMA plans for one device count; ``None`` where ``rho`` is unreachable."""
    sec = exp.raw["latency"]
    T_max = int(sec["max_outer_iters"])
    K = num_devices
    inst = build_instance(
        exp, seed, num_devices=K, outer_iters=T_max, channel_shape=(channel_devices or K, T_max)
    )
    omegas = _omega_range(sec)
    timing = exp.timing
    plans = {}
    try:
        plans["air"] = lat.solve_air_latency(
            inst.consts, inst.sched, inst.cfg, inst.channels, timing, rho, T_max, omegas,
            exp.optimizer, search=sec["search"],
        )
    except InfeasibleTargetError as exc:
        plans["air"] = exc
    try:
        plans["oma"] = lat.solve_oma_latency(
            inst.consts, inst.sched, inst.cfg, inst.channels, inst.cfg.budgets, timing, rho,
            T_max, omegas, exp.optimizer,
        )
    except InfeasibleTargetError as exc:
        plans["oma"] = exc
    return plans


PLAN_FIELDS = [
    "outer_iters", "local_epochs", "total_latency_s", "comm_latency_s", "comp_latency_s",
    "per_round_comm_s", "per_round_latency_s", "achieved_bound", "target_gap",
]


def plan_values(plan):
    return [
        plan.outer_iters, plan.local_epochs, plan.total_latency, plan.comm_latency,
        plan.comp_latency, plan.per_round_comm, plan.per_round_latency, plan.achieved_bound,
        plan.target_gap,
    ]


def _sweep_worker(raw, seed, K, rho, channel_devices):
    return latency_plans(ExperimentConfig(raw), seed, K, rho, channel_devices)


def run_latency(exp, out_dir, rho=None):
    """Plans at the configured ``K`` plus the device-count sweep.

    Raises ``InfeasibleTargetError`` (after writing the sweep) when either
    scheme cannot reach ``rho`` at the configured ``K``.
    """
    out = Path(out_dir)
    sec = exp.raw["latency"]
    rho = float(sec["target_gap"] if rho is None else rho)
    if not rho > 0:
        raise ConfigError("target gap must be > 0")
    seed = exp.seeds[0]
    K0 = exp.system.num_devices
    sweep = sorted({int(k) for k in sec["device_sweep"]} | {K0})
    kc = max(sweep)
    results = map_seeds(
        _sweep_worker, [(exp.raw, seed, K, rho, kc) for K in sweep], exp.raw["experiment"]["workers"]
    )
    by_k = dict(zip(sweep, results))
    digest = exp.sha256
    written = []
    main = by_k[K0]
    for scheme in ("air", "oma"):
        plan = main[scheme]
        if isinstance(plan, InfeasibleTargetError):
            items = [("scheme", scheme), ("num_devices", K0), ("feasible", False),
                     ("target_gap", rho), ("best_bound", plan.best_bound)]
        else:
            items = [("scheme", scheme), ("num_devices", K0), ("feasible", True)]
            items += list(zip(PLAN_FIELDS, plan_values(plan)))
        written.append(write_report(out / f"latency_{scheme}.txt", items, digest, seed))
    header = ["num_devices"]
    for scheme in ("air", "oma"):
        header += [f"{scheme}_feasible"] + [f"{scheme}_{f}" for f in PLAN_FIELDS]
    rows = []
    for K in sweep:
        row = [K]
        for scheme in ("air", "oma"):
            plan = by_k[K][scheme]
            if isinstance(plan, InfeasibleTargetError):
                row += [False] + [None] * len(PLAN_FIELDS)
            else:
                row += [True] + plan_values(plan)
        rows.append(row)
    written.append(write_csv(out / "latency_sweep.csv", header, rows, digest, seed))
    for scheme in ("air", "oma"):
        if isinstance(main[scheme], InfeasibleTargetError):
            raise main[scheme]
    return written, by_k


# --------------------------------------------------------------------- bound

def bound_table(exp, seed):
    """Error-free, optimized, fixed-power and OMA bounds over the (T, Omega) sweep."""
    sec = exp.raw["bound"]
    Ts = [int(t) for t in sec["outer_iters"]]
    base = build_instance(exp, seed, outer_iters=max(Ts))
    consts, sched = base.consts, base.sched
    q_hat = lat.quantizer_variance_factor(base.cfg.model_dim, exp.timing.quant_levels)
    rows = []
    for T in Ts:
        ch = base.channels.head(T)
        for omega in _omega_range(sec):
            cfg = replace(base.cfg, outer_iters=T, local_epochs=omega)
            valid = not cst.theorem_condition_violations(consts, sched, omega)
            try:
                cst.contraction_coeffs(consts, sched, cfg)
            except ConfigError:
                rows.append([T, omega, valid] + [None] * 4)
                continue
            coeffs = cst.objective_coeff_arrays(consts, sched, cfg)
            res = pc.optimize(coeffs, ch.gains, cfg.budgets, exp.optimizer, acceleration=exp.acceleration)
            fixed = pc.fixed_power_policy(cfg.budgets, ch.gains, coeffs)
            rows.append([
                T, omega, valid,
                bd.error_free_bound(consts, sched, cfg),
                bd.air_gap_bound(consts, sched, cfg, res.schedule, ch),
                bd.air_gap_bound(consts, sched, cfg, fixed, ch),
                bd.oma_gap_bound(consts, sched, cfg, q_hat),
            ])
    return rows, base


def coefficient_rows(consts, sched, cfg):
    gam = cst.learning_rates(sched, cfg.outer_iters)
    C = cst.contraction_coeffs(consts, sched, cfg)
    J = cst.iteration_weights(consts, sched, cfg)
    co = cst.objective_coeff_arrays(consts, sched, cfg)
    return [
        [t, gam[t - 1], gam[t], C[t - 1], J[t - 1], co.a[t - 1], co.b[t - 1]]
        for t in range(1, cfg.outer_iters + 1)
    ]


def run_bound(exp, out_dir):
    out = Path(out_dir)
    seed = exp.seeds[0]
    digest = exp.sha256
    rows, base = bound_table(exp, seed)
    written = [
        write_csv(
            out / "bound_sweep.csv",
            ["outer_iters", "local_epochs", "valid", "error_free_bound", "air_bound_optimized",
             "air_bound_fixed", "oma_bound"],
            rows,
            digest,
            seed,
        )
    ]
    cfg = exp.system
    inst = build_instance(exp, seed)
    written.append(
        write_csv(
            out / "coefficients.csv",
            ["t", "gamma_prev", "gamma_t", "C_t", "J_t", "a_t", "b_t"],
            coefficient_rows(inst.consts, inst.sched, cfg),
            digest,
            seed,
        )
    )
    c = inst.consts
    items = [
        ("smoothness", c.smoothness), ("pl_constant", c.pl_constant),
        ("optimum_loss", c.optimum_loss), ("initial_gap", c.initial_gap),
        ("model_bound", float(c.model_bound[0])), ("grad_heterogeneity_B", cst.grad_heterogeneity_B(c, cfg)),
        ("grad_bound_V", cst.grad_bound_V(c, cfg)),
    ]
    written.append(write_report(out / "constants.txt", items, digest, seed))
    return written, rows
