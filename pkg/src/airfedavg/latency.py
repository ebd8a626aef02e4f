"""Training-latency models and the Air / OMA latency minimizers."""

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import lambertw

from . import bound as bd
from . import constants as cst
from . import power_control as pc
from .errors import ConfigError, InfeasibleTargetError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimingConfig:
    symbols_per_block: int = 14
    slot_duration: float = 1e-3
    cycles_per_sample: float = 3000.0
    cpu_freq: float = 5e9
    minibatch: int = 500
    bandwidth_hz: float = 1e6
    quant_levels: int = 10
    norm_bits: int = 64

    def __post_init__(self):
        for name in (
            "symbols_per_block",
            "slot_duration",
            "cycles_per_sample",
            "cpu_freq",
            "minibatch",
            "bandwidth_hz",
            "norm_bits",
        ):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if int(self.quant_levels) != self.quant_levels or self.quant_levels < 2:
            raise ConfigError("quant_levels must be an integer >= 2")


def air_round_latency(timing, q):
    """Upload time of one analog aggregation: ``ceil(q / M)`` resource blocks."""
    if q < 1:
        raise ConfigError("model dimension must be >= 1")
    return math.ceil(q / timing.symbols_per_block) * timing.slot_duration


def compute_latency(timing):
    """Time for one local epoch on one minibatch."""
    return timing.cycles_per_sample * timing.minibatch / timing.cpu_freq


def quantizer_variance_factor(q, s):
    return min(math.sqrt(q) / s, q / s**2)


def quantize(x, s, rng):
    """Unbiased stochastic quantizer with ``s`` levels on ``|x_i| / ||x||``."""
    if s < 2:
        raise ConfigError("quantization levels must be >= 2")
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x)
    if norm == 0:
        return np.zeros_like(x)
    scaled = np.abs(x) / norm * s
    level = np.minimum(np.floor(scaled), s)
    up = rng.random(x.shape) < (scaled - level)
    return norm * np.sign(x) * (level + up) / s


def payload_bits(q, s, S_0):
    """Bits for one quantized upload: sign + level per entry, plus the norm."""
    if s < 2:
        raise ConfigError("quantization levels must be >= 2")
    level_bits = (int(s) - 1).bit_length()  # ceil(log2 s) for integer s
    return q * (1 + level_bits) + S_0


def oma_rate(p, h, sigma_z_sq, bandwidth_hz):
    """Shannon rate in bits/s of a single device on its own time slot."""
    p, h = np.asarray(p, dtype=float), np.asarray(h, dtype=float)
    rate = bandwidth_hz * np.log2(1.0 + p * h**2 / sigma_z_sq)
    return rate if rate.ndim else float(rate)


@dataclass(frozen=True)
class OmaSchedule:
    time: np.ndarray  # tau_{k,t}, seconds
    power: np.ndarray  # p_{k,t}, watts
    lambdas: np.ndarray

    @property
    def total_time(self):
        return float(math.fsum(self.time.ravel()))

    @property
    def per_round(self):
        return self.time.sum(axis=0)


def _oma_powers(gain, nu, S, bandwidth, T, pmax):
    """Per-slot minimizers of ``S / r(p) + nu * p / T`` on ``[0, pmax]``.

    Stationarity reduces to ``u^2 e^u = g T S ln2 / (nu B)`` in
    ``u = ln(1 + g p)``, solved with the Lambert W function.
    """
    with np.errstate(divide="ignore", over="ignore"):
        rhs = gain * T * S * math.log(2.0) / (nu * bandwidth)
        u = 2.0 * lambertw(np.sqrt(rhs) / 2.0).real
        p = np.where(gain > 0, np.expm1(u) / np.where(gain > 0, gain, 1.0), 0.0)
    return np.minimum(np.where(np.isfinite(p), p, np.inf), pmax)


def solve_oma_schedule(channels, budgets, timing, S, noise_power, settings=pc.OptimizerSettings()):
    """Minimum total upload time over per-slot powers for TDMA uploads.

    Each device is solved separately: bisection on its average-power
    multiplier, with closed-form per-slot powers for a given multiplier.
    """
    if S <= 0:
        raise ConfigError("payload must be positive")
    h = channels.gains if isinstance(channels, bd.ChannelRealization) else np.asarray(channels, float)
    K, T = h.shape
    if np.any(h == 0):
        raise ConfigError("a zero channel needs infinite upload time")
    gain = h**2 / noise_power
    pmax = np.asarray(budgets.max_power, dtype=float)
    pave = np.asarray(budgets.ave_power, dtype=float)
    B = timing.bandwidth_hz
    power = np.empty((K, T))
    lambdas = np.zeros(K)
    for k in range(K):
        if np.mean(np.full(T, pmax[k])) <= pave[k]:
            power[k] = pmax[k]
            continue

        def mean_power(nu):
            return np.mean(_oma_powers(gain[k], nu, S, B, T, pmax[k]))

        lo, hi = 0.0, 1.0
        while mean_power(hi) > pave[k]:
            hi *= 10.0
            if hi > settings.dual_lambda_cap:
                raise ConfigError("could not bracket the OMA power multiplier")
        for _ in range(settings.dual_max_iter):
            mid = 0.5 * (lo + hi)
            if mean_power(mid) > pave[k]:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 4 * np.finfo(float).eps * hi:
                break
        lambdas[k] = hi
        power[k] = _oma_powers(gain[k], hi, S, B, T, pmax[k])
    rate = oma_rate(power, h, noise_power, B)
    return OmaSchedule(S / rate, power, lambdas)


@dataclass(frozen=True)
class LatencyPlan:
    scheme: str
    outer_iters: int
    local_epochs: int
    total_latency: float
    comm_latency: float
    comp_latency: float
    schedule: object
    achieved_bound: float
    target_gap: float

    @property
    def per_round_latency(self):
        return self.total_latency / self.outer_iters

    @property
    def per_round_comm(self):
        return self.comm_latency / self.outer_iters


def valid_omegas(consts, sched, omega_range):
    out = [w for w in omega_range if not cst.theorem_condition_violations(consts, sched, w)]
    if not out:
        raise ConfigError(f"no Omega in {list(omega_range)} satisfies the step-size conditions")
    return out


def air_bound_at(consts, sched, cfg, channels, T, omega, settings):
    """Best bound the alternating optimizer reaches at fixed ``(T, Omega)``, with its schedule."""
    sub = replace(cfg, outer_iters=T, local_epochs=omega)
    ch = channels.head(T)
    coeffs = cst.objective_coeff_arrays(consts, sched, sub)
    result = pc.optimize(coeffs, ch.gains, sub.budgets, settings)
    return bd.air_gap_bound(consts, sched, sub, result.schedule, ch), result.schedule


def solve_air_latency(
    consts,
    sched,
    cfg,
    channels,
    timing,
    rho,
    T_max,
    omega_range,
    settings=pc.OptimizerSettings(),
    search="scan",
):
    """Smallest ``T`` whose best achievable bound over ``Omega`` meets ``rho``.

    ``channels`` must cover at least ``T_max`` iterations; the first ``T``
    columns are used when evaluating ``T``. The default ``search="scan"``
    walks ``T = 1, 2, ...`` and is exact. ``search="bisection"`` assumes
    feasibility is monotone in ``T``; it checks ``T - 1`` before returning
    and falls back to the scan when that check fails. The bound is not
    monotone in ``T`` in general (small ``T`` can be feasible, mid-range
    ``T`` infeasible, large ``T`` feasible again).
    """
    if not rho > 0:
        raise ConfigError("target gap must be positive")
    if search not in ("scan", "bisection"):
        raise ConfigError(f"unknown search {search!r}")
    omegas = valid_omegas(consts, sched, omega_range)
    cache = {}

    def best(T):
        if T not in cache:
            cands = []
            for w in omegas:
                phi, schedule = air_bound_at(consts, sched, cfg, channels, T, w, settings)
                cands.append((phi, w, schedule))
            cache[T] = min(cands, key=lambda c: (c[0], c[1]))
        return cache[T]

    def feasible(T):
        return best(T)[0] <= rho

    def scan():
        for T in range(1, T_max + 1):
            if feasible(T):
                return T
        achieved = min(best(T)[0] for T in cache)
        raise InfeasibleTargetError(
            f"target gap {rho} unreachable with T <= {T_max}; best bound {achieved:.6g}",
            achieved,
        )

    if search == "bisection" and feasible(T_max):
        lo, hi = 0, T_max  # lo infeasible (or 0), hi feasible
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if feasible(mid):
                hi = mid
            else:
                lo = mid
        T = hi
        if T > 1 and feasible(T - 1):
            log.info("feasibility not monotone in T; falling back to linear scan")
            T = scan()
    else:
        T = scan()

    phi, omega, schedule = best(T)
    tran = air_round_latency(timing, cfg.model_dim)
    comp = compute_latency(timing) * omega
    return LatencyPlan(
        scheme="air",
        outer_iters=T,
        local_epochs=omega,
        total_latency=T * (tran + comp),
        comm_latency=T * tran,
        comp_latency=T * comp,
        schedule=schedule,
        achieved_bound=phi,
        target_gap=rho,
    )


def solve_oma_latency(
    consts,
    sched,
    cfg,
    channels,
    budgets,
    timing,
    rho,
    T_max,
    omega_range,
    settings=pc.OptimizerSettings(),
):
    """Minimum-latency ``(T, Omega)`` and upload schedule for quantized TDMA."""
    if not rho > 0:
        raise ConfigError("target gap must be positive")
    q = cfg.model_dim
    q_hat = quantizer_variance_factor(q, timing.quant_levels)
    S = payload_bits(q, timing.quant_levels, timing.norm_bits)
    best = None
    best_theta = math.inf
    for omega in valid_omegas(consts, sched, omega_range):
        T_found = None
        for T in range(1, T_max + 1):
            theta = bd.oma_gap_bound(
                consts, sched, replace(cfg, outer_iters=T, local_epochs=omega), q_hat
            )
            best_theta = min(best_theta, theta)
            if theta <= rho:
                T_found = T
                break
        if T_found is None:
            continue
        ch = channels.head(T_found)
        oma = solve_oma_schedule(ch, budgets, timing, S, cfg.noise_power, settings)
        comm = oma.total_time
        comp = T_found * compute_latency(timing) * omega
        total = comm + comp
        if best is None or total < best.total_latency:
            best = LatencyPlan(
                scheme="oma",
                outer_iters=T_found,
                local_epochs=omega,
                total_latency=total,
                comm_latency=comm,
                comp_latency=comp,
                schedule=oma,
                achieved_bound=theta,
                target_gap=rho,
            )
    if best is None:
        raise InfeasibleTargetError(
            f"target gap {rho} unreachable with T <= {T_max}; best bound {best_theta:.6g}",
            best_theta,
        )
    return best
