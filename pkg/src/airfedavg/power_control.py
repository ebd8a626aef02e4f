"""Power control for over-the-air aggregation.

Alternates the closed-form optimal denoising factors with regularized
channel-inversion powers. The average-power multipliers are found by
bisection, one scalar search per device, since the dual separates across
devices and each device's mean power is nonincreasing in its multiplier.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .bound import PowerSchedule
from .constants import ObjectiveCoeffs
from .errors import ConfigError, DenoisingUndefinedError, NumericalError

log = logging.getLogger(__name__)

# Ceiling on denoising factors inside the optimizer. When one iteration's
# channels are so weak that staying silent is optimal, the alternation
# drives eta_t toward infinity and p_{k,t} toward zero; at this ceiling the
# noise term b_t sigma^2 q / eta_t is already negligible.
ETA_MAX = 1e100
LOG_ETA_MAX = float(np.log(ETA_MAX))


@dataclass(frozen=True)
class OptimizerSettings:
    convergence_tol: float = 1e-8
    max_alt_rounds: int = 200
    dual_tol: float = 1e-9
    dual_lambda_max: float = 1e3
    dual_lambda_cap: float = 1e300
    dual_max_iter: int = 400

    def __post_init__(self):
        for name in ("convergence_tol", "max_alt_rounds", "dual_tol", "dual_lambda_max"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")


@dataclass(frozen=True)
class DualSolution:
    lambdas: np.ndarray


@dataclass
class OptimizationResult:
    schedule: PowerSchedule
    trace: list
    duals: DualSolution
    converged: bool
    rounds: int = field(init=False)

    def __post_init__(self):
        self.rounds = len(self.trace)

    @property
    def objective(self):
        return self.trace[-1]


def _gains(channels):
    return getattr(channels, "gains", channels)


def p11_objective(coeffs, schedule, channels):
    """Power-dependent part of the Air-FedAvg optimality-gap bound."""
    h = _gains(channels)
    amp = h * np.sqrt(schedule.power) / np.sqrt(schedule.eta)
    misalign = np.sum(coeffs.c[:, None] * (amp - 1.0) ** 2, axis=0)
    per_t = coeffs.a * misalign + coeffs.b * coeffs.noise / schedule.eta
    return float(np.sum(per_t))


def denoise_update(a_t, b_t, c, h_t, p_t, noise):
    """Optimal denoising factor for one outer iteration given its powers."""
    c, h_t, p_t = (np.asarray(v, dtype=float) for v in (c, h_t, p_t))
    den = a_t * np.sum(c * h_t * np.sqrt(p_t))
    if not den > 0:
        raise DenoisingUndefinedError("denoising undefined: all effective amplitudes are zero")
    num = a_t * np.sum(c * h_t**2 * p_t) + b_t * noise
    return float((num / den) ** 2)


def optimal_denoise(coeffs, channels, power):
    """Vectorized ``denoise_update`` over all outer iterations, capped at ``ETA_MAX``."""
    h = _gains(channels)
    power = np.asarray(power, dtype=float)
    den = coeffs.a * np.sum(coeffs.c[:, None] * h * np.sqrt(power), axis=0)
    if np.any(~(den > 0)):
        t = int(np.argmax(~(den > 0))) + 1
        raise DenoisingUndefinedError(
            f"denoising undefined at t={t}: all effective amplitudes are zero"
        )
    num = coeffs.a * np.sum(coeffs.c[:, None] * h**2 * power, axis=0) + coeffs.b * coeffs.noise
    with np.errstate(over="ignore"):
        return np.minimum((num / den) ** 2, ETA_MAX)


def regularized_inversion(coeffs, h, eta, lambdas, max_power):
    """Amplitudes ``sqrt(p)`` minimizing the per-(k,t) Lagrangian terms."""
    T = eta.size
    weight = coeffs.a[None, :] * coeffs.c[:, None] * T
    lam = np.asarray(lambdas, dtype=float)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        reg = np.where(lam > 0, eta[None, :] * lam / weight, 0.0)
        denom = h**2 + reg
        amp = np.where(denom > 0, h * np.sqrt(eta)[None, :] / denom, 0.0)
    amp = np.where(weight > 0, amp, 0.0)
    return np.minimum(amp, np.sqrt(np.asarray(max_power, dtype=float))[:, None])


def power_update(coeffs, channels, eta, budgets, settings=OptimizerSettings()):
    """Optimal powers for fixed denoising factors, with the dual multipliers."""
    h = _gains(channels)
    eta = np.asarray(eta, dtype=float)
    if np.any(~(eta > 0)):
        raise ConfigError("denoising factors must be > 0")
    pmax, pave = budgets.max_power, budgets.ave_power
    K = h.shape[0]

    def mean_power(lam):
        return np.mean(regularized_inversion(coeffs, h, eta, lam, pmax) ** 2, axis=1)

    lam = np.zeros(K)
    active = mean_power(lam) > pave
    if np.any(active):
        lo = np.zeros(K)
        hi = np.where(active, settings.dual_lambda_max, 0.0)
        while True:
            short = active & (mean_power(hi) > pave)
            if not np.any(short):
                break
            if np.any(hi[short] * 10.0 > settings.dual_lambda_cap):
                raise NumericalError("dual bisection could not bracket the multiplier")
            hi = np.where(short, hi * 10.0, hi)
        for _ in range(settings.dual_max_iter):
            mid = 0.5 * (lo + hi)
            over = mean_power(mid) > pave
            lo = np.where(active & over, mid, lo)
            hi = np.where(active & ~over, mid, hi)
            if np.all(~active | (hi - lo <= 4 * np.finfo(float).eps * hi)):
                break
        lam = np.where(active, hi, 0.0)
        resid = pave - mean_power(lam)
        bad = active & (np.abs(resid) > settings.dual_tol)
        if np.any(bad):
            log.debug("dual residual above tolerance on devices %s", np.flatnonzero(bad))
    power = regularized_inversion(coeffs, h, eta, lam, pmax) ** 2
    return power, DualSolution(lam)


def default_initial_powers(budgets, T):
    p0 = np.minimum(budgets.ave_power, budgets.max_power)
    return np.repeat(p0[:, None], T, axis=1)


def _relative_change(prev, cur):
    return abs(prev - cur) / max(prev, 1e-300)


def optimize(
    coeffs,
    channels,
    budgets,
    settings=OptimizerSettings(),
    initial_powers=None,
    acceleration="anderson",
    memory=5,
):
    """Alternating minimization over denoising factors and powers.

    Each round sets ``eta`` optimally for the current powers, then the powers
    optimally for that ``eta``. Stops when the relative objective change
    drops below ``settings.convergence_tol`` or after ``max_alt_rounds``.

    With ``acceleration="anderson"`` each round also forms an Anderson-mixed
    candidate for ``log eta`` from the last ``memory`` rounds and keeps it
    only if it lowers the objective below the plain round's value, so the
    trace stays monotone. ``acceleration=None`` runs the plain alternation,
    which needs thousands of rounds to reach ``1e-8`` on typical instances.
    """
    if acceleration not in (None, "anderson"):
        raise ConfigError(f"unknown acceleration {acceleration!r}")
    h = _gains(channels)
    K, T = h.shape
    if coeffs.num_iters != T or coeffs.num_devices != K:
        raise ConfigError("coefficient and channel dimensions disagree")
    if initial_powers is None:
        power = default_initial_powers(budgets, T)
    else:
        power = np.asarray(initial_powers, dtype=float)
        probe = PowerSchedule(power, np.ones(T))
        if probe.violations(budgets, tol=settings.dual_tol):
            raise ConfigError("initial powers violate the power budgets")

    def step(eta):
        p, duals = power_update(coeffs, h, eta, budgets, settings)
        sched = PowerSchedule(p, eta)
        return sched, duals, p11_objective(coeffs, sched, h)

    trace = []
    best = None
    converged = False
    log_eta = None
    hist_u, hist_r = [], []
    for _ in range(settings.max_alt_rounds):
        eta = optimal_denoise(coeffs, h, power)
        cand = step(eta)
        if acceleration and log_eta is not None:
            u_next = np.log(eta)
            hist_u.append(log_eta)
            hist_r.append(u_next - log_eta)
            del hist_u[: -(memory + 1)], hist_r[: -(memory + 1)]
            if len(hist_r) >= 2:
                R = np.asarray(hist_r)
                dR = np.diff(R, axis=0).T
                dG = np.diff(np.asarray(hist_u) + R, axis=0).T
                try:
                    mix, *_ = np.linalg.lstsq(dR, hist_r[-1], rcond=None)
                except np.linalg.LinAlgError:
                    mix = None
                if mix is not None and np.all(np.isfinite(mix)):
                    u_mix = np.clip(u_next - dG @ mix, -LOG_ETA_MAX, LOG_ETA_MAX)
                    alt = step(np.exp(u_mix))
                    if alt[2] < cand[2]:
                        cand = alt
        schedule, duals, obj = cand
        if trace and obj > trace[-1]:
            # rounding-level increase; keep the previous iterate
            converged = True
            break
        trace.append(obj)
        best = (schedule, duals)
        power = schedule.power
        log_eta = np.log(schedule.eta)
        if len(trace) >= 2 and _relative_change(trace[-2], trace[-1]) < settings.convergence_tol:
            converged = True
            break
    schedule, duals = best
    return OptimizationResult(schedule, trace, duals, converged)


def fixed_power_policy(budgets, channels, coeffs):
    """Constant powers at the average budget with the matching optimal denoisers."""
    h = _gains(channels)
    power = default_initial_powers(budgets, h.shape[1])
    return PowerSchedule(power, optimal_denoise(coeffs, h, power))


def mse_coeffs(W, sigma_z_sq, q, T):
    """Weights under which the objective at each ``t`` equals the aggregation MSE."""
    W = np.asarray(W, dtype=float)
    K = W.size
    return ObjectiveCoeffs(np.ones(T), np.full(T, 1.0 / K**2), W**2 / K, sigma_z_sq * q)


def per_iteration_mse_policy(channels, budgets, cfg, W, settings=OptimizerSettings()):
    """Minimize the aggregation MSE separately at every outer iteration.

    Per iteration the budget is ``min(ave_power, max_power)``, which keeps the
    average constraint satisfied without coordinating across iterations.
    """
    h = _gains(channels)
    K, T = h.shape
    coeffs = mse_coeffs(W, cfg.noise_power, cfg.model_dim, T)
    cap = np.minimum(budgets.ave_power, budgets.max_power)[:, None]
    power = np.repeat(cap, T, axis=1)

    def per_t(power, eta):
        amp = h * np.sqrt(power) / np.sqrt(eta)
        return np.sum(coeffs.c[:, None] * (amp - 1) ** 2, axis=0) + coeffs.b * coeffs.noise / eta

    eta = optimal_denoise(coeffs, h, power)
    prev = per_t(power, eta)
    for _ in range(settings.max_alt_rounds):
        with np.errstate(divide="ignore"):
            inv = np.where(h > 0, eta[None, :] / np.where(h > 0, h, 1.0) ** 2, 0.0)
        power = np.minimum(inv, cap)
        eta = optimal_denoise(coeffs, h, power)
        cur = per_t(power, eta)
        change = np.abs(prev - cur) / np.maximum(prev, 1e-300)
        prev = cur
        if np.all(change < settings.convergence_tol):
            break
    return PowerSchedule(power, eta)
