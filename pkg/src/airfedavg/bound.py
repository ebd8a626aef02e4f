"""Aggregation-error surrogates and optimality-gap upper bounds."""

import math
from dataclasses import dataclass

import numpy as np

from . import constants as cst
from .errors import ConfigError


@dataclass(frozen=True)
class ChannelRealization:
    """K x T matrix of channel magnitudes ``h_{k,t}``."""

    gains: np.ndarray

    def __post_init__(self):
        g = np.array(self.gains, dtype=float, ndmin=2)
        if g.ndim != 2:
            raise ConfigError("channel gains must be a K x T matrix")
        if np.any(~np.isfinite(g)) or np.any(g < 0):
            raise ConfigError("channel gains must be finite and nonnegative")
        g.setflags(write=False)
        object.__setattr__(self, "gains", g)

    @property
    def shape(self):
        return self.gains.shape

    def head(self, T):
        """First ``T`` outer iterations."""
        if T > self.gains.shape[1]:
            raise ConfigError(f"only {self.gains.shape[1]} iterations of channels available")
        return ChannelRealization(self.gains[:, :T])


@dataclass(frozen=True)
class PowerSchedule:
    """Power-scaling factors ``p`` (K x T) and denoising factors ``eta`` (T)."""

    power: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        p = np.array(self.power, dtype=float, ndmin=2)
        eta = np.array(self.eta, dtype=float, ndmin=1)
        if p.ndim != 2 or eta.shape != (p.shape[1],):
            raise ConfigError("power must be K x T and eta must have length T")
        if np.any(p < 0):
            raise ConfigError("power-scaling factors must be >= 0")
        if np.any(~(eta > 0)):
            raise ConfigError("denoising factors must be > 0")
        p.setflags(write=False)
        eta.setflags(write=False)
        object.__setattr__(self, "power", p)
        object.__setattr__(self, "eta", eta)

    def violations(self, budgets, tol=0.0):
        """Human-readable list of power-budget violations."""
        out = []
        pmax = np.asarray(budgets.max_power)[:, None]
        if np.any(self.power > pmax * (1 + 1e-12) + tol):
            out.append("max-power constraint violated")
        avg = self.power.mean(axis=1)
        if np.any(avg > np.asarray(budgets.ave_power) + tol):
            out.append("average-power constraint violated")
        return out


@dataclass(frozen=True)
class ErrorStats:
    bias_sq: np.ndarray
    mse: np.ndarray


def _misalignment(schedule, channels):
    eta = schedule.eta
    if np.any(eta <= 0):
        raise ConfigError("denoising factors must be > 0")
    return channels.gains * np.sqrt(schedule.power) / np.sqrt(eta) - 1.0


def aggregation_bias_sq(schedule, channels, W, t):
    """Squared-bias surrogate at outer iteration ``t`` (1-based)."""
    W = np.asarray(W, dtype=float)
    m = _misalignment(schedule, channels)[:, t - 1]
    return float(np.mean(m**2 * W**2))


def aggregation_mse(schedule, channels, W, sigma_z_sq, q, t):
    """MSE surrogate: misalignment term plus receiver-noise term."""
    K = channels.shape[0]
    noise = sigma_z_sq * q / (schedule.eta[t - 1] * K**2)
    return aggregation_bias_sq(schedule, channels, W, t) + float(noise)


def error_stats(schedule, channels, W, sigma_z_sq, q):
    W = np.asarray(W, dtype=float)
    K = channels.shape[0]
    bias = np.mean(_misalignment(schedule, channels) ** 2 * (W**2)[:, None], axis=0)
    mse = bias + sigma_z_sq * q / (schedule.eta * K**2)
    return ErrorStats(bias, mse)


@dataclass(frozen=True)
class BoundTerms:
    contraction: float
    drift: float
    error: float

    @property
    def total(self):
        return math.fsum((self.contraction, self.drift, self.error))


def gap_bound_terms(consts, sched, cfg, stats):
    T, omega, L = cfg.outer_iters, cfg.local_epochs, consts.smoothness
    bias = np.asarray(stats.bias_sq, dtype=float)
    mse = np.asarray(stats.mse, dtype=float)
    if bias.shape != (T,) or mse.shape != (T,):
        raise ConfigError(f"error statistics must have length T={T}")
    C = cst.contraction_coeffs(consts, sched, cfg)
    J = cst.iteration_weights(consts, sched, cfg)
    gam = cst.learning_rates(sched, T)[:-1]
    B = cst.grad_heterogeneity_B(consts, cfg)
    V = cst.grad_bound_V(consts, cfg)
    contraction = float(np.prod(C)) * consts.initial_gap
    drift = math.fsum(J * (gam * omega * B + gam**2 * omega**2 * V))
    error = math.fsum(J / 2.0 * (bias / gam + (L * L * gam * omega + L) * mse))
    return BoundTerms(contraction, drift, error)


def generic_gap_bound(consts, sched, cfg, stats):
    """Optimality-gap bound for arbitrary per-iteration bias/MSE sequences."""
    return gap_bound_terms(consts, sched, cfg, stats).total


def error_free_bound(consts, sched, cfg):
    zeros = np.zeros(cfg.outer_iters)
    return generic_gap_bound(consts, sched, cfg, ErrorStats(zeros, zeros))


def air_gap_bound(consts, sched, cfg, schedule, channels):
    """Bound for over-the-air aggregation with the given powers and denoisers."""
    stats = error_stats(
        schedule, channels, consts.model_bound, cfg.noise_power, cfg.model_dim
    )
    return generic_gap_bound(consts, sched, cfg, stats)


def oma_mse_bound(consts, cfg, q_hat):
    return q_hat / cfg.num_devices * float(np.sum(consts.model_bound**2))


def oma_gap_bound(consts, sched, cfg, q_hat):
    """Bound for digital aggregation with an unbiased quantizer of factor ``q_hat``."""
    if q_hat < 0:
        raise ConfigError("q_hat must be >= 0")
    T = cfg.outer_iters
    mse = np.full(T, oma_mse_bound(consts, cfg, q_hat))
    return generic_gap_bound(consts, sched, cfg, ErrorStats(np.zeros(T), mse))
