"""FedAvg training loop with over-the-air, quantized-digital or ideal aggregation."""

from dataclasses import dataclass, field

import numpy as np

from . import constants as cst
from . import data as _data
from .bound import ChannelRealization, PowerSchedule
from .errors import ConfigError
from .latency import quantize

STREAM_NAMES = ("data", "channels", "noise", "minibatch", "quantization", "test", "estimation")


class RandomStream:
    """Seeded family of independent named generators.

    Each name maps to a fixed spawn key, so adding draws to one substream
    never shifts another. Asking for the same name twice restarts it.
    """

    def __init__(self, seed):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        self.seed = seed

    def substream(self, name):
        if name not in STREAM_NAMES:
            raise ConfigError(f"unknown random substream {name!r}")
        key = STREAM_NAMES.index(name)
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(key,)))

    def __repr__(self):
        return f"RandomStream(seed={self.seed})"


def sample_channels(K, T, rng):
    """Rayleigh magnitudes of unit-variance circularly symmetric Gaussians."""
    re, im = rng.standard_normal((2, K, T))
    return ChannelRealization(np.sqrt((re * re + im * im) / 2.0))


def local_sgd_epochs(w_start, x, y, omega, gamma, n_b, rng, ridge=0.0):
    """``omega`` minibatch SGD steps on one device's shard at a fixed rate."""
    m = x.shape[0]
    if not 1 <= n_b <= m:
        raise ConfigError(f"minibatch size {n_b} not in [1, {m}]")
    w = np.array(w_start, dtype=float)
    for _ in range(omega):
        idx = rng.permutation(m)[:n_b]
        xb, yb = x[idx], y[idx]
        w -= gamma * (xb.T @ (xb @ w - yb) / n_b + ridge * w)
    return w


def air_aggregate(local_models, h_t, p_t, eta_t, sigma_z_sq, rng):
    """Server estimate from the superposed, noisy analog uploads."""
    if not eta_t > 0:
        raise ConfigError("denoising factor must be > 0")
    w = np.asarray(local_models, dtype=float)
    K, q = w.shape
    amp = np.asarray(h_t, dtype=float) * np.sqrt(np.asarray(p_t, dtype=float))
    z = rng.standard_normal(q) * np.sqrt(sigma_z_sq)
    return (amp @ w + z) / (np.sqrt(eta_t) * K)


def oma_aggregate(local_models, s, rng):
    """Average of independently quantized local models."""
    w = np.asarray(local_models, dtype=float)
    return np.mean([quantize(wk, s, rng) for wk in w], axis=0)


@dataclass
class TrainingTrace:
    """Per-iteration metrics. Arrays indexed by ``t = 0..T`` include the start."""

    loss: np.ndarray  # F(v_t), length T+1
    gap: np.ndarray  # F(v_t) - F*, length T+1
    prediction_error: np.ndarray  # test MSE, length T+1
    aggregation_error: np.ndarray  # ||v_t - exact average||^2, length T
    energy: np.ndarray  # p_{k,t} ||w_k||^2 / q, K x T
    model_sq_norm: np.ndarray  # ||w_k||^2, K x T
    final_model: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def outer_iters(self):
        return self.aggregation_error.size

    @property
    def final_gap(self):
        return float(self.gap[-1])


AGGREGATION_MODES = ("air", "oma", "ideal")


def run_training(
    cfg,
    consts,
    sched,
    dataset,
    streams,
    mode="air",
    schedule=None,
    channels=None,
    quant_levels=10,
    ridge=0.0,
    test_set=None,
):
    """Run ``cfg.outer_iters`` rounds of FedAvg from the zero model.

    ``mode="air"`` needs ``schedule`` and ``channels``. Minibatches,
    receiver noise and quantization each draw from their own substream of
    ``streams``, so two modes run with the same streams share minibatches.
    ``test_set`` is an ``(x, y)`` pair for the prediction error; by default
    2000 fresh samples are drawn from the ``test`` substream.
    """
    if mode not in AGGREGATION_MODES:
        raise ConfigError(f"unknown aggregation mode {mode!r}")
    K, T, omega, q = cfg.num_devices, cfg.outer_iters, cfg.local_epochs, cfg.model_dim
    if dataset.num_devices != K or dataset.model_dim != q:
        raise ConfigError("dataset shape does not match the system config")
    if mode == "air":
        if schedule is None or channels is None:
            raise ConfigError("air mode needs a power schedule and channels")
        h = channels.gains if isinstance(channels, ChannelRealization) else np.asarray(channels)
        if schedule.power.shape != (K, T) or h.shape[0] != K or h.shape[1] < T:
            raise ConfigError("schedule/channel dimensions do not match the config")
    n_b = consts.minibatch_size
    rng_mb = streams.substream("minibatch")
    rng_noise = streams.substream("noise")
    rng_quant = streams.substream("quantization")
    if test_set is None:
        test = _data.generate_synthetic_dataset(q, 2000, 1, streams.substream("test"))
        test_set = (test.features, test.labels)
    x_test, y_test = test_set
    x_all, y_all = dataset.features, dataset.labels
    f_star = consts.optimum_loss
    shards = [dataset.shard(k) for k in range(K)]
    gammas = cst.learning_rates(sched, T)

    v = np.zeros(q)
    loss = np.empty(T + 1)
    pred = np.empty(T + 1)
    agg_err = np.empty(T)
    sq_norm = np.empty((K, T))
    energy = np.zeros((K, T))
    loss[0] = _data.loss(v, x_all, y_all, ridge)
    pred[0] = _data.prediction_error(v, x_test, y_test)
    for t in range(1, T + 1):
        gamma = gammas[t - 1]
        local = np.stack(
            [local_sgd_epochs(v, xk, yk, omega, gamma, n_b, rng_mb, ridge) for xk, yk in shards]
        )
        exact = local.mean(axis=0)
        sq_norm[:, t - 1] = np.sum(local * local, axis=1)
        if mode == "air":
            p_t = schedule.power[:, t - 1]
            v = air_aggregate(local, h[:, t - 1], p_t, schedule.eta[t - 1], cfg.noise_power, rng_noise)
            energy[:, t - 1] = p_t * sq_norm[:, t - 1] / q
        elif mode == "oma":
            v = oma_aggregate(local, quant_levels, rng_quant)
        else:
            v = exact
        diff = v - exact
        agg_err[t - 1] = diff @ diff
        loss[t] = _data.loss(v, x_all, y_all, ridge)
        pred[t] = _data.prediction_error(v, x_test, y_test)
    return TrainingTrace(
        loss=loss,
        gap=loss - f_star,
        prediction_error=pred,
        aggregation_error=agg_err,
        energy=energy,
        model_sq_norm=sq_norm,
        final_model=v,
        meta={"mode": mode, "seed": streams.seed},
    )

