"""Convergence-analysis constants and the coefficients derived from them.

Iteration indices follow the analysis: outer iterations are ``t = 1..T`` and
the learning rate used to produce iterate ``t`` is ``gamma_{t-1}``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import data as _data
from .errors import ConfigError


def _vector(value, size, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(size, float(arr))
    if arr.shape != (size,):
        raise ConfigError(f"{name} must be a scalar or have length {size}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SystemConfig:
    """Network/training sizes and the normalized power budgets.

    ``max_power`` and ``ave_power`` are the budgets already normalized by
    ``q / W_k^2``, i.e. the bounds applied directly to ``p_{k,t}``.
    """

    num_devices: int
    model_dim: int
    noise_power: float
    max_power: np.ndarray
    ave_power: np.ndarray
    outer_iters: int
    local_epochs: int

    def __post_init__(self):
        K = self.num_devices
        if int(K) != K or K < 1:
            raise ConfigError(f"num_devices must be a positive integer, got {K}")
        if int(self.model_dim) != self.model_dim or self.model_dim < 1:
            raise ConfigError(f"model_dim must be a positive integer, got {self.model_dim}")
        if int(self.outer_iters) != self.outer_iters or self.outer_iters < 1:
            raise ConfigError(f"outer_iters must be a positive integer, got {self.outer_iters}")
        if int(self.local_epochs) != self.local_epochs or self.local_epochs < 2:
            raise ConfigError(f"local_epochs must be an integer >= 2, got {self.local_epochs}")
        if not self.noise_power >= 0:
            raise ConfigError(f"noise_power must be >= 0, got {self.noise_power}")
        pmax = _vector(self.max_power, K, "max_power")
        pave = _vector(self.ave_power, K, "ave_power")
        if np.any(pave <= 0):
            raise ConfigError("ave_power must be > 0 for every device")
        if np.any(pmax < pave):
            raise ConfigError("max_power must be >= ave_power for every device")
        object.__setattr__(self, "max_power", pmax)
        object.__setattr__(self, "ave_power", pave)

    @property
    def budgets(self):
        return PowerBudgets(self.max_power, self.ave_power)


@dataclass(frozen=True)
class PowerBudgets:
    max_power: np.ndarray
    ave_power: np.ndarray

    def __post_init__(self):
        pmax = np.atleast_1d(np.asarray(self.max_power, dtype=float))
        pave = np.atleast_1d(np.asarray(self.ave_power, dtype=float))
        pmax, pave = np.broadcast_arrays(pmax, pave)
        if np.any(pave <= 0) or np.any(pmax < pave):
            raise ConfigError("budgets need 0 < ave_power <= max_power")
        object.__setattr__(self, "max_power", pmax.copy())
        object.__setattr__(self, "ave_power", pave.copy())

    def __len__(self):
        return self.max_power.size


@dataclass(frozen=True)
class LearningConstants:
    smoothness: float
    pl_constant: float
    grad_divergence: np.ndarray
    grad_variance_hat: np.ndarray
    minibatch_size: int
    grad_bound: np.ndarray
    model_bound: np.ndarray
    optimum_loss: float
    initial_gap: float
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        for name in ("grad_divergence", "grad_variance_hat", "grad_bound", "model_bound"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).copy()
            if np.any(arr < 0):
                raise ConfigError(f"{name} entries must be nonnegative")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.smoothness < 0 or self.pl_constant < 0:
            raise ConfigError("smoothness and pl_constant must be nonnegative")
        if self.pl_constant > self.smoothness * (1 + 1e-12):
            raise ConfigError(
                f"pl_constant {self.pl_constant} exceeds smoothness {self.smoothness}"
            )
        if int(self.minibatch_size) != self.minibatch_size or self.minibatch_size < 1:
            raise ConfigError("minibatch_size must be a positive integer")
        if self.initial_gap < 0:
            raise ConfigError("initial_gap must be >= 0")

    def check_devices(self, num_devices):
        for name in ("grad_divergence", "grad_variance_hat", "grad_bound", "model_bound"):
            if getattr(self, name).shape != (num_devices,):
                raise ConfigError(f"{name} must have length {num_devices}")


@dataclass(frozen=True)
class RateSchedule:
    """Diminishing learning rates ``beta / (t + a)``."""

    offset: float
    scale: float

    def __post_init__(self):
        if not self.offset > 0 or not self.scale > 0:
            raise ConfigError("rate schedule needs offset > 0 and scale > 0")


def theorem_condition_violations(consts, sched, omega):
    """Return the list of violated step-size preconditions (empty if none)."""
    problems = []
    mu, L = consts.pl_constant, consts.smoothness
    if mu <= 0 or sched.scale < 1.0 / (mu * (omega - 1)):
        problems.append(f"beta={sched.scale} < 1/(mu*(Omega-1)) at Omega={omega}")
    if learning_rate(sched, 1) * L * omega > 1.0:
        problems.append(f"gamma_1={learning_rate(sched, 1):.6g} > 1/(L*Omega) at Omega={omega}")
    return problems


def check_theorem_conditions(consts, sched, omega):
    problems = theorem_condition_violations(consts, sched, omega)
    if problems:
        raise ConfigError("; ".join(problems))


def learning_rate(sched, t):
    if t < 0:
        raise ConfigError(f"iteration index must be >= 0, got {t}")
    return sched.scale / (t + sched.offset)


def learning_rates(sched, T):
    """``gamma_0 .. gamma_T`` as an array of length ``T + 1``."""
    return sched.scale / (np.arange(T + 1) + sched.offset)


def contraction_coeffs(consts, sched, cfg):
    """``C_1 .. C_T``; raises if any is not strictly positive."""
    gam = learning_rates(sched, cfg.outer_iters)[1:]
    C = 1.0 - (cfg.local_epochs - 1) * consts.pl_constant * gam
    if np.any(C <= 0):
        t = int(np.argmax(C <= 0)) + 1
        raise ConfigError(
            f"C_{t}={C[t - 1]:.6g} <= 0: learning rate too large for mu and Omega"
        )
    return C


def contraction_coeff(consts, sched, cfg, t):
    C = 1.0 - (cfg.local_epochs - 1) * consts.pl_constant * learning_rate(sched, t)
    if C <= 0:
        raise ConfigError(f"C_{t}={C:.6g} <= 0: learning rate too large for mu and Omega")
    return C


def iteration_weights(consts, sched, cfg):
    """``J_1 .. J_T`` with ``J_t = prod_{i=t+1}^{T} C_i`` (so ``J_T = 1``)."""
    C = contraction_coeffs(consts, sched, cfg)
    tail = np.cumprod(C[::-1])[::-1]  # tail[t-1] = prod_{i>=t} C_i
    return np.append(tail[1:], 1.0)


def iteration_weight(consts, sched, cfg, t):
    if not 1 <= t <= cfg.outer_iters:
        raise ConfigError(f"t must lie in [1, {cfg.outer_iters}], got {t}")
    return float(iteration_weights(consts, sched, cfg)[t - 1])


def grad_heterogeneity_B(consts, cfg):
    phi_sq = consts.grad_variance_hat**2 / consts.minibatch_size
    return float(np.sum((consts.grad_divergence**2 + phi_sq) / 2.0) / cfg.num_devices)


def grad_bound_V(consts, cfg):
    return float(consts.smoothness * np.sum(consts.grad_bound**2) / cfg.num_devices)


@dataclass(frozen=True)
class ObjectiveCoeffs:
    """Weights of the power-control objective.

    ``a`` and ``b`` have length ``T`` (index ``t - 1``), ``c`` has length
    ``K``; ``noise`` is ``sigma_z^2 * q``.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    noise: float

    @property
    def num_iters(self):
        return self.a.size

    @property
    def num_devices(self):
        return self.c.size

    def at(self, t):
        """Single-iteration slice (``t`` is 1-based) as a length-1 instance."""
        return ObjectiveCoeffs(self.a[t - 1 : t], self.b[t - 1 : t], self.c, self.noise)


def objective_coeff_arrays(consts, sched, cfg):
    L, K, omega = consts.smoothness, cfg.num_devices, cfg.local_epochs
    J = iteration_weights(consts, sched, cfg)
    gam = learning_rates(sched, cfg.outer_iters)[:-1]  # gamma_{t-1}
    smooth = J * (L + gam * L * L * omega) / 2.0
    a = J / (2.0 * gam) + smooth
    b = smooth / K**2
    c = consts.model_bound**2 / K
    return ObjectiveCoeffs(a, b, c, cfg.noise_power * cfg.model_dim)


def objective_coeffs(consts, sched, cfg, t):
    """``(a_t, b_t, c)`` for a single outer iteration ``t`` (1-based)."""
    co = objective_coeff_arrays(consts, sched, cfg)
    return float(co.a[t - 1]), float(co.b[t - 1]), co.c


DIVERGENCE_SAFETY = 1.5
GRAMIAN_JITTER = 1e-4


def estimate_constants_from_data(
    dataset, minibatch_size, ridge_coeff=0.0, model_bound_margin=1.1
):
    """Fit the analysis constants to a least-squares problem on ``dataset``.

    ``L`` and ``mu`` are the extreme eigenvalues of ``X^T X / |D| + 1e-4 I``.
    The optimum solves the (optionally ridge-regularized) normal equations.
    ``delta_k`` is 1.5x the gap between device and global gradients at the
    zero model. ``phi_hat_k^2`` is ``n_b`` times the exact variance of a
    size-``n_b`` without-replacement minibatch gradient at the zero model.
    """
    if model_bound_margin <= 1:
        raise ConfigError("model_bound_margin must exceed 1")
    x, y = dataset.features, dataset.labels
    n, q = x.shape
    if n == 0:
        raise ConfigError("dataset is empty")
    if minibatch_size > dataset.shard_size:
        raise ConfigError("minibatch_size exceeds the device shard size")
    gram = x.T @ x / n
    eig = np.linalg.eigvalsh(gram + GRAMIAN_JITTER * np.eye(q))
    mu, L = float(eig[0]), float(eig[-1])

    system = gram + ridge_coeff * np.eye(q)
    if ridge_coeff == 0 and np.linalg.matrix_rank(gram) < q:
        raise ConfigError("data Gramian is singular; set ridge_coeff > 0")
    w_star = np.linalg.solve(system, x.T @ y / n)
    f_star = float(_data.loss(w_star, x, y, ridge_coeff))
    w0 = np.zeros(q)
    initial_gap = max(float(_data.loss(w0, x, y, ridge_coeff)) - f_star, 0.0)

    K = dataset.num_devices
    W = np.full(K, np.sqrt(model_bound_margin) * np.linalg.norm(w_star))
    G = 2.0 * W * L
    g_full = _data.gradient(w0, x, y, ridge_coeff)
    delta = np.empty(K)
    phi_hat = np.empty(K)
    for k in range(K):
        xk, yk = dataset.shard(k)
        per_sample = xk * (xk @ w0 - yk)[:, None] + ridge_coeff * w0
        gk = per_sample.mean(axis=0)
        delta[k] = DIVERGENCE_SAFETY * np.linalg.norm(gk - g_full)
        m = xk.shape[0]
        spread = np.mean(np.sum((per_sample - gk) ** 2, axis=1))
        # E||g_batch - g_k||^2 = spread/n_b * (m - n_b)/(m - 1) without replacement
        fpc = (m - minibatch_size) / (m - 1) if m > 1 else 0.0
        phi_hat[k] = np.sqrt(spread * fpc)

    return LearningConstants(
        smoothness=L,
        pl_constant=mu,
        grad_divergence=delta,
        grad_variance_hat=phi_hat,
        minibatch_size=minibatch_size,
        grad_bound=G,
        model_bound=W,
        optimum_loss=f_star,
        initial_gap=initial_gap,
        extra={"w_star": w_star},
    )
