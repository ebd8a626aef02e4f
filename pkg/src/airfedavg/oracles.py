"""Brute-force reference solvers used to check the main optimizers.

Nothing here imports the power-control or latency solvers; each oracle
evaluates its objective directly from the raw inputs.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class GridSpec:
    lower: tuple
    upper: tuple
    points: int

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise ConfigError("grid bounds must have matching shapes")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ConfigError("grid bounds must be finite")
        if np.any(lo >= hi):
            raise ConfigError("grid lower bounds must be below the upper bounds")
        if self.points < 2:
            raise ConfigError("grids need at least 2 points per axis")
        object.__setattr__(self, "lower", tuple(lo))
        object.__setattr__(self, "upper", tuple(hi))

    def axis(self, i=0):
        return np.linspace(self.lower[i], self.upper[i], self.points)


@dataclass(frozen=True)
class DenoiseGridResult:
    eta_hat: float  # 1 / sqrt(eta)
    objective: float
    degenerate: bool  # every effective amplitude is zero

    @property
    def eta(self):
        return math.inf if self.eta_hat == 0 else 1.0 / self.eta_hat**2


def grid_min_denoise(a_t, b_t, c, h_t, p_t, noise, grid=None, refine=True):
    """Minimize ``a sum_k c_k (h_k sqrt(p_k) x - 1)^2 + b noise x^2`` over a grid in ``x``.

    ``x`` is the inverse square root of the denoising factor. Without a grid,
    ``[0, 1 / min_k h_k sqrt(p_k)]`` with ``10^6`` points is used; it holds
    the minimizer because that is a weighted mean of the ``1 / (h_k sqrt(p_k))``
    shrunk toward zero. ``refine`` repeats the search on the cell around the
    best point.
    """
    c, h_t, p_t = (np.asarray(v, dtype=float) for v in (c, h_t, p_t))
    u = h_t * np.sqrt(p_t)
    if not np.any(u > 0):
        return DenoiseGridResult(0.0, float(a_t * np.sum(c)), True)
    if grid is None:
        grid = GridSpec(0.0, 1.0 / u[u > 0].min(), 10**6)
    # quadratic in x: A x^2 - 2 B x + C, evaluated pointwise
    A = a_t * np.sum(c * u * u) + b_t * noise
    B = a_t * np.sum(c * u)
    C = a_t * np.sum(c)

    def search(xs):
        f = (A * xs - 2.0 * B) * xs + C
        i = int(np.argmin(f))
        return xs, i, f[i]

    xs, i, f = search(grid.axis())
    if refine:
        lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, xs.size - 1)]
        if hi > lo:
            xs, i, f = search(np.linspace(lo, hi, grid.points))
    return DenoiseGridResult(float(xs[i]), float(f), False)


def _project_box_ball(y, cap, radius):
    """Euclidean projection of each row of ``y`` onto ``{0 <= x <= cap, ||x|| <= radius}``.

    The projection is ``clip(y / s, 0, cap)`` for the smallest ``s >= 1``
    meeting the ball constraint. The set of capped coordinates only changes
    at ``s = y_i / cap_i``, so every candidate capped set is tried and the
    consistent one kept.
    """
    x0 = np.clip(y, 0.0, cap)
    inside = np.sum(x0 * x0, axis=1) <= radius**2
    if np.all(inside):
        return x0
    pos = np.maximum(y, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        brk = np.where(cap > 0, pos / cap, np.inf)
    order = np.argsort(-brk, axis=1)
    b_sorted = np.take_along_axis(brk, order, axis=1)
    ysq = np.take_along_axis(pos * pos, order, axis=1)
    usq = np.take_along_axis(cap * cap, order, axis=1)
    K, T = y.shape
    out = x0.copy()
    for k in np.flatnonzero(~inside):
        for j in range(T + 1):  # the j largest breakpoints are capped
            capped = usq[k, :j].sum()
            free = ysq[k, j:].sum()
            room = radius[k] ** 2 - capped
            if room <= 0:
                continue
            s = math.sqrt(free / room) if free > 0 else 1.0
            upper = b_sorted[k, j - 1] if j > 0 else np.inf
            lower = b_sorted[k, j] if j < T else 0.0
            if max(s, 1.0) <= upper * (1 + 1e-12) and s >= lower * (1 - 1e-12):
                out[k] = np.clip(y[k] / max(s, 1.0), 0.0, cap[k])
                break
        else:
            raise ArithmeticError("box-ball projection found no consistent active set")
    return out


@dataclass(frozen=True)
class ProjectedGradientResult:
    power: np.ndarray
    objective: float
    residual: float  # norm of the final projected-gradient step
    iterations: int
    converged: bool


def projected_gradient_power(
    coeffs, channels, eta, max_power, ave_power, iters=20000, tol=1e-13, step_scale=1.0
):
    """Accelerated projected gradient on the amplitude form of the power problem.

    Variables are ``x = sqrt(p)``; each device's feasible set is the box
    ``[0, sqrt(max_power)]`` intersected with the ball of radius
    ``sqrt(T ave_power)``. The step is ``step_scale`` over the largest
    curvature of that device's rows (constant step schedule), with momentum
    restarted whenever the objective goes up.
    """
    h = np.asarray(getattr(channels, "gains", channels), dtype=float)
    eta = np.asarray(eta, dtype=float)
    K, T = h.shape
    a, c = np.asarray(coeffs.a, dtype=float), np.asarray(coeffs.c, dtype=float)
    w = a[None, :] * c[:, None]  # a_t c_k
    g = h / np.sqrt(eta)[None, :]  # effective gain per unit amplitude
    cap = np.repeat(np.sqrt(np.asarray(max_power, dtype=float))[:, None], T, axis=1)
    radius = np.sqrt(T * np.asarray(ave_power, dtype=float))
    curv = 2.0 * w * g * g
    lip = curv.max(axis=1, keepdims=True)
    step = np.where(lip > 0, step_scale / np.where(lip > 0, lip, 1.0), 0.0)

    def objective(x):
        return float(np.sum(w * (g * x - 1.0) ** 2))

    def grad(x):
        return 2.0 * w * (g * x - 1.0) * g

    x = _project_box_ball(np.zeros((K, T)), cap, radius)
    z, theta = x.copy(), 1.0
    f = objective(x)
    residual, converged, it = math.inf, False, 0
    for it in range(1, iters + 1):
        x_new = _project_box_ball(z - step * grad(z), cap, radius)
        f_new = objective(x_new)
        if f_new > f:
            # restart momentum from the last iterate
            z, theta = x.copy(), 1.0
            x_new = _project_box_ball(x - step * grad(x), cap, radius)
            f_new = objective(x_new)
        residual = float(np.linalg.norm(x_new - x))
        theta_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
        z = x_new + (theta - 1.0) / theta_new * (x_new - x)
        x, theta = x_new, theta_new
        change = abs(f - f_new) / max(abs(f), 1e-300)
        f = f_new
        if residual < tol or (change < tol and residual < 1e-9):
            converged = True
            break
    return ProjectedGradientResult(x * x, f, residual, it, converged)


@dataclass(frozen=True)
class OmaGridResult:
    power: np.ndarray
    total_time: float


def grid_oma_schedule(
    h, max_power, ave_power, bandwidth_hz, payload_bits, noise_power, points=2000, refine=2
):
    """Exhaustive search for one device's upload powers over ``T <= 2`` slots.

    Minimizes ``sum_t S / (B log2(1 + p_t h_t^2 / sigma^2))`` subject to
    ``p_t <= max_power`` and ``mean(p) <= ave_power``. Each ``refine`` pass
    re-grids the cells around the best point.
    """
    h = np.atleast_1d(np.asarray(h, dtype=float))
    T = h.size
    if T not in (1, 2):
        raise ConfigError("grid_oma_schedule supports T = 1 or 2")
    if np.any(h == 0):
        return OmaGridResult(np.zeros(T), math.inf)
    gain = h * h / noise_power

    def times(p, g):
        with np.errstate(divide="ignore"):
            return payload_bits / (bandwidth_hz * np.log2(1.0 + p * g))

    top = min(max_power, T * ave_power)
    if T == 1:
        xs = np.linspace(0.0, min(max_power, ave_power), points)
        tt = times(xs, gain[0])
        i = int(np.argmin(tt))
        return OmaGridResult(np.array([xs[i]]), float(tt[i]))
    lo, hi = np.zeros(2), np.full(2, top)
    best = None
    for _ in range(1 + refine):
        p1 = np.linspace(lo[0], hi[0], points)
        p2 = np.linspace(lo[1], hi[1], points)
        tot = times(p1, gain[0])[:, None] + times(p2, gain[1])[None, :]
        feas = (p1[:, None] + p2[None, :]) <= 2.0 * ave_power * (1 + 1e-15)
        tot = np.where(feas, tot, np.inf)
        i, j = np.unravel_index(int(np.argmin(tot)), tot.shape)
        best = (np.array([p1[i], p2[j]]), float(tot[i, j]))
        d = np.array([p1[1] - p1[0], p2[1] - p2[0]])
        lo = np.maximum(best[0] - 2 * d, 0.0)
        hi = np.minimum(best[0] + 2 * d, top)
    return OmaGridResult(*best)
