"""Arrival-intensity recovery from a dead-time distorted detection histogram.

The stationary detection histogram ``h`` and the per-bin expected arrivals
``lam`` (summing to the total flux) satisfy

    h = T(lam) = -g * lam + lam / Lambda + (g . lam) * lam / Lambda

where ``g`` is the circular sum of ``h`` over the ``n_d`` bins preceding
each bin. ``solve_mchc`` minimizes ``0.5 * ||h - T(lam)||^2`` over the box
``[0, M]^n_b`` with a monotone accelerated proximal gradient method.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import logging
import math

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateResultError
from .scene import BinGrid

log = logging.getLogger(__name__)

BOX_FACTOR = 10.0


def gate_vector(h, n_d: int) -> np.ndarray:
    """Sum of the ``n_d`` histogram bins circularly preceding each bin."""
    h = np.asarray(h, dtype=float)
    n_b = len(h)
    if not 0 <= n_d < max(n_b, 1):
        raise ValueError("n_d must lie in [0, n_b)")
    if n_d == 0:
        return np.zeros(n_b)
    ext = np.concatenate([h[n_b - n_d:], h])
    c = np.concatenate([[0.0], np.cumsum(ext)])
    g = c[n_d:n_d + n_b] - c[:n_b]
    return np.clip(g, 0.0, None)


@dataclass(frozen=True)
class InverseProblem:
    h: np.ndarray
    g: np.ndarray
    Lambda: float
    grid: BinGrid
    M: float | None = None

    def __post_init__(self):
        if not self.Lambda > 0:
            raise ValueError("Lambda must be positive")
        if self.M is not None and not self.M > 0:
            raise ValueError("M must be positive")

    @classmethod
    def from_histogram(cls, h, Lambda: float, grid: BinGrid, M: float | None = None):
        h = np.asarray(h, dtype=float)
        total = h.sum()
        if not total > 0:
            raise ValueError("histogram is empty")
        h = h / total
        return cls(h=h, g=gate_vector(h, grid.n_d), Lambda=float(Lambda), grid=grid, M=M)


@dataclass(frozen=True)
class CorrectionResult:
    lambda_hat: np.ndarray
    objective_trace: np.ndarray
    iterations: int
    terminated: str            # "tolerance" or "max_iter"
    M: float
    init_C: float

    @property
    def corrected_hist(self) -> np.ndarray:
        return corrected_histogram(self)

    @property
    def final_objective(self) -> float:
        return float(self.objective_trace[-1])


def forward_operator(lam, problem: InverseProblem) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    inv = 1.0 / problem.Lambda
    return (-problem.g + inv + inv * (problem.g @ lam)) * lam


def objective(lam, problem: InverseProblem) -> float:
    r = forward_operator(lam, problem) - problem.h
    return 0.5 * float(r @ r)


def _gradient_from_residual(lam, r, problem):
    g, inv = problem.g, 1.0 / problem.Lambda
    return (inv * (1.0 + g @ lam) - g) * r + inv * (lam @ r) * g


def gradient(lam, problem: InverseProblem) -> np.ndarray:
    """Gradient of the data misfit, with ``h``, ``g`` and ``Lambda`` held fixed."""
    lam = np.asarray(lam, dtype=float)
    r = forward_operator(lam, problem) - problem.h
    return _gradient_from_residual(lam, r, problem)


def lipschitz_bound(n_b: int, M: float, Lambda: float) -> float:
    """Upper bound on the Lipschitz constant of the gradient over ``[0, M]^n_b``."""
    if n_b <= 0 or M <= 0 or Lambda <= 0:
        raise ValueError("n_b, M and Lambda must be positive")
    inv = 1.0 / Lambda
    return (2 * inv ** 2 * n_b * M ** 2
            + (2 * inv ** 2 + 2 + 6 * inv) * math.sqrt(n_b) * M
            + 4 * inv + 2)


def init_fixed_point(problem: InverseProblem, xtol: float = 1e-14):
    """Closed-form initialization from the scalar fixed point for ``C = g . lam``.

    Returns ``(C_hat, lam0)``. ``lam0`` is clipped to ``[0, M]`` when the
    problem carries a box bound. If no root can be bracketed the fallback
    ``Lambda * h`` is returned with ``C_hat = nan``.
    """
    h, g, lam_tot = problem.h, problem.g, problem.Lambda
    hg = h * g
    if not np.any(hg > 0):
        lam0 = lam_tot * h
        return 0.0, _clip(lam0, problem.M)

    active = hg > 0
    hg_a, g_a = hg[active], g[active]

    def excess(c):
        return c - np.sum(hg_a / ((1.0 + c) / lam_tot - g_a))

    # feasible set is C > Lambda * max(g) - 1; the excess tends to -inf at its edge
    c_min = lam_tot * g_a.max() - 1.0
    if c_min < 0:
        a = 0.0
    else:
        a = c_min + 1e-12 * max(1.0, c_min)
        for _ in range(20):
            if excess(a) <= 0:
                break
            a = c_min + 0.5 * (a - c_min)
    b = max(2.0 * a, 1.0)
    try:
        for _ in range(200):
            if excess(b) > 0:
                break
            b *= 2.0
        if not excess(a) <= 0 < excess(b):
            raise ValueError("no sign change on the bracket")
        c_hat = brentq(excess, a, b, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)
    except (ValueError, RuntimeError):
        log.warning("fixed-point bracketing failed; falling back to Lambda * h")
        return float("nan"), _clip(lam_tot * h, problem.M)
    lam0 = np.zeros_like(h)
    pos = h > 0
    lam0[pos] = h[pos] / ((1.0 + c_hat) / lam_tot - g[pos])
    return float(c_hat), _clip(lam0, problem.M)


def _clip(x, M):
    return np.clip(x, 0.0, M) if M is not None else np.clip(x, 0.0, None)


def solve_mchc(problem: InverseProblem, max_iter: int = 50_000, tol: float = 1e-10,
               init: np.ndarray | None = None, step: float | None = None) -> CorrectionResult:
    """Monotone accelerated projected gradient for the box-constrained misfit.

    Each iteration takes a projected step from the extrapolated point and
    one from the current point, then keeps whichever has the lower
    objective, so the objective trace never increases. Stops when the
    relative objective change falls below ``tol``.
    """
    c_hat, lam0 = init_fixed_point(problem)
    if init is not None:
        lam0 = np.asarray(init, dtype=float)
    M = problem.M
    if M is None:
        M = BOX_FACTOR * float(lam0.max()) if lam0.max() > 0 else BOX_FACTOR * problem.Lambda
        problem = replace(problem, M=M)
    lam0 = np.clip(lam0, 0.0, M)
    gamma = 1.0 / lipschitz_bound(problem.grid.n_b, M, problem.Lambda) if step is None else step

    def evaluate(x):
        r = forward_operator(x, problem) - problem.h
        return 0.5 * float(r @ r), r

    lam = lam0.copy()
    lam_prev = lam0.copy()
    z = lam0.copy()
    q_prev, q = 0.0, 1.0
    f_lam, r_lam = evaluate(lam)
    trace = [f_lam]
    terminated = "max_iter"
    it = 0
    tiny = np.finfo(float).tiny
    for it in range(1, max_iter + 1):
        y = lam + (q_prev / q) * (z - lam) + ((q_prev - 1.0) / q) * (lam - lam_prev)
        _, r_y = evaluate(y)
        z = np.clip(y - gamma * _gradient_from_residual(y, r_y, problem), 0.0, M)
        x = np.clip(lam - gamma * _gradient_from_residual(lam, r_lam, problem), 0.0, M)
        q_prev, q = q, (math.sqrt(4 * q * q + 1) + 1) / 2
        f_z, r_z = evaluate(z)
        f_x, r_x = evaluate(x)
        lam_prev = lam
        f_old = f_lam
        if f_z <= f_x:
            cand = (z, f_z, r_z)
        else:
            cand = (x, f_x, r_x)
        # rounding can make a projected step fail to descend near the optimum;
        # keeping the current iterate then ends the run with zero change
        if cand[1] <= f_lam:
            lam, f_lam, r_lam = cand
        trace.append(f_lam)
        if abs(f_lam - f_old) / max(f_old, tiny) < tol:
            terminated = "tolerance"
            break
    return CorrectionResult(lambda_hat=lam, objective_trace=np.asarray(trace),
                            iterations=it, terminated=terminated, M=M, init_C=c_hat)


def corrected_histogram(result) -> np.ndarray:
    """Estimated arrival histogram: the recovered intensity normalized to sum one."""
    lam = result.lambda_hat if isinstance(result, CorrectionResult) else np.asarray(result)
    total = lam.sum()
    if not total > 0:
        raise DegenerateResultError("recovered intensity is identically zero")
    return lam / total
