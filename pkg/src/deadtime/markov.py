"""Markov chain of detection times modulo the illumination period.

The transition density from detection time ``y`` to ``x`` is

    lambda(x) / (1 - exp(-Lambda)) * exp(-int_{y + x_d}^{c t_r + x} lambda)

with ``c = floor((y + x_d - x) / t_r) + 1``. Discretized kernels integrate
this density exactly over each target bin and average the source state
over Gauss-Legendre nodes inside its bin, weighted by the arrival
intensity. Rows therefore sum to one analytically, and for ``x_d == 0``
the binned arrival distribution is stationary up to quadrature error.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math

import numpy as np

from .errors import (CapacityError, ConvergenceError, DegenerateModelError,
                     UnsupportedModeError)
from .scene import (BinGrid, SceneModel, _primitive, arrival_pdf, bin_masses,
                    cumulative_intensity, intensity_at)

log = logging.getLogger(__name__)

DENSE_MAX_BINS = 4000
DENSITY_FLOOR = 1e-12
SPEED_OF_LIGHT_M_PER_NS = 0.299792458


def transition_pdf(model: SceneModel, x_prev, x_next):
    """Density (1/ns) of the next detection time ``x_next`` given ``x_prev``."""
    lam = model.total_flux
    if lam <= 0:
        raise DegenerateModelError("transition pdf undefined for zero total flux")
    y = np.asarray(x_prev, dtype=float)
    x = np.asarray(x_next, dtype=float)
    y, x = np.broadcast_arrays(y, x)
    start = y + model.x_d
    c = np.floor((start - x) / model.t_r) + 1
    upper = c * model.t_r + x
    expo = cumulative_intensity(model, start, upper)
    out = intensity_at(model, x) * np.exp(-expo) / (-math.expm1(-lam))
    return out if np.ndim(out) else float(out)


@dataclass
class _Sources:
    """Per-node quantities of the discretized kernel, independent of the state."""

    src_bin: np.ndarray     # source bin of each node
    tgt_bin: np.ndarray     # bin containing the reset point y + x_d (mod t_r)
    coef: np.ndarray        # omega * exp(Lbar(u)) / (1 - exp(-Lambda))
    split: np.ndarray       # coef * mass landing in the reset bin
    mass_term: np.ndarray   # exp(-Lbar(lo_n)) - exp(-Lbar(hi_n)) per target bin
    wrap: float             # exp(-Lambda)


def _sources(model: SceneModel, grid: BinGrid, quad_nodes: int) -> _Sources:
    lam = model.total_flux
    if lam <= 0:
        raise DegenerateModelError("kernel undefined for zero total flux")
    t_bin, n_b = grid.t_bin, grid.n_b
    xi, wq = np.polynomial.legendre.leggauss(quad_nodes)
    lo = grid.edges[:-1]
    y = (lo[:, None] + 0.5 * (xi[None, :] + 1.0) * t_bin)
    w = intensity_at(model, y) * wq[None, :]
    wsum = w.sum(axis=1, keepdims=True)
    uniform = np.broadcast_to(wq[None, :] / wq.sum(), w.shape)
    omega = np.where(wsum > 0, w / np.where(wsum > 0, wsum, 1.0), uniform)

    u = np.mod(y + model.x_d, model.t_r).ravel()
    k = np.clip(np.floor(u / t_bin).astype(np.int64), 0, n_b - 1)
    prim_u = _primitive(model, u)

    masses = bin_masses(model, grid)
    prim_lo = np.concatenate([[0.0], np.cumsum(masses)[:-1]])
    # G(lo) - G(hi) computed without cancellation
    mass_term = np.exp(-prim_lo) * -np.expm1(-masses)

    norm = -math.expm1(-lam)
    coef = omega.ravel() * np.exp(prim_u) / norm
    wrap = math.exp(-lam)
    d_lo = np.clip(prim_u - prim_lo[k], 0.0, None)
    d_hi = np.clip(prim_lo[k] + masses[k] - prim_u, 0.0, None)
    g_u = np.exp(-prim_u)
    # [lo_k, u] needs a full extra period, [u, hi_k] does not
    split_mass = wrap * np.exp(-prim_lo[k]) * -np.expm1(-d_lo) + g_u * -np.expm1(-d_hi)
    return _Sources(
        src_bin=np.repeat(np.arange(n_b), quad_nodes),
        tgt_bin=k,
        coef=coef,
        split=coef * split_mass,
        mass_term=mass_term,
        wrap=wrap,
    )


@dataclass
class TransitionKernel:
    """Discretized transition operator over the ``n_b`` detection-time bins.

    Either ``matrix`` holds a dense row-stochastic matrix, or the kernel is
    matrix-free and applied through prefix sums in ``apply_left``.
    """

    grid: BinGrid
    model: SceneModel | None = None
    matrix: np.ndarray | None = None
    _src: _Sources | None = None

    @property
    def mode(self) -> str:
        return "dense" if self.matrix is not None else "matrix-free"

    def apply_left(self, p: np.ndarray) -> np.ndarray:
        """Row vector times kernel: the bin distribution after one transition."""
        if self.matrix is not None:
            return p @ self.matrix
        s = self._src
        n_b = self.grid.n_b
        ps = p[s.src_bin]
        a = np.bincount(s.tgt_bin, ps * s.coef, minlength=n_b)
        diag = np.bincount(s.tgt_bin, ps * s.split, minlength=n_b)
        csum = np.cumsum(a)
        before = csum - a
        after = csum[-1] - csum
        return s.mass_term * (before + s.wrap * after) + diag


def build_kernel(model: SceneModel, grid: BinGrid, mode: str = "matrix-free",
                 quad_nodes: int = 4, max_dense_bins: int = DENSE_MAX_BINS) -> TransitionKernel:
    """Build the discretized transition kernel in ``dense`` or ``matrix-free`` mode."""
    if grid.n_b < 2:
        raise ValueError("n_b must be at least 2")
    if mode not in ("dense", "matrix-free"):
        raise UnsupportedModeError(f"unknown kernel mode {mode!r}")
    src = _sources(model, grid, quad_nodes)
    if mode == "matrix-free":
        return TransitionKernel(grid=grid, model=model, _src=src)
    if grid.n_b > max_dense_bins:
        raise CapacityError(
            f"dense kernel with n_b={grid.n_b} exceeds cap {max_dense_bins}; "
            "use mode='matrix-free'")
    n_b = grid.n_b
    mat = np.zeros((n_b, n_b))
    cols = np.arange(n_b)
    for j in range(len(src.coef)):
        m, k = src.src_bin[j], src.tgt_bin[j]
        row = src.mass_term * np.where(cols < k, src.wrap, 1.0)
        row[k] = 0.0
        mat[m] += src.coef[j] * row
        mat[m, k] += src.split[j]
    mat /= mat.sum(axis=1, keepdims=True)
    return TransitionKernel(grid=grid, model=model, matrix=mat)


@dataclass(frozen=True)
class StationaryResult:
    """Stationary detection-time density of a kernel.

    ``lambda2`` is the asymptotic contraction factor of the power iteration,
    an estimate of the second-largest eigenvalue modulus.
    """

    pdf: np.ndarray
    lambda2: float
    iterations: int
    residual: float

    @property
    def gap(self) -> float:
        return 1.0 - self.lambda2


def stationary_distribution(kernel: TransitionKernel, tol: float = 1e-10,
                            max_iter: int = 100_000) -> StationaryResult:
    """Power iteration from the uniform distribution until the l1 step is below ``tol``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    grid = kernel.grid
    p = np.full(grid.n_b, 1.0 / grid.n_b)
    steps = []
    for it in range(1, max_iter + 1):
        nxt = kernel.apply_left(p)
        nxt /= nxt.sum()
        step = float(np.abs(nxt - p).sum())
        steps.append(step)
        p = nxt
        if step < tol:
            break
    else:
        raise ConvergenceError(
            f"power iteration did not reach tol={tol} in {max_iter} iterations",
            residual=step, iterations=max_iter)
    np.clip(p, 0.0, None, out=p)
    p /= p.sum()
    residual = float(np.abs(kernel.apply_left(p) - p).sum())
    return StationaryResult(pdf=p / grid.t_bin, lambda2=_contraction(steps),
                            iterations=it, residual=residual)


def _contraction(steps, window: int = 10) -> float:
    # geometric mean step ratio; single ratios oscillate for complex eigenvalues
    steps = [x for x in steps if x > 0]
    if len(steps) < 2:
        return 0.0
    k = min(window, len(steps) - 1)
    return min((steps[-1] / steps[-1 - k]) ** (1.0 / k), 1.0)


def detection_pdf(model: SceneModel, grid: BinGrid, tol: float = 1e-10,
                  max_iter: int = 100_000, quad_nodes: int = 4) -> np.ndarray:
    """Stationary detection-time density (1/ns) for a scene."""
    kernel = build_kernel(model, grid, "matrix-free", quad_nodes=quad_nodes)
    return stationary_distribution(kernel, tol, max_iter).pdf


def spectral_gap(kernel: TransitionKernel) -> float:
    """``1 - |mu_2|`` for the second-largest-modulus eigenvalue of a dense kernel."""
    if kernel.matrix is None:
        raise UnsupportedModeError("spectral_gap needs a dense kernel")
    ev = np.sort(np.abs(np.linalg.eigvals(kernel.matrix)))[::-1]
    if len(ev) < 2:
        return 1.0
    return float(1.0 - ev[1])


def fisher_information(model: SceneModel, grid: BinGrid, which: str = "arrival",
                       delta_tau: float | None = None, floor: float = DENSITY_FLOOR,
                       tol: float = 1e-10) -> float:
    """Per-detection Fisher information about the delay (1/ns^2).

    The delay derivative is a central difference. With the default step of
    one bin the shifted densities are circular shifts of the unshifted one,
    so only one stationary solve is needed. Multiply by ``(2/c)^2`` to
    express the result per unit depth.
    """
    if which not in ("arrival", "detection"):
        raise ValueError("which must be 'arrival' or 'detection'")
    step = grid.t_bin if delta_tau is None else float(delta_tau)
    if step <= 0:
        raise ValueError("delta_tau must be positive")

    def density(m):
        if which == "arrival":
            return arrival_pdf(m, grid)
        return detection_pdf(m, grid, tol=tol)

    f = density(model)
    if math.isclose(step, grid.t_bin, rel_tol=1e-9):
        f_plus, f_minus = np.roll(f, 1), np.roll(f, -1)
    else:
        f_plus = density(model.with_tau(model.tau + step))
        f_minus = density(model.with_tau(model.tau - step))
    deriv = (f_plus - f_minus) / (2 * step)
    return float(np.sum(deriv ** 2 / np.maximum(f, floor)) * grid.t_bin)


def fisher_tau_to_depth(fi_tau: float) -> float:
    """Convert Fisher information per ns^2 of delay into per m^2 of depth."""
    return fi_tau * (2.0 / SPEED_OF_LIGHT_M_PER_NS) ** 2
