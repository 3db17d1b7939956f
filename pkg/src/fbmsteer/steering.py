"""Steering controls for the neutral delay system.

The control that drives the mild solution from the history ``phi`` to a
target ``x1`` at time ``T`` is

    u = W^{-1} { x1 - R(T)[phi(0) + G(0, phi(-r(0)))] + G(T, x(T - r(T)))
                 - int_0^T R(T-s) F(s, x(s - rho(s))) ds
                 - int_0^T R(T-s) sigma(s) dB^H(s) },

with ``W u = int_0^T R(T-s) H u(s) ds``. State and control are found
together as a fixed point of the map ``x -> mild solution driven by u(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from .dynamics import (
    MildContext,
    NeutralLipschitzError,
    PicardDivergence,
    apply_mild_map,
    picard_solve,
)
from .fractional_noise import HurstParam, TimeGrid
from .resolvent import MemoryKernel, ResolventTable
from .spectral_space import SpectralModel, VectorPath

__all__ = [
    "InputOperator",
    "ControllabilityError",
    "SteeringError",
    "WInverse",
    "SteeringProblem",
    "SteeringResult",
    "ContractionConstants",
    "assemble_w",
    "invert_w",
    "synthesize_control",
    "contraction_gamma",
    "find_t1",
    "phi_iterate",
]


class ControllabilityError(np.linalg.LinAlgError):
    """The discrete controllability operator is rank deficient."""

    def __init__(self, message: str, deficient_modes: list[int]):
        super().__init__(message)
        self.deficient_modes = deficient_modes


class SteeringError(RuntimeError):
    def __init__(self, message: str, ratios: list[float]):
        super().__init__(message)
        self.ratios = ratios


@dataclass(frozen=True)
class InputOperator:
    """Bounded input map from ``R^m`` to the mode space, with ``bound = ||matrix||_2``."""

    matrix: np.ndarray
    bound: float = field(init=False)

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=float)
        if mat.ndim != 2 or mat.size == 0 or not np.all(np.isfinite(mat)):
            raise ValueError("input operator must be a finite, non-empty 2-D matrix")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "bound", float(np.linalg.norm(mat, 2)))

    @classmethod
    def first_modes(cls, n_modes: int, m: int | None = None) -> "InputOperator":
        """Actuation of the first ``m`` eigenmodes, one channel each."""
        m = n_modes if m is None else m
        if not 1 <= m <= n_modes:
            raise ValueError("need 1 <= m <= n_modes")
        return cls(np.eye(n_modes, m))

    @property
    def n_channels(self) -> int:
        return self.matrix.shape[1]


def assemble_w(table: ResolventTable, input_op, grid: TimeGrid | None = None) -> np.ndarray:
    """Matrix of ``u -> int_0^T R(T-s) H u(s) ds`` for piecewise-linear controls.

    Column ``j * (n_steps + 1) + k`` is ``w_k r_n(T - t_k) input[n, j]`` with
    trapezoid weights ``w_k``. Returns shape ``(n_modes, m * (n_steps + 1))``.
    """
    mat = input_op.matrix if isinstance(input_op, InputOperator) else np.asarray(input_op, float)
    grid = table.grid if grid is None else grid
    if grid != table.grid:
        raise ValueError("grid does not match the resolvent table")
    if mat.shape[0] != table.n_modes:
        raise ValueError(f"input operator has {mat.shape[0]} rows, table has {table.n_modes} modes")
    w = grid.trapezoid_weights()
    kernel = table.r[:, ::-1] * w  # (N, n+1): w_k r_n(T - t_k)
    return np.concatenate([kernel * mat[:, j:j + 1] for j in range(mat.shape[1])], axis=1)


@dataclass(frozen=True)
class WInverse:
    """Damped minimal-norm right inverse of ``W``.

    ``u = D^{-1/2} V diag(s / (s^2 + eps^2)) U^T y`` from the SVD of
    ``W D^{-1/2}``, where ``D`` holds the quadrature weights; ``u`` is thus
    the control of least ``L^2`` norm (as measured by those weights).
    """

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray
    scale: np.ndarray
    reg_epsilon: float
    rank: int

    @property
    def damped(self) -> np.ndarray:
        s, eps = self.s[: self.rank], self.reg_epsilon
        return s / (s * s + eps * eps)

    @property
    def mw_estimate(self) -> float:
        """Largest damped inverse singular value, the operator-norm surrogate for ``W^{-1}``."""
        return float(self.damped.max()) if self.rank else 0.0

    @property
    def sigma_min(self) -> float:
        return float(self.s[self.rank - 1]) if self.rank else 0.0

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        r = self.rank
        coeff = self.damped * (self.u[:, :r].T @ y)
        return self.scale * (self.vt[:r].T @ coeff)


def invert_w(w: np.ndarray, reg_epsilon: float = 0.0, quad_weights=None, rcond: float = 1e-10) -> WInverse:
    """SVD-based inverse of ``W`` with Tikhonov damping ``s / (s^2 + eps^2)``.

    ``quad_weights`` (one per column) selects the norm in which the returned
    control is minimal; ``None`` means the plain Euclidean norm. With
    ``reg_epsilon == 0`` singular values below ``rcond * s_max`` are treated as
    zero and a rank below the number of rows raises ``ControllabilityError``.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2:
        raise ValueError("W must be a matrix")
    if not reg_epsilon >= 0:
        raise ValueError("reg_epsilon must be non-negative")
    if quad_weights is None:
        scale = np.ones(w.shape[1])
    else:
        qw = np.asarray(quad_weights, dtype=float)
        if qw.shape != (w.shape[1],) or np.any(qw <= 0):
            raise ValueError("quadrature weights must be positive, one per column")
        scale = 1.0 / np.sqrt(qw)
    u, s, vt = np.linalg.svd(w * scale, full_matrices=False)
    smax = s[0] if s.size else 0.0
    if reg_epsilon == 0:
        rank = int(np.sum(s > rcond * smax)) if smax > 0 else 0
        if rank < w.shape[0]:
            left_null = u[:, rank:] if rank < u.shape[1] else np.zeros((w.shape[0], 0))
            if left_null.shape[1] < w.shape[0] - rank:
                # fewer columns than rows: complete the left null space
                q, _ = np.linalg.qr(np.concatenate([u[:, :rank], np.eye(w.shape[0])], axis=1))
                left_null = q[:, rank:w.shape[0]]
            weight = np.linalg.norm(left_null, axis=1)
            bad = [int(i) for i in np.flatnonzero(weight > 0.5)] or [int(np.argmax(weight))]
            raise ControllabilityError(
                f"W has rank {rank} < {w.shape[0]}: modes {bad} are not reachable by the input",
                bad)
    else:
        rank = int(np.sum(s > 0))
    return WInverse(u, s, vt, scale, float(reg_epsilon), rank)


@dataclass(frozen=True)
class SteeringProblem(MildContext):
    """Mild-solution context plus target, regularisation and noise model."""

    target: np.ndarray = None
    reg_epsilon: float = 0.0
    model: SpectralModel | None = None
    kernel: MemoryKernel | None = None
    hurst: HurstParam | None = None

    def __post_init__(self):
        super().__post_init__()
        target = np.array(self.target, dtype=float).ravel()
        if target.shape != (self.n_modes,) or not np.all(np.isfinite(target)):
            raise ValueError("target must be a finite vector with one entry per mode")
        if not self.reg_epsilon >= 0:
            raise ValueError("reg_epsilon must be non-negative")
        target.setflags(write=False)
        object.__setattr__(self, "target", target)

    @property
    def horizon(self) -> float:
        return self.grid.t_end

    @cached_property
    def input(self) -> InputOperator:
        return InputOperator(self.input_matrix)

    @cached_property
    def w_matrix(self) -> np.ndarray:
        return assemble_w(self.table, self.input)

    @cached_property
    def w_inverse(self) -> WInverse:
        weights = np.tile(self.grid.trapezoid_weights(), self.n_channels)
        return invert_w(self.w_matrix, self.reg_epsilon, weights)

    @cached_property
    def constants(self) -> "ContractionConstants":
        nl = self.nonlinearities
        return ContractionConstants(nl.c1, nl.c3, self.table.sup_norm, self.input.bound,
                                    self.w_inverse.mw_estimate, self.horizon)

    def noise_terminal(self, noise_conv) -> np.ndarray:
        if noise_conv is None:
            return np.zeros(self.n_modes)
        return np.asarray(noise_conv.values if isinstance(noise_conv, VectorPath) else noise_conv)[:, -1]


def synthesize_control(candidate, noise_conv, problem: SteeringProblem, w_inverse: WInverse | None = None) -> np.ndarray:
    """Control of shape ``(m, n_steps + 1)`` for the current state candidate."""
    x = candidate.values if isinstance(candidate, VectorPath) else np.asarray(candidate, dtype=float)
    w_inverse = problem.w_inverse if w_inverse is None else w_inverse
    grid = problem.grid
    n = grid.n_steps
    nl, delays = problem.nonlinearities, problem.delays
    t_end = np.array([grid.t_end])
    neutral_T = nl.G(t_end, problem.delayed(x, delays.r)[:, -1:])[:, 0]
    drift = nl.F(grid.points, problem.delayed(x, delays.rho))
    drift_int = (problem.table.r[:, ::-1] * drift) @ grid.trapezoid_weights()
    y = (problem.target - problem.free_response[:, n] + neutral_T - drift_int
         - problem.noise_terminal(noise_conv))
    return w_inverse(y).reshape(problem.n_channels, n + 1)


def contraction_gamma(t, c1: float, c3: float, M: float, Mb: float, Mw: float, T: float):
    """``4 [c3^2 + M^2 c1^2 t^2 + t M^2 Mb^2 Mw^2 (1 + T^2 c1^2 M^2)]``."""
    t = np.asarray(t, dtype=float)
    g = 4.0 * (c3 ** 2 + M ** 2 * c1 ** 2 * t ** 2
               + t * M ** 2 * Mb ** 2 * Mw ** 2 * (1.0 + T ** 2 * c1 ** 2 * M ** 2))
    return float(g) if g.ndim == 0 else g


@dataclass(frozen=True)
class ContractionConstants:
    c1: float
    c3: float
    M: float
    Mb: float
    Mw: float
    T: float

    def gamma(self, t):
        return contraction_gamma(t, self.c1, self.c3, self.M, self.Mb, self.Mw, self.T)


def find_t1(constants: ContractionConstants, dt: float | None = None, margin: float = 0.05) -> float:
    """Largest ``T1 <= T`` (floored to the grid) with ``gamma(T1) < 1 - margin``.

    When ``gamma(0)`` already exceeds ``1 - margin`` but is below 1 the
    threshold is moved to ``(1 + gamma(0)) / 2``. At least one grid step is
    returned.
    """
    g0 = 4.0 * constants.c3 ** 2
    if g0 >= 1.0:
        raise NeutralLipschitzError(
            f"neutral Lipschitz constant too large: 4 c3^2 = {g0:.6g} >= 1, no contraction interval exists")
    threshold = 1.0 - margin
    if g0 >= threshold:
        threshold = 0.5 * (1.0 + g0)
    T = constants.T
    if constants.gamma(T) < threshold:
        return T
    t1 = brentq(lambda t: constants.gamma(t) - threshold, 0.0, T, xtol=1e-14, rtol=1e-14)
    if dt is not None:
        k = math.floor(t1 / dt * (1 + 1e-12))
        if constants.gamma(k * dt) >= threshold:
            k -= 1
        t1 = max(k, 1) * dt
    return t1


@dataclass
class SteeringResult:
    trajectory: VectorPath
    control: VectorPath
    terminal_error: float
    relative_error: float
    outer_iterations: int
    gamma_used: float
    mw_estimate: float
    ratios: list[float] = field(default_factory=list)
    differences: list[float] = field(default_factory=list)
    n_windows: int = 1
    t1: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "terminal_error": self.terminal_error,
            "relative_error": self.relative_error,
            "outer_iterations": self.outer_iterations,
            "gamma_used": self.gamma_used,
            "mw_estimate": self.mw_estimate,
            "n_windows": self.n_windows,
            "t1": self.t1,
            "ratios": list(self.ratios),
            "seed": self.trajectory.seed,
            "replication_index": self.trajectory.replication_index,
        }


def _window_solve(problem, noise_conv, x, u, lo, hi, target, tol, max_outer, diffs, ratios):
    """Outer fixed point on grid indices ``(lo, hi]`` (``[0, hi]`` when ``lo == 0``)
    steering ``x(t_hi)`` to ``target``; earlier values of ``x`` and ``u`` are frozen."""
    grid = problem.grid
    cols = np.arange(0 if lo == 0 else lo + 1, hi + 1)
    w = grid.dt * np.ones(cols.size)
    if lo == 0:
        w[0] *= 0.5
    w[-1] *= 0.5
    kern = problem.table.r[:, hi - cols] * w
    mat = problem.input_matrix
    wmat = np.concatenate([kern * mat[:, j:j + 1] for j in range(mat.shape[1])], axis=1)
    winv = invert_w(wmat, problem.reg_epsilon, np.tile(w, mat.shape[1]))
    prev = None
    for it in range(max_outer):
        u[:, cols] = 0.0
        base = apply_mild_map(x, u, noise_conv, problem).values[:, hi]
        u[:, cols] = winv(target - base).reshape(mat.shape[1], cols.size)
        new = apply_mild_map(x, u, noise_conv, problem).values
        d = float(np.abs(new[:, cols] - x[:, cols]).max())
        x[:, cols] = new[:, cols]
        diffs.append(d)
        if prev:
            ratios.append(d / prev)
        prev = d
        if not math.isfinite(d) or d > 1e12:
            return False, it + 1, winv
        if d < tol * max(1.0, float(np.abs(x[:, cols]).max())):
            return True, it + 1, winv
    return False, max_outer, winv


def phi_iterate(problem: SteeringProblem, noise_conv=None, tol: float = 1e-10, max_outer: int = 50,
                picard_tol: float | None = None) -> SteeringResult:
    """Steering pair ``(x, u)`` for one noise realisation.

    ``noise_conv`` is the stochastic convolution of the path (``None`` for a
    deterministic run). Alternates ``u = synthesize_control(x)`` and
    ``x = apply_mild_map(x, u)`` until the sup-norm change drops below
    ``tol * max(1, sup |x|)``. If that fails the horizon is cut into windows of length ``T1``
    and each window is steered to an intermediate target on the segment
    from the uncontrolled state to ``x1``. The reported terminal error
    comes from re-solving the state equation with the final control.
    """
    grid = problem.grid
    n = grid.n_steps
    consts = problem.constants
    diffs: list[float] = []
    ratios: list[float] = []
    x = problem.constant_extension()
    u = problem.zero_control()
    winv = problem.w_inverse
    converged = False
    outer = 0
    prev = None
    for outer in range(1, max_outer + 1):
        u = synthesize_control(x, noise_conv, problem, winv)
        new = apply_mild_map(x, u, noise_conv, problem).values
        d = float(np.abs(new - x).max())
        x = new
        diffs.append(d)
        if prev:
            ratios.append(d / prev)
        prev = d
        if not math.isfinite(d) or d > 1e12:
            break
        if d < tol * max(1.0, float(np.abs(x).max())):
            converged = True
            break
    n_windows, t1 = 1, grid.t_end
    mw = winv.mw_estimate
    if converged:
        u = synthesize_control(x, noise_conv, problem, winv)
    else:
        t1 = find_t1(consts, grid.dt)
        n_windows = max(2, math.ceil(grid.t_end / t1 - 1e-9))
        n_windows = min(n_windows, n)
        edges = np.linspace(0, n, n_windows + 1).round().astype(int)
        x_unc, _ = picard_solve(None, noise_conv, problem, tol=tol, n_windows=n_windows,
                                max_iter=max_outer)
        x = problem.constant_extension()
        u = problem.zero_control()
        diffs, ratios = [], []
        outer = 0
        for i in range(1, n_windows + 1):
            lam = i / n_windows
            target = (1 - lam) * x_unc.values[:, edges[i]] + lam * problem.target
            ok, its, wi = _window_solve(problem, noise_conv, x, u, edges[i - 1], edges[i], target,
                                        tol, max_outer, diffs, ratios)
            outer = max(outer, its)
            mw = max(mw, wi.mw_estimate)
            if not ok:
                raise SteeringError(
                    f"outer iteration did not converge on window {i} of {n_windows} "
                    f"within {max_outer} iterations", ratios)
    control = VectorPath(grid, u)
    try:
        traj, _ = picard_solve(u, noise_conv, problem, tol=picard_tol or tol, max_iter=max_outer,
                               n_windows=n_windows)
    except PicardDivergence as exc:
        raise SteeringError(f"state equation with the final control failed: {exc}", ratios) from exc
    seed = getattr(noise_conv, "seed", None)
    rep = getattr(noise_conv, "replication_index", None)
    traj = VectorPath(grid, traj.values, seed, rep)
    err = float(np.linalg.norm(traj.terminal - problem.target))
    scale = float(np.linalg.norm(problem.target))
    return SteeringResult(
        trajectory=traj,
        control=control,
        terminal_error=err,
        relative_error=err / scale if scale > 0 else err,
        outer_iterations=outer,
        gamma_used=float(consts.gamma(t1)),
        mw_estimate=mw,
        ratios=ratios,
        differences=diffs,
        n_windows=n_windows,
        t1=t1,
    )
