"""Neutral delay mild-solution map and its Picard iteration.

For a fixed control ``u`` and a fixed noise realisation the state satisfies

    x(t) = R(t)[phi(0) + G(0, phi(-r(0)))] - G(t, x(t - r(t)))
           + int_0^t R(t-s)[H u(s) + F(s, x(s - rho(s)))] ds
           + int_0^t R(t-s) sigma(s) dB^H(s),      x = phi on [-tau, 0].

The stochastic convolution is precomputed per path, so the map is
deterministic and is iterated path by path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .fractional_noise import TimeGrid
from .resolvent import ResolventTable, convolve_trapezoid
from .spectral_space import VectorPath

__all__ = [
    "HistoryFunction",
    "DelayPair",
    "Nonlinearities",
    "NeutralLipschitzError",
    "LipschitzAuditError",
    "MildContext",
    "PicardDiagnostics",
    "PicardDivergence",
    "audit_map",
    "evaluate_delayed",
    "apply_mild_map",
    "picard_solve",
    "full_trajectory",
]


class NeutralLipschitzError(ValueError):
    """The neutral term ``G`` has Lipschitz constant ``c3 >= 1/2``."""


class LipschitzAuditError(ValueError):
    pass


class PicardDivergence(RuntimeError):
    """Picard iteration did not reach the tolerance; carries the iteration history."""

    def __init__(self, message: str, differences: list[float], ratios: list[float]):
        super().__init__(message)
        self.differences = differences
        self.ratios = ratios


def _interp_uniform(values: np.ndarray, t0: float, dt: float, s: np.ndarray) -> np.ndarray:
    """Linear interpolation of ``values[:, i]`` at ``t0 + i dt`` to times ``s``."""
    m = values.shape[1] - 1
    pos = (np.asarray(s, dtype=float) - t0) / dt
    if m == 0:
        return np.repeat(values[:, :1], pos.size, axis=1)
    i = np.clip(np.floor(pos).astype(int), 0, m - 1)
    frac = np.clip(pos - i, 0.0, 1.0)
    return values[:, i] * (1.0 - frac) + values[:, i + 1] * frac


@dataclass(frozen=True)
class HistoryFunction:
    """Initial segment ``phi`` on ``[-tau, 0]`` tabulated on a uniform grid."""

    tau: float
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if not self.tau > 0:
            raise ValueError("maximal delay tau must be positive")
        if values.ndim != 2 or values.shape[1] < 2:
            raise ValueError("history values must have shape (n_modes, n_points >= 2)")
        if not np.all(np.isfinite(values)):
            raise ValueError("history must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(cls, phi: Callable, tau: float, n_points: int = 65) -> "HistoryFunction":
        """Tabulate ``phi(t) -> (n_modes,)`` at ``n_points`` nodes of ``[-tau, 0]``."""
        times = np.linspace(-tau, 0.0, n_points)
        return cls(tau, np.stack([np.asarray(phi(t), dtype=float) for t in times], axis=1))

    @classmethod
    def constant(cls, coefficients, tau: float) -> "HistoryFunction":
        c = np.asarray(coefficients, dtype=float)
        return cls(tau, np.repeat(c[:, None], 2, axis=1))

    @property
    def n_modes(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return np.linspace(-self.tau, 0.0, self.values.shape[1])

    @property
    def at_zero(self) -> np.ndarray:
        return self.values[:, -1]

    def __call__(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(s < -self.tau * (1 + 1e-12)) or np.any(s > 1e-12):
            raise ValueError("history queried outside [-tau, 0]")
        dt = self.tau / (self.values.shape[1] - 1)
        return _interp_uniform(self.values, -self.tau, dt, s)


def _as_delay(d) -> Callable:
    if callable(d):
        return d
    value = float(d)
    return lambda t: np.full_like(np.asarray(t, dtype=float), value)


@dataclass(frozen=True)
class DelayPair:
    """Delay ``r`` of the neutral term and ``rho`` of the drift, both in ``[0, tau]``."""

    r: Callable
    rho: Callable
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "r", _as_delay(self.r))
        object.__setattr__(self, "rho", _as_delay(self.rho))
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def validate(self, grid: TimeGrid) -> None:
        t = np.linspace(0.0, grid.t_end, 4 * grid.n_steps + 1)
        for name, fn in (("r", self.r), ("rho", self.rho)):
            v = np.asarray(fn(t), dtype=float)
            if not np.all(np.isfinite(v)) or v.min() < 0 or v.max() > self.tau * (1 + 1e-12):
                raise ValueError(f"delay {name} leaves [0, tau] on the horizon")


def audit_map(fn: Callable, lipschitz: float, growth: float, n_modes: int, t_end: float = 1.0,
              n_samples: int = 256, seed: int = 0, scale: float = 3.0) -> tuple[float, float]:
    """Sampled ``max |fn(x) - fn(y)| / (lipschitz |x - y|)`` and
    ``max |fn(x)|^2 / (growth (1 + |x|^2))``; zero constants give ``inf`` on any
    non-zero sample."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, t_end, n_samples)
    x = scale * rng.standard_normal((n_modes, n_samples))
    y = x + scale * rng.standard_normal((n_modes, n_samples)) * rng.uniform(1e-3, 1.0, n_samples)
    fx, fy = fn(t, x), fn(t, y)
    dq = float((np.linalg.norm(fx - fy, axis=0) / np.linalg.norm(x - y, axis=0)).max())
    gq = float((np.sum(fx * fx, axis=0) / (1.0 + np.sum(x * x, axis=0))).max())

    def ratio(v, c, floor):
        if c > 0:
            return v / c
        return math.inf if v > floor else 0.0

    return ratio(dq, lipschitz, 1e-12), ratio(gq, growth, 1e-24)


@dataclass(frozen=True)
class Nonlinearities:
    """Drift ``F`` and neutral term ``G`` acting on mode vectors.

    Both are called as ``F(t, x)`` with ``t`` of shape ``(K,)`` and ``x`` of
    shape ``(n_modes, K)`` and return ``(n_modes, K)``. ``c1``/``c3`` are the
    Lipschitz constants of ``F``/``G``, ``c2``/``c4`` their growth constants
    in ``||F(t,x)||^2 <= c2 (1 + ||x||^2)``.
    """

    F: Callable
    G: Callable
    c1: float
    c2: float
    c3: float
    c4: float

    def __post_init__(self):
        for name in ("c1", "c2", "c3", "c4"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and non-negative")
        if self.c3 >= 0.5:
            raise NeutralLipschitzError(
                f"neutral Lipschitz constant too large: c3 = {self.c3} must be < 1/2")

    @classmethod
    def zero(cls) -> "Nonlinearities":
        def z(t, x):
            return np.zeros_like(x)
        return cls(z, z, 0.0, 0.0, 0.0, 0.0)

    def audit(self, n_modes: int, **kw) -> dict[str, float]:
        """Largest sampled Lipschitz and growth ratios; each must be <= 1 (up to rounding)."""
        f_lip, f_grow = audit_map(self.F, self.c1, self.c2, n_modes, **kw)
        g_lip, g_grow = audit_map(self.G, self.c3, self.c4, n_modes, **kw)
        return {"F_lipschitz": f_lip, "F_growth": f_grow, "G_lipschitz": g_lip, "G_growth": g_grow}

    def check(self, n_modes: int, **kw) -> None:
        bad = {k: v for k, v in self.audit(n_modes, **kw).items() if v > 1.0 + 1e-9}
        if bad:
            raise LipschitzAuditError(f"nonlinearity constants violated by sampled points: {bad}")


@dataclass(frozen=True)
class MildContext:
    """Everything the mild map needs besides the candidate, control and noise."""

    table: ResolventTable
    history: HistoryFunction
    delays: DelayPair
    nonlinearities: Nonlinearities
    input_matrix: np.ndarray

    def __post_init__(self):
        mat = np.array(self.input_matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != self.table.n_modes:
            raise ValueError("input matrix must have shape (n_modes, n_channels)")
        if self.history.n_modes != self.table.n_modes:
            raise ValueError("history and resolvent table disagree on the number of modes")
        mat.setflags(write=False)
        object.__setattr__(self, "input_matrix", mat)

    @property
    def grid(self) -> TimeGrid:
        return self.table.grid

    @property
    def n_modes(self) -> int:
        return self.table.n_modes

    @property
    def n_channels(self) -> int:
        return self.input_matrix.shape[1]

    @cached_property
    def initial_state(self) -> np.ndarray:
        """``phi(0) + G(0, phi(-r(0)))``."""
        h = self.history
        lag = h(-float(self.delays.r(np.array([0.0]))[0]))
        return h.at_zero + self.nonlinearities.G(np.array([0.0]), lag)[:, 0]

    @cached_property
    def free_response(self) -> np.ndarray:
        """``R(t) [phi(0) + G(0, phi(-r(0)))]`` on the grid."""
        return self.table.r * self.initial_state[:, None]

    def delayed(self, x: np.ndarray, delay: Callable) -> np.ndarray:
        return evaluate_delayed(x, self.history, self.grid.points, delay, grid=self.grid)

    def zero_control(self) -> np.ndarray:
        return np.zeros((self.n_channels, self.grid.n_steps + 1))

    def constant_extension(self) -> np.ndarray:
        return np.repeat(self.history.at_zero[:, None], self.grid.n_steps + 1, axis=1)


def evaluate_delayed(trajectory, history: HistoryFunction, t, delay, grid: TimeGrid | None = None) -> np.ndarray:
    """``x(t - delay(t))``, from the trajectory for non-negative arguments and
    from the history otherwise. Linear interpolation in time.

    ``trajectory`` is a ``VectorPath`` or an ``(n_modes, n_steps+1)`` array on
    ``grid``. Returns ``(n_modes,)`` for scalar ``t``, ``(n_modes, K)`` otherwise.
    """
    if isinstance(trajectory, VectorPath):
        grid = trajectory.grid
        trajectory = trajectory.values
    if grid is None:
        raise ValueError("grid is required when the trajectory is a plain array")
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    s = t - np.asarray(_as_delay(delay)(t), dtype=float)
    if np.any(s < -history.tau * (1 + 1e-12)):
        raise ValueError("delayed argument falls before -tau; the delay bound is violated")
    out = np.empty((trajectory.shape[0], t.size))
    past = s < 0
    if np.any(past):
        out[:, past] = history(s[past])
    if np.any(~past):
        out[:, ~past] = _interp_uniform(trajectory, 0.0, grid.dt, s[~past])
    return out[:, 0] if scalar else out


def apply_mild_map(candidate, u, noise_conv, ctx: MildContext) -> VectorPath:
    """One application of the mild-solution right-hand side to ``candidate``.

    ``u`` has shape ``(n_channels, n_steps+1)`` (``None`` means zero control);
    ``noise_conv`` is the precomputed stochastic convolution (``None`` means
    no noise). Convolutions use the trapezoid rule on the resolvent grid.
    """
    x = candidate.values if isinstance(candidate, VectorPath) else np.asarray(candidate, dtype=float)
    grid = ctx.grid
    if x.shape != (ctx.n_modes, grid.n_steps + 1):
        raise ValueError(f"candidate has shape {x.shape}, expected {(ctx.n_modes, grid.n_steps + 1)}")
    t = grid.points
    nl = ctx.nonlinearities
    neutral = nl.G(t, ctx.delayed(x, ctx.delays.r))
    forcing = nl.F(t, ctx.delayed(x, ctx.delays.rho))
    if u is not None:
        u = np.asarray(u, dtype=float)
        if u.shape != (ctx.n_channels, grid.n_steps + 1):
            raise ValueError(f"control has shape {u.shape}, expected {(ctx.n_channels, grid.n_steps + 1)}")
        forcing = forcing + ctx.input_matrix @ u
    out = ctx.free_response - neutral + convolve_trapezoid(ctx.table.r, forcing, grid.dt)
    if noise_conv is not None:
        nv = noise_conv.values if isinstance(noise_conv, VectorPath) else np.asarray(noise_conv)
        if nv.shape != out.shape:
            raise ValueError("stochastic convolution does not match the state grid")
        out = out + nv
    return VectorPath(grid, out)


@dataclass
class PicardDiagnostics:
    iterations: int = 0
    differences: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    residual: float = float("nan")
    n_windows: int = 1

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "differences": list(self.differences),
                "ratios": list(self.ratios), "residual": self.residual, "n_windows": self.n_windows}


def picard_solve(u, noise_conv, ctx: MildContext, tol: float = 1e-10, max_iter: int = 100,
                 n_windows: int = 1, initial=None) -> tuple[VectorPath, PicardDiagnostics]:
    """Fixed point of ``apply_mild_map`` for a given control and noise.

    Starts from the constant extension of ``phi(0)``. With ``n_windows > 1``
    the horizon is cut into consecutive windows and the iteration is run on
    each window in turn with earlier values frozen; this is valid because
    the map is causal. Stops when the sup-norm update on the active window
    drops below ``tol * max(1, sup |x|)``; raises ``PicardDivergence`` after ``max_iter`` sweeps
    on any window.
    """
    grid = ctx.grid
    n = grid.n_steps
    x = ctx.constant_extension() if initial is None else np.array(
        initial.values if isinstance(initial, VectorPath) else initial, dtype=float)
    n_windows = max(1, min(int(n_windows), n))
    edges = np.linspace(0, n, n_windows + 1).round().astype(int)
    diag = PicardDiagnostics(n_windows=n_windows)
    for w in range(n_windows):
        active = slice(0 if w == 0 else edges[w] + 1, edges[w + 1] + 1)
        prev = None
        for it in range(max_iter):
            new = apply_mild_map(x, u, noise_conv, ctx).values
            d = float(np.abs(new[:, active] - x[:, active]).max())
            x[:, active] = new[:, active]
            diag.iterations += 1
            diag.differences.append(d)
            if prev is not None and prev > 0:
                diag.ratios.append(d / prev)
            prev = d
            if not math.isfinite(d) or d > 1e12:
                raise PicardDivergence(f"Picard iteration diverged on window {w} (update {d:.3e})",
                                       diag.differences, diag.ratios)
            if d < tol * max(1.0, float(np.abs(x[:, active]).max())):
                break
        else:
            raise PicardDivergence(
                f"no convergence within {max_iter} iterations on window {w}; "
                "the contraction constant exceeds 1 on this horizon, split the interval",
                diag.differences, diag.ratios)
    sol = VectorPath(grid, x)
    diag.residual = float(np.abs(apply_mild_map(sol, u, noise_conv, ctx).values - x).max())
    return sol, diag


def full_trajectory(path: VectorPath, history: HistoryFunction) -> tuple[np.ndarray, np.ndarray]:
    """Times and values on ``[-tau, T]``: the history table followed by the path (``t > 0``)."""
    times = np.concatenate([history.times, path.grid.points[1:]])
    values = np.concatenate([history.values, path.values[:, 1:]], axis=1)
    return times, values
