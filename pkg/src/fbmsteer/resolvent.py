"""Resolvent operator of ``x' = A x + int_0^t B(t-s) x(s) ds`` for ``B(t) = b(t) A``.

With ``A e_n = -mu_n e_n`` every mode decouples into the scalar Volterra
integro-differential equation

    r_n'(t) = -mu_n r_n(t) - mu_n int_0^t b(t-s) r_n(s) ds,   r_n(0) = 1.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .fractional_noise import TimeGrid
from .spectral_space import SpectralModel, VectorPath, causal_convolution

__all__ = [
    "MemoryKernel",
    "ResolventTable",
    "ResolventError",
    "solve_resolvent",
    "resolvent_residual",
    "variation_of_constants",
    "convolve_trapezoid",
    "solve_forced_direct",
    "sup_norm_estimate",
]


class ResolventError(RuntimeError):
    pass


@dataclass(frozen=True)
class MemoryKernel:
    """Scalar memory coefficient ``b`` with derivative ``b_prime``; both vectorised."""

    b: Callable
    b_prime: Callable
    label: str = field(default="custom", compare=False)

    @classmethod
    def zero(cls) -> "MemoryKernel":
        return cls(lambda t: np.zeros_like(np.asarray(t, float)),
                   lambda t: np.zeros_like(np.asarray(t, float)), "zero")

    @classmethod
    def constant(cls, beta: float) -> "MemoryKernel":
        return cls(lambda t: np.full_like(np.asarray(t, float), beta),
                   lambda t: np.zeros_like(np.asarray(t, float)), f"constant({beta})")

    @classmethod
    def exponential(cls, amplitude: float, rate: float) -> "MemoryKernel":
        return cls(lambda t: amplitude * np.exp(-rate * np.asarray(t, float)),
                   lambda t: -rate * amplitude * np.exp(-rate * np.asarray(t, float)),
                   f"exponential({amplitude}, {rate})")

    def bounds(self, t_end: float, n: int = 4096) -> tuple[float, float]:
        """``(sup |b|, sup |b'|)`` sampled on ``[0, t_end]``."""
        t = np.linspace(0.0, t_end, n + 1)
        b, bp = np.asarray(self.b(t), float), np.asarray(self.b_prime(t), float)
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(bp))):
            raise ValueError("memory kernel is not finite on the horizon")
        return float(np.abs(b).max()), float(np.abs(bp).max())


@dataclass(frozen=True)
class ResolventTable:
    """``r[n, k] = r_n(t_k)``; ``R(t)`` acts on mode ``n`` as multiplication by ``r_n(t)``."""

    grid: TimeGrid
    r: np.ndarray
    mu: np.ndarray
    sup_norm: float = field(init=False)

    def __post_init__(self):
        r = np.array(self.r, dtype=float)
        mu = np.array(self.mu, dtype=float).ravel()
        if r.shape != (mu.size, self.grid.n_steps + 1):
            raise ValueError(f"table shape {r.shape} does not match {mu.size} modes on {self.grid}")
        r.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sup_norm", float(np.abs(r).max()))

    @property
    def n_modes(self) -> int:
        return self.mu.size

    @property
    def norms(self) -> np.ndarray:
        """Operator norm ``||R(t_k)|| = max_n |r_n(t_k)|``."""
        return np.abs(self.r).max(axis=0)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "mode", "r_value"])
            for n, row in enumerate(self.r):
                for tk, v in zip(self.grid.points, row):
                    writer.writerow([repr(float(tk)), n, repr(float(v))])


def _etd_weights(z: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``exp(-z)`` and the weights of ``J_k, J_{k+1}`` in ``int_0^dt e^{-mu(dt-s)} J(s) ds``
    for ``J`` linear on the step, ``z = mu * dt``."""
    z = np.asarray(z, dtype=float)
    em1 = np.expm1(-z)
    safe = np.where(z > 0, z, 1.0)
    phi1 = np.where(z > 0, -em1 / safe, 1.0) * dt
    small = z < 1e-3
    series = 0.5 - z / 6 + z ** 2 / 24 - z ** 3 / 120 + z ** 4 / 720
    w1 = np.where(small, series, (z + em1) / safe ** 2) * dt
    return np.exp(-z), phi1 - w1, w1


def solve_resolvent(model, kernel: MemoryKernel, grid: TimeGrid) -> ResolventTable:
    """Tabulate ``r_n`` on ``grid``.

    Exponential trapezoidal scheme: the ``-mu_n r_n`` term is integrated
    exactly over each step and the memory term ``J_n = b * r_n`` (trapezoidal
    convolution quadrature) is interpolated linearly across the step. The
    ``b(0) r_n(t_{k+1})`` part of ``J_n(t_{k+1})`` is treated implicitly.
    Second order for smooth ``b``; exact when ``b == 0``.
    """
    mu = np.asarray(model.mu if isinstance(model, SpectralModel) else model, dtype=float).ravel()
    n, dt = grid.n_steps, grid.dt
    b = np.asarray(kernel.b(grid.points), dtype=float)
    if b.shape != (n + 1,) or not np.all(np.isfinite(b)):
        raise ValueError("memory kernel must return finite values on the grid")
    decay, w0, w1 = _etd_weights(mu * dt, dt)
    denom = 1.0 + mu * w1 * 0.5 * dt * b[0]
    if np.any(denom <= 0):
        raise ResolventError("implicit memory step is singular; refine the grid")

    r = np.empty((mu.size, n + 1))
    r[:, 0] = 1.0
    j_prev = np.zeros(mu.size)
    blowup = 1e8
    for k in range(n):
        # known part of J(t_{k+1}) = dt [b_{k+1} r_0 / 2 + sum_{j=1}^k b_{k+1-j} r_j]
        j_known = dt * (0.5 * b[k + 1] * r[:, 0] + r[:, 1:k + 1] @ b[k:0:-1])
        r[:, k + 1] = (decay * r[:, k] - mu * (w0 * j_prev + w1 * j_known)) / denom
        j_prev = j_known + 0.5 * dt * b[0] * r[:, k + 1]
        if not np.all(np.abs(r[:, k + 1]) < blowup):
            raise ResolventError(
                f"resolvent blew up at t = {(k + 1) * dt:.4g}; refine the grid (n_steps = {n})")
    return ResolventTable(grid, r, mu)


def _trapezoid_memory(kern: np.ndarray, vals: np.ndarray, k: int, dt: float) -> float:
    """``dt * trap sum_j kern[k-j] vals[j]`` over ``j = 0..k``."""
    s = kern[k::-1] @ vals[: k + 1]
    return dt * (s - 0.5 * (kern[k] * vals[0] + kern[0] * vals[k]))


def resolvent_residual(table: ResolventTable, mode: int, kernel: MemoryKernel,
                       form: str = "both") -> float:
    """Max interior residual of the resolvent equation for one mode.

    Central differences for ``r'`` and trapezoidal memory sums. ``form`` is
    ``"left"`` (``A R + int B(t-s) R(s)``), ``"right"`` (``R A + int R(t-s) B(s)``)
    or ``"both"`` (the larger of the two). In the diagonal case both forms
    are the same equation; they differ only in summation order.
    """
    if not 0 <= mode < table.n_modes:
        raise IndexError(f"mode {mode} out of range for {table.n_modes} modes")
    grid = table.grid
    dt, n = grid.dt, grid.n_steps
    if n < 2:
        return 0.0
    r = table.r[mode]
    mu = table.mu[mode]
    b = np.asarray(kernel.b(grid.points), dtype=float)
    fd = (r[2:] - r[:-2]) / (2 * dt)
    out = 0.0
    forms = ("left", "right") if form == "both" else (form,)
    for f in forms:
        if f == "left":
            mem = np.array([_trapezoid_memory(b, r, k, dt) for k in range(1, n)])
        elif f == "right":
            mem = np.array([_trapezoid_memory(r, b, k, dt) for k in range(1, n)])
        else:
            raise ValueError(f"unknown residual form {f!r}")
        res = fd + mu * r[1:-1] + mu * mem
        out = max(out, float(np.abs(res).max()))
    return out


def convolve_trapezoid(r: np.ndarray, f: np.ndarray, dt: float) -> np.ndarray:
    """``int_0^{t_k} r(t_k - s) f(s) ds`` by the trapezoid rule, mode by mode."""
    r = np.atleast_2d(r)
    f = np.atleast_2d(f)
    full = causal_convolution(r, f)
    out = dt * (full - 0.5 * (r * f[:, :1] + r[:, :1] * f))
    out[:, 0] = 0.0
    return out


def variation_of_constants(table: ResolventTable, z, f) -> VectorPath:
    """Mild solution ``x(t) = R(t) z + int_0^t R(t-s) f(s) ds`` on the table's grid."""
    grid = table.grid
    z = np.asarray(z, dtype=float).ravel()
    if isinstance(f, VectorPath):
        if f.grid != grid:
            raise ValueError("forcing and resolvent table live on different grids")
        f = f.values
    f = np.asarray(f, dtype=float)
    if f.ndim == 0:
        f = np.full((table.n_modes, grid.n_steps + 1), float(f))
    if z.shape != (table.n_modes,) or f.shape != (table.n_modes, grid.n_steps + 1):
        raise ValueError("initial state or forcing does not match the table")
    x = table.r * z[:, None] + convolve_trapezoid(table.r, f, grid.dt)
    return VectorPath(grid, x)


def solve_forced_direct(mu, kernel: MemoryKernel, z, f, grid: TimeGrid) -> VectorPath:
    """Direct implicit-trapezoidal stepping of ``x' = -mu x - mu (b * x) + f``, ``x(0) = z``.

    Does not use the resolvent; used to cross-check ``variation_of_constants``.
    """
    mu = np.asarray(mu, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    f = np.asarray(f.values if isinstance(f, VectorPath) else f, dtype=float)
    n, dt = grid.n_steps, grid.dt
    b = np.asarray(kernel.b(grid.points), dtype=float)
    x = np.empty((mu.size, n + 1))
    x[:, 0] = z
    j_prev = np.zeros(mu.size)
    denom = 1.0 + 0.5 * dt * mu + 0.25 * dt * dt * mu * b[0]
    for k in range(n):
        g_prev = -mu * x[:, k] - mu * j_prev + f[:, k]
        j_known = dt * (0.5 * b[k + 1] * x[:, 0] + x[:, 1:k + 1] @ b[k:0:-1])
        x[:, k + 1] = (x[:, k] + 0.5 * dt * (g_prev - mu * j_known + f[:, k + 1])) / denom
        j_prev = j_known + 0.5 * dt * b[0] * x[:, k + 1]
    return VectorPath(grid, x)


def sup_norm_estimate(table: ResolventTable) -> float:
    """Finite-horizon bound ``M >= sup_t ||R(t)||``, read off the table."""
    return table.sup_norm
