"""Truncated eigenbasis representation of the Hilbert-space problem.

Processes with values in ``X`` are stored through their first ``N`` mode
coefficients ``<x(t), e_n>``. The noise covariance ``Q`` and the diffusion
``sigma(t)`` are diagonal in the same basis.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .fractional_noise import TimeGrid, as_hurst, sample_fbm_paths

__all__ = [
    "SpectralModel",
    "VectorPath",
    "sample_qfbm",
    "l20_norm_sq",
    "stochastic_convolution",
    "lemma2_bound",
    "causal_convolution",
]


def _constant_sigma(values: np.ndarray) -> Callable:
    values = np.asarray(values, dtype=float)

    def sigma(t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(values[:, None] if t.ndim else values, values.shape + t.shape).copy()

    return sigma


@dataclass(frozen=True)
class SpectralModel:
    """Eigenvalues ``mu`` of ``-A``, Q-eigenvalues ``lam`` and diagonal noise coefficients.

    ``sigma`` maps a time (scalar or 1-D array) to the per-mode coefficients
    ``sigma_n(t)``, shape ``(n_modes,)`` or ``(n_modes, len(t))``. A plain
    array is taken as time-independent coefficients. ``lam_tail`` records
    ``sum_{n > N} lambda_n``, the trace dropped by truncation.
    """

    mu: np.ndarray
    lam: np.ndarray
    sigma: Callable | np.ndarray | None = None
    lam_tail: float = 0.0
    sigma_label: str = field(default="", compare=False)

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).ravel()
        lam = np.array(self.lam, dtype=float).ravel()
        if mu.shape != lam.shape or mu.size == 0:
            raise ValueError("mu and lam must be non-empty arrays of equal length")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError("Q eigenvalues must be finite and non-negative")
        if not np.all(np.isfinite(mu)) or np.any(mu < 0):
            raise ValueError("eigenvalues of -A must be finite and non-negative")
        if not (self.lam_tail >= 0 and math.isfinite(self.lam_tail)):
            raise ValueError("truncated trace must be finite and non-negative")
        mu.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "lam", lam)
        sigma = self.sigma
        if sigma is None:
            sigma = np.zeros(mu.size)
        if not callable(sigma):
            arr = np.broadcast_to(np.asarray(sigma, dtype=float), mu.shape)
            sigma = _constant_sigma(arr)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_modes(self) -> int:
        return self.mu.size

    @property
    def trace(self) -> float:
        return float(self.lam.sum())

    def sigma_table(self, grid: TimeGrid) -> np.ndarray:
        """``sigma_n(t_k)``, shape ``(n_modes, n_steps + 1)``."""
        tab = np.asarray(self.sigma(grid.points), dtype=float)
        if tab.shape != (self.n_modes, grid.n_steps + 1):
            raise ValueError(f"sigma returned shape {tab.shape}")
        return tab


@dataclass(frozen=True)
class VectorPath:
    """Mode coefficients of an ``X``-valued path, ``values[n, k] = <x(t_k), e_n>``."""

    grid: TimeGrid
    values: np.ndarray
    seed: int | None = None
    replication_index: int | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != self.grid.n_steps + 1:
            raise ValueError(f"values must have shape (n_modes, {self.grid.n_steps + 1}), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite entries in VectorPath")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n_modes(self) -> int:
        return self.values.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]

    @classmethod
    def zeros(cls, grid: TimeGrid, n_modes: int) -> "VectorPath":
        return cls(grid, np.zeros((n_modes, grid.n_steps + 1)))

    def to_csv(self, path, value_name: str = "value", index_name: str = "mode") -> None:
        """Long format, columns ``t, <index_name>, <value_name>`` with a 0-based index."""
        t = self.grid.points
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", index_name, value_name])
            for n, row in enumerate(self.values):
                for tk, v in zip(t, row):
                    writer.writerow([repr(float(tk)), n, repr(float(v))])


def sample_qfbm(model: SpectralModel, h, grid: TimeGrid, seed: int,
                replication: int = 0) -> VectorPath:
    """``B^H(t) = sum_n sqrt(lambda_n) e_n beta_n^H(t)`` with independent scalar fBms.

    Mode ``n`` is drawn from stream ``n`` of replication ``replication``.
    """
    hp = as_hurst(h)
    values = np.empty((model.n_modes, grid.n_steps + 1))
    for n in range(model.n_modes):
        values[n] = sample_fbm_paths(hp, grid, seed, [replication], stream=n)[0]
    values *= np.sqrt(model.lam)[:, None]
    return VectorPath(grid, values, int(seed), int(replication))


def l20_norm_sq(model: SpectralModel, t) -> float:
    """``||sigma(t)||^2`` in the Q-Hilbert-Schmidt norm: ``sum_n lambda_n sigma_n(t)^2``."""
    s = np.asarray(model.sigma(float(t)), dtype=float)
    return float(np.sum(model.lam * s * s))


def causal_convolution(kernel: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``y[..., k] = sum_{j=0}^{k} kernel[..., k-j] * a[..., j]`` along the last axis."""
    kernel = np.atleast_2d(kernel)
    a = np.atleast_2d(a)
    n = a.shape[-1]
    kernel = np.broadcast_to(kernel, a.shape)
    out = np.empty(a.shape)
    for i in range(a.shape[0]):
        out[i] = np.convolve(kernel[i], a[i])[:n]
    return out


def stochastic_convolution(table, model: SpectralModel, noise: VectorPath) -> VectorPath:
    """``int_0^t R(t-s) sigma(s) dB^H(s)`` by left-point Riemann-Stieltjes sums.

    ``noise`` holds the Q-fBm coefficients (already scaled by ``sqrt(lambda_n)``).
    Mode ``n`` at ``t_k`` is ``sum_{j<k} r_n(t_k - t_j) sigma_n(t_j) dB_n(t_j)``.
    """
    if noise.grid != table.grid:
        raise ValueError("noise and resolvent table live on different grids")
    if noise.n_modes != model.n_modes or table.n_modes != model.n_modes:
        raise ValueError("mode counts of table, model and noise disagree")
    grid = noise.grid
    a = np.zeros_like(noise.values)
    a[:, :-1] = model.sigma_table(grid)[:, :-1] * np.diff(noise.values, axis=1)
    out = np.zeros_like(a)
    # y[k] = sum_{j<k} r[k-j] a[j] = (r[1:] * a)[k-1]
    out[:, 1:] = causal_convolution(table.r[:, 1:], a[:, :-1])
    return VectorPath(grid, out, noise.seed, noise.replication_index)


def lemma2_bound(model: SpectralModel, t: float, h, table=None, grid: TimeGrid | None = None) -> float:
    """``2H t^(2H-1) int_0^t ||psi(s)||^2 ds`` in the Q-Hilbert-Schmidt norm.

    ``psi(s) = R(t-s) sigma(s)`` when a resolvent ``table`` is given,
    ``psi = sigma`` otherwise. ``t`` must be a node of the quadrature grid
    (the table's grid, or ``grid``, or a 1000-step grid on ``[0, t]``).
    """
    hh = as_hurst(h).h
    if t <= 0:
        return 0.0
    if table is not None:
        grid = table.grid
    elif grid is None:
        grid = TimeGrid(t, 1000)
    k = grid.index_of(t)
    if k == 0:
        return 0.0
    s = grid.points[: k + 1]
    sig = np.asarray(model.sigma(s), dtype=float)
    if table is not None:
        sig = table.r[:, k::-1] * sig
    integrand = np.sum(model.lam[:, None] * sig * sig, axis=0)
    w = np.full(k + 1, grid.dt)
    w[0] = w[-1] = 0.5 * grid.dt
    return float(2 * hh * t ** (2 * hh - 1) * (w @ integrand))
