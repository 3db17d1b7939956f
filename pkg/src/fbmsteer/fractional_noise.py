"""Scalar fractional Brownian motion.

Covariance and Volterra kernel of fBm with Hurst index in (1/2, 1), the
transfer operator ``K*_H`` on a uniform grid, exact-covariance path sampling
and Wiener integrals of deterministic integrands.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate

__all__ = [
    "HurstParam",
    "TimeGrid",
    "SamplePath",
    "EmbeddingError",
    "as_hurst",
    "rng_stream",
    "covariance_rh",
    "covariance_matrix",
    "c_h",
    "kernel_kh",
    "kernel_covariance",
    "fgn_autocovariance",
    "sample_fbm_path",
    "sample_fbm_paths",
    "sample_brownian_increments",
    "khstar_matrix",
    "khstar_transform",
    "transfer_norm_sq",
    "wiener_integral_fbm",
    "norm_h_abs",
    "l2_norm_sq",
    "abs_norm_rhs",
]


class EmbeddingError(RuntimeError):
    """Circulant embedding is not nonnegative definite and no fallback was allowed."""


@dataclass(frozen=True)
class HurstParam:
    """Hurst index in (1/2, 1).

    ``h == 0.5`` is accepted only with ``allow_brownian=True``; that mode
    reduces every sampler to standard Brownian motion and exists as a test
    oracle.
    """

    h: float
    allow_brownian: bool = False

    def __post_init__(self):
        h = float(self.h)
        object.__setattr__(self, "h", h)
        if h == 0.5:
            if not self.allow_brownian:
                raise ValueError("H = 1/2 requires the degenerate Brownian mode (allow_brownian=True)")
        elif not 0.5 < h < 1.0:
            raise ValueError(f"Hurst parameter must lie in (1/2, 1), got {h}")

    @property
    def is_brownian(self) -> bool:
        return self.h == 0.5

    def __float__(self) -> float:
        return self.h


def as_hurst(h) -> HurstParam:
    if isinstance(h, HurstParam):
        return h
    return HurstParam(float(h))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k * T / n_steps`` on ``[0, T]``."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if not self.t_end > 0 or not math.isfinite(self.t_end):
            raise ValueError(f"t_end must be positive and finite, got {self.t_end}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "t_end", float(self.t_end))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    @property
    def points(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_steps + 1)

    @property
    def midpoints(self) -> np.ndarray:
        """Half-offset grid ``(k + 1/2) * dt``, ``k = 0..n_steps-1``."""
        return (np.arange(self.n_steps) + 0.5) * self.dt

    def index_of(self, t: float) -> int:
        """Index of grid node ``t``; raises if ``t`` is not (numerically) a node."""
        k = int(round(t / self.dt))
        if not 0 <= k <= self.n_steps or abs(k * self.dt - t) > 1e-9 * max(1.0, self.t_end):
            raise ValueError(f"t = {t} is not a node of {self}")
        return k

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.n_steps + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w


@dataclass(frozen=True)
class SamplePath:
    """Scalar path tabulated on ``grid``; ``values[0] == 0``."""

    grid: TimeGrid
    values: np.ndarray
    hurst: HurstParam
    seed: int
    replication_index: int
    brownian_increments: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n_steps + 1,):
            raise ValueError(f"expected {self.grid.n_steps + 1} values, got shape {values.shape}")
        if values[0] != 0.0:
            raise ValueError("sample paths start from 0")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "value"])
            for t, v in zip(self.grid.points, self.values):
                writer.writerow([repr(float(t)), repr(float(v))])


def rng_stream(seed: int, replication: int = 0, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, replication, stream)``.

    Each key maps to its own Philox stream, so draws do not depend on the
    order in which replications are generated.
    """
    if seed < 0 or replication < 0 or stream < 0:
        raise ValueError("seed, replication and stream must be non-negative")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replication), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# Covariance and kernel
# ---------------------------------------------------------------------------

def covariance_rh(s, t, h):
    """``R_H(s, t) = (t^2H + s^2H - |t - s|^2H) / 2``; broadcasts over arrays."""
    hh = as_hurst(h).h
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0) or np.any(t < 0):
        raise ValueError("covariance_rh is defined for non-negative times")
    out = 0.5 * (t ** (2 * hh) + s ** (2 * hh) - np.abs(t - s) ** (2 * hh))
    return float(out) if out.ndim == 0 else out


def covariance_matrix(times, h) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    return covariance_rh(times[:, None], times[None, :], h)


def c_h(h) -> float:
    """Normalising constant ``sqrt(H(2H-1) / B(2-2H, H-1/2))`` of the kernel."""
    hh = float(h.h if isinstance(h, HurstParam) else h)
    if not 0.5 < hh < 1.0:
        raise ValueError(f"c_H needs H in (1/2, 1), got {hh}")
    a, b = 2.0 - 2.0 * hh, hh - 0.5
    log_beta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    return math.sqrt(hh * (2.0 * hh - 1.0) * math.exp(-log_beta))


def _kernel_core(t: float, s: float, hh: float) -> float:
    """``int_0^1 w^(H-3/2) (s + (t-s) w)^(H-1/2) dw``; bounded for ``0 <= s <= t``.

    Substituting ``u = s + (t - s) w`` turns the inner kernel integral into
    ``(t - s)^(H-1/2)`` times this quantity.
    """
    val, _ = integrate.quad(
        lambda w: (s + (t - s) * w) ** (hh - 0.5), 0.0, 1.0, weight="alg",
        wvar=(hh - 1.5, 0.0), epsabs=0.0, epsrel=1e-11, limit=200,
    )
    return val


def kernel_kh(t: float, s: float, h) -> float:
    """Volterra kernel ``K_H(t, s)`` of the Brownian representation.

    Zero for ``t <= s``. The inner integral has the integrable singularity
    ``(u - s)^(H - 3/2)`` at ``u = s``; QUADPACK's algebraic-weight rule
    (QAWS) integrates that factor exactly.
    """
    hh = as_hurst(h).h
    if s <= 0:
        raise ValueError("K_H(t, s) requires s > 0")
    if t <= s:
        return 0.0
    return c_h(hh) * s ** (0.5 - hh) * (t - s) ** (hh - 0.5) * _kernel_core(t, s, hh)


def kernel_covariance(s: float, t: float, h) -> float:
    """``int_0^{min(s,t)} K_H(t,u) K_H(s,u) du`` by nested adaptive quadrature.

    Equals ``R_H(s, t)`` when the kernel is correct. The endpoint factors
    ``u^(1-2H)`` and ``(m - u)^(H-1/2)`` (squared when ``s == t``), with
    ``m = min(s, t)``, go into the algebraic weight.
    """
    hh = as_hurst(h).h
    lo, hi = min(s, t), max(s, t)
    if lo <= 0:
        return 0.0
    c2 = c_h(hh) ** 2
    if hi == lo:
        beta = 2 * hh - 1

        def smooth(u):
            return c2 * _kernel_core(lo, u, hh) ** 2
    else:
        beta = hh - 0.5

        def smooth(u):
            return c2 * (hi - u) ** (hh - 0.5) * _kernel_core(hi, u, hh) * _kernel_core(lo, u, hh)

    val, _ = integrate.quad(smooth, 0.0, lo, weight="alg", wvar=(1 - 2 * hh, beta),
                            epsabs=0.0, epsrel=1e-9, limit=200)
    return val


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def fgn_autocovariance(h, n: int) -> np.ndarray:
    """Autocovariance of unit-step fractional Gaussian noise at lags ``0..n``."""
    hh = as_hurst(h).h
    k = np.arange(n + 1, dtype=float)
    return 0.5 * (np.abs(k + 1) ** (2 * hh) - 2 * k ** (2 * hh) + np.abs(k - 1) ** (2 * hh))


@lru_cache(maxsize=32)
def _circulant_eigenvalues(h: float, n: int) -> np.ndarray:
    gamma = fgn_autocovariance(h, n)
    row = np.concatenate([gamma[:n], gamma[n:n + 1], gamma[n - 1:0:-1]])
    eig = np.fft.fft(row).real
    eig.setflags(write=False)
    return eig


@lru_cache(maxsize=32)
def _durbin_levinson(h: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Prediction coefficients (row k holds order-k coefficients) and innovation variances."""
    gamma = fgn_autocovariance(h, n)
    coef = np.zeros((n, n))
    var = np.empty(n)
    var[0] = gamma[0]
    phi = np.zeros(n)
    for k in range(1, n):
        kappa = (gamma[k] - phi[1:k] @ gamma[k - 1:0:-1]) / var[k - 1]
        new = phi.copy()
        new[k] = kappa
        new[1:k] = phi[1:k] - kappa * phi[k - 1:0:-1]
        phi = new
        var[k] = var[k - 1] * (1.0 - kappa * kappa)
        if not var[k] > 0:
            raise EmbeddingError(f"fGn covariance is not positive definite at lag {k}")
        coef[k, 1:k + 1] = phi[1:k + 1]
    coef.setflags(write=False)
    var.setflags(write=False)
    return coef, var


def _hosking_increments(h: float, z: np.ndarray) -> np.ndarray:
    """Recursive conditioning: ``X_k = sum_j phi_kj X_{k-j} + sqrt(v_k) Z_k`` (unit step)."""
    n = z.shape[-1]
    coef, var = _durbin_levinson(h, n)
    x = np.empty_like(z)
    x[:, 0] = math.sqrt(var[0]) * z[:, 0]
    for k in range(1, n):
        x[:, k] = x[:, k - 1::-1] @ coef[k, 1:k + 1] + math.sqrt(var[k]) * z[:, k]
    return x


def sample_fbm_paths(h, grid: TimeGrid, seed: int, replications: int | Sequence[int],
                     stream: int = 0, method: str = "auto") -> np.ndarray:
    """fBm paths for several replication indices, shape ``(R, n_steps + 1)``.

    Row ``i`` is bitwise the path ``sample_fbm_path(..., replication=reps[i])``
    would return. ``method`` is ``"auto"`` (circulant embedding, recursive
    conditioning if the embedding has a negative eigenvalue), ``"circulant"``
    (raise instead of falling back) or ``"hosking"``.
    """
    hp = as_hurst(h)
    reps = list(range(replications)) if isinstance(replications, (int, np.integer)) else list(replications)
    n = grid.n_steps
    out = np.zeros((len(reps), n + 1))
    if not reps:
        return out
    gens = [rng_stream(seed, r, stream) for r in reps]

    if hp.is_brownian:
        z = np.stack([g.standard_normal(n) for g in gens])
        out[:, 1:] = np.cumsum(z * math.sqrt(grid.dt), axis=1)
        return out

    if method not in ("auto", "circulant", "hosking"):
        raise ValueError(f"unknown sampling method {method!r}")
    scale = grid.dt ** hp.h
    if method != "hosking":
        eig = _circulant_eigenvalues(hp.h, n)
        if eig.min() < -1e-10 * eig.max():
            if method == "circulant":
                raise EmbeddingError(f"circulant embedding has eigenvalue {eig.min():.3e} for H={hp.h}, n={n}")
            method = "hosking"
    if method == "hosking":
        z = np.stack([g.standard_normal(n) for g in gens])
        inc = _hosking_increments(hp.h, z)
    else:
        m = 2 * n
        z = np.stack([g.standard_normal(2 * m) for g in gens])
        amp = np.sqrt(np.maximum(eig, 0.0) / m)
        w = amp * (z[:, :m] + 1j * z[:, m:])
        inc = np.fft.fft(w, axis=1).real[:, :n]
    out[:, 1:] = np.cumsum(inc * scale, axis=1)
    return out


def sample_fbm_path(h, grid: TimeGrid, seed: int, replication: int = 0,
                    stream: int = 0, method: str = "auto") -> SamplePath:
    hp = as_hurst(h)
    values = sample_fbm_paths(hp, grid, seed, [replication], stream=stream, method=method)[0]
    return SamplePath(grid, values, hp, int(seed), int(replication))


def sample_brownian_increments(grid: TimeGrid, seed: int, replication: int = 0,
                               stream: int = 0) -> np.ndarray:
    return rng_stream(seed, replication, stream).standard_normal(grid.n_steps) * math.sqrt(grid.dt)


# ---------------------------------------------------------------------------
# Product-integration weights
# ---------------------------------------------------------------------------

def _linear_product_weights(alpha: float, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weights of ``int_a^b x^alpha f(x) dx`` for ``f`` linear between ``f(a)`` and ``f(b)``."""
    m0 = (b ** (alpha + 1) - a ** (alpha + 1)) / (alpha + 1)
    m1 = (b ** (alpha + 2) - a ** (alpha + 2)) / (alpha + 2) - a * m0
    wb = m1 / (b - a)
    return m0 - wb, wb


@lru_cache(maxsize=16)
def _khstar_matrix(h: float, t_end: float, n: int) -> np.ndarray:
    dt = t_end / n
    alpha = h - 1.5
    # distances from s_k to the integration nodes s_k, t_{k+1}, ..., t_n
    d = np.concatenate([[0.0], (np.arange(1, n + 1) - 0.5) * dt])
    wa, wb = _linear_product_weights(alpha, d[:-1], d[1:])
    s = (np.arange(n) + 0.5) * dt
    t = np.arange(n + 1) * dt
    k = np.arange(n)[:, None]
    i = np.arange(n + 1)[None, :]
    j = i - k  # node t_i sits at offset j >= 1
    valid = j >= 1
    jj = np.where(valid, j, 1)
    omega = wb[jj - 1] + np.where(i < n, wa[np.minimum(jj, n - 1)], 0.0)
    ratio = np.where(valid, t[None, :] / s[:, None], 1.0) ** (h - 0.5)
    mat = np.where(valid, omega * ratio, 0.0)
    # left end of the first subinterval: f(s_k) = psi(s_k) = (psi_k + psi_{k+1}) / 2
    rows = np.arange(n)
    mat[rows, rows] += 0.5 * wa[0]
    mat[rows, rows + 1] += 0.5 * wa[0]
    mat *= c_h(h)
    mat.setflags(write=False)
    return mat


def khstar_matrix(h, grid: TimeGrid) -> np.ndarray:
    """Matrix of ``K*_H`` mapping grid values to values on ``grid.midpoints``."""
    return _khstar_matrix(as_hurst(h).h, grid.t_end, grid.n_steps)


def khstar_transform(psi, h, grid: TimeGrid) -> np.ndarray:
    """``(K*_H psi)(s) = int_s^T psi(r) dK/dr(r, s) dr`` at ``s = (k + 1/2) dt``.

    ``psi`` is linearly interpolated between grid nodes. On every
    subinterval the factor ``(r - s)^(H - 3/2)`` is integrated exactly
    against the linear interpolant of ``psi(r) (r/s)^(H - 1/2)``.
    """
    psi = _check_grid_function(psi, grid)
    return khstar_matrix(h, grid) @ psi


def transfer_norm_sq(values, h, grid: TimeGrid) -> float:
    """``int_0^T g(s)^2 ds`` for ``g`` given on ``grid.midpoints``.

    Midpoint rule, except on the first cell where ``g^2 ~ s^(1-2H)`` is
    integrated exactly. With ``g = K*_H psi`` this is ``||psi||_H^2``.
    """
    hh = as_hurst(h).h
    g = np.asarray(values, dtype=float)
    if g.shape != (grid.n_steps,):
        raise ValueError("values must live on the half-offset grid")
    dt = grid.dt
    first = g[0] ** 2 * (0.5 * dt) ** (2 * hh - 1) * dt ** (2 - 2 * hh) / (2 - 2 * hh)
    return float(first + dt * np.sum(g[1:] ** 2))


def wiener_integral_fbm(psi, path: SamplePath, brownian_increments=None) -> float:
    """Wiener integral ``int_0^T psi dbeta^H`` of a deterministic integrand.

    Without ``brownian_increments`` this is the left-point Riemann-Stieltjes
    sum against the fBm path. With them it is ``sum_k (K*_H psi)(s_k) dbeta_k``,
    the transfer-operator form against the underlying Brownian motion.
    """
    psi = _check_grid_function(psi, path.grid)
    if brownian_increments is None:
        return float(psi[:-1] @ np.diff(path.values))
    dbeta = np.asarray(brownian_increments, dtype=float)
    if dbeta.shape != (path.grid.n_steps,):
        raise ValueError("brownian increments do not match the path grid")
    return float(khstar_transform(psi, path.hurst, path.grid) @ dbeta)


@lru_cache(maxsize=16)
def _abs_norm_matrix(h: float, t_end: float, n: int) -> np.ndarray:
    """``P[j, i]``: weight of ``a_i`` in ``int_0^T a(s) |s - t_j|^(2H-2) ds``."""
    dt = t_end / n
    alpha = 2.0 * h - 2.0
    m = np.arange(n)
    wa, wb = _linear_product_weights(alpha, m * dt, (m + 1) * dt)
    p = np.zeros((n + 1, n + 1))
    rows = np.arange(n + 1)
    for off in range(n):
        # cells to the right of t_j: [t_{j+off}, t_{j+off+1}]
        jr = rows[rows + off + 1 <= n]
        p[jr, jr + off] += wa[off]
        p[jr, jr + off + 1] += wb[off]
        # cells to the left: [t_{j-off-1}, t_{j-off}]
        jl = rows[rows - off - 1 >= 0]
        p[jl, jl - off] += wa[off]
        p[jl, jl - off - 1] += wb[off]
    p.setflags(write=False)
    return p


def norm_h_abs(psi, h, grid: TimeGrid) -> float:
    """Squared norm ``H(2H-1) int int |psi(s)||psi(t)||s-t|^(2H-2) ds dt``.

    Inner integral by product integration (the diagonal singularity is
    integrated exactly cell by cell), outer integral by the trapezoid rule.
    """
    hh = as_hurst(h).h
    a = np.abs(_check_grid_function(psi, grid))
    if hh == 0.5:
        return 0.0
    inner = _abs_norm_matrix(hh, grid.t_end, grid.n_steps) @ a
    return float(hh * (2 * hh - 1) * (grid.trapezoid_weights() * a) @ inner)


def l2_norm_sq(psi, grid: TimeGrid) -> float:
    """``int_0^T psi^2`` for the piecewise-linear interpolant of ``psi``."""
    psi = _check_grid_function(psi, grid)
    a, b = psi[:-1], psi[1:]
    return float(grid.dt / 3.0 * np.sum(a * a + a * b + b * b))


def abs_norm_rhs(psi, h, grid: TimeGrid) -> float:
    """Upper bound ``2H T^(2H-1) int_0^T |psi|^2`` on ``norm_h_abs``."""
    hh = as_hurst(h).h
    return 2 * hh * grid.t_end ** (2 * hh - 1) * l2_norm_sq(np.abs(np.asarray(psi, float)), grid)


def _check_grid_function(psi, grid: TimeGrid) -> np.ndarray:
    psi = np.broadcast_to(np.asarray(psi, dtype=float), np.shape(psi))
    if psi.ndim == 0:
        psi = np.full(grid.n_steps + 1, float(psi))
    if psi.shape != (grid.n_steps + 1,):
        raise ValueError(f"grid function has shape {psi.shape}, expected ({grid.n_steps + 1},)")
    return psi
