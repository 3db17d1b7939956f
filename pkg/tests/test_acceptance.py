"""Acceptance criteria, run at their stated scale and tolerances.

Each test carries a ``criterion`` marker; ``conftest.py`` prints one
PASS/FAIL line per criterion at the end of the session.
"""

import math
import time

import numpy as np
import pytest

from fbmsteer.dynamics import NeutralLipschitzError
from fbmsteer.fractional_noise import (
    TimeGrid,
    covariance_rh,
    kernel_covariance,
    abs_norm_rhs,
    norm_h_abs,
    rng_stream,
    sample_fbm_paths,
)
from fbmsteer.resolvent import MemoryKernel, solve_forced_direct, solve_resolvent, variation_of_constants
from fbmsteer.scenario import ScenarioConfig, build_heat_scenario, run_steering_experiment
from fbmsteer.spectral_space import SpectralModel, lemma2_bound, sample_qfbm, stochastic_convolution
from fbmsteer.steering import ContractionConstants, find_t1, phi_iterate

SEED = 20261015

# grid nodes of the 256-step sampling grid
PROBE_PAIRS = [(0.0625, 0.0625), (0.25, 0.5), (0.3125, 0.875), (0.5, 0.5), (0.5, 1.0),
               (0.125, 0.875), (0.75, 0.75), (0.59375, 0.6875), (0.90625, 1.0), (1.0, 1.0)]


def _se(x):
    return float(np.std(x, ddof=1) / math.sqrt(x.size))


def _constant_b_exact(mu, beta, t):
    disc = complex(mu * mu - 4 * mu * beta) ** 0.5
    l1, l2 = (-mu + disc) / 2, (-mu - disc) / 2
    c2 = (-mu - l1) / (l2 - l1)
    return ((1 - c2) * np.exp(l1 * t) + c2 * np.exp(l2 * t)).real


@pytest.mark.criterion(1, "fBm law")
def test_fbm_law():
    start = time.perf_counter()
    grid = TimeGrid(1.0, 256)
    for h in (0.6, 0.7, 0.9):
        paths = sample_fbm_paths(h, grid, SEED, 10_000)
        for s, t in PROBE_PAIRS:
            prod = paths[:, grid.index_of(s)] * paths[:, grid.index_of(t)]
            err = abs(prod.mean() - float(covariance_rh(s, t, h)))
            assert err <= 3 * _se(prod), f"H={h} pair=({s},{t}) err={err:.3e} se={_se(prod):.3e}"
    assert time.perf_counter() - start <= 60.0


@pytest.mark.criterion(2, "kernel identity")
def test_kernel_identity():
    start = time.perf_counter()
    for s, t in [(0.2, 0.4), (0.3, 0.7), (0.5, 0.5), (0.5, 1.0), (0.8, 0.9), (1.0, 1.0)]:
        exact = float(covariance_rh(s, t, 0.7))
        assert abs(kernel_covariance(s, t, 0.7) - exact) / exact <= 1e-3
    assert time.perf_counter() - start <= 5.0


@pytest.mark.criterion(3, "Wiener integral and convolution bounds")
def test_integral_bounds():
    rng = rng_stream(SEED, 0, 7)
    grid = TimeGrid(1.0, 256)
    n_paths = 4000
    violations = []
    for h in (0.6, 0.7, 0.9):
        paths = sample_fbm_paths(h, grid, SEED, n_paths)
        increments = np.diff(paths, axis=1)
        for k in range(50):
            knots = np.sort(np.concatenate([[0.0, 1.0], rng.uniform(0, 1, int(rng.integers(2, 8)))]))
            psi = np.interp(grid.points, knots, rng.normal(0.0, 2.0, knots.size))
            bound = abs_norm_rhs(psi, h, grid)
            if not norm_h_abs(psi, h, grid) <= bound:
                violations.append(("norm", h, k))
            sq = (increments @ psi[:-1]) ** 2
            if not sq.mean() <= bound + 3 * _se(sq):
                violations.append(("moment", h, k))
    # stochastic convolution moment bound
    g = TimeGrid(1.0, 100)
    for lam, sigma in (([1.0, 0.25, 0.11], 0.8), ([0.5, 0.5], 1.0)):
        model = SpectralModel((np.arange(len(lam)) + 1.0) ** 2, lam, sigma)
        tab = solve_resolvent(model, MemoryKernel.exponential(0.1, 1.0), g)
        sq = np.array([np.sum(stochastic_convolution(tab, model, sample_qfbm(model, 0.7, g, SEED, r)).terminal ** 2)
                       for r in range(2000)])
        if not sq.mean() <= lemma2_bound(model, 1.0, 0.7, table=tab) + 3 * _se(sq):
            violations.append(("convolution", lam))
    assert violations == []


@pytest.mark.criterion(4, "resolvent correctness")
def test_resolvent_correctness():
    g = TimeGrid(1.0, 1000)
    tab = solve_resolvent([1.0, 4.0, 9.0], MemoryKernel.zero(), g)
    assert np.abs(tab.r - np.exp(-np.outer([1.0, 4.0, 9.0], g.points))).max() <= 1e-8
    for beta in (0.1, 0.5, 2.0):
        r = solve_resolvent([1.0], MemoryKernel.constant(beta), g).r[0]
        assert np.abs(r - _constant_b_exact(1.0, beta, g.points)).max() <= 1e-6
    errs = []
    for n in (100, 200, 400):
        grid = TimeGrid(1.0, n)
        r = solve_resolvent([1.0], MemoryKernel.constant(0.5), grid).r[0]
        errs.append(np.abs(r - _constant_b_exact(1.0, 0.5, grid.points)).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 2.0) <= 0.2), orders


@pytest.mark.criterion(5, "mild and direct solutions agree")
def test_mild_direct_equivalence():
    kern = MemoryKernel.exponential(0.1, 1.0)
    mu = np.array([1.0, 4.0, 9.0, 16.0, 25.0])
    z = np.array([1.0, 0.5, 0.25, 0.0, -0.5])
    diffs, steps = [], (100, 200, 400)
    for n in steps:
        g = TimeGrid(1.0, n)
        tab = solve_resolvent(mu, kern, g)
        f = np.outer(np.ones(5), np.cos(3 * g.points)) + np.outer(z, g.points)
        diffs.append(np.abs(variation_of_constants(tab, z, f).values
                            - solve_forced_direct(mu, kern, z, f, g).values).max())
    for n, d in zip(steps, diffs):
        assert d <= 10.0 * (1.0 / n) ** 2
    ratios = np.array(diffs[:-1]) / np.array(diffs[1:])
    assert np.all(np.abs(ratios - 4.0) <= 0.4), ratios


@pytest.mark.criterion(6, "contraction")
def test_contraction():
    cfg = ScenarioConfig.default()
    assert cfg.constants["c1"] == cfg.constants["c3"] == 0.05
    sc = build_heat_scenario(cfg)
    consts = sc.problem.constants
    assert consts.gamma(0.0) == 4 * 0.05 ** 2
    bound = consts.gamma(find_t1(consts, sc.grid.dt)) + 0.1
    for rep in range(8):
        res = phi_iterate(sc.problem, sc.noise_convolution(rep))
        assert max(res.ratios) <= bound


@pytest.mark.criterion(7, "linear steering")
def test_linear_steering():
    cfg = ScenarioConfig.from_dict({
        "noise": {"sigma": {"family": "zero"}},
        "operator": {"n_modes": 3},
        "delays": {"history": {"family": "constant", "coefficients": [1.0, 0.5, 0.25]}},
        "nonlinearities": {"f": {"family": "zero"}, "g": {"family": "zero"}},
        "control": {"target": [0.5, -0.3, 0.2], "reg_epsilon": 0.0},
    })
    sc = build_heat_scenario(cfg)
    assert sc.problem.n_channels == 3
    for rep in range(2):
        res = phi_iterate(sc.problem, sc.noise_convolution(rep))
        assert res.relative_error <= 1e-6


@pytest.mark.criterion(8, "nonlinear stochastic steering")
def test_nonlinear_stochastic_steering():
    start = time.perf_counter()
    cfg = ScenarioConfig.default()
    assert (cfg.n_modes, cfg.hurst.h, cfg.n_replications, cfg.control["reg_epsilon"]) == (5, 0.7, 64, 1e-8)
    report = run_steering_experiment(cfg)
    agg = report.aggregate
    assert agg["n_failed"] == 0
    assert agg["mean_relative_error"] <= 1e-2
    assert agg["max_outer_iterations"] <= 20
    assert time.perf_counter() - start <= 300.0


@pytest.mark.criterion(9, "hypothesis gate")
def test_hypothesis_gate():
    for c3 in (0.5, 0.75, 2.0):
        with pytest.raises(NeutralLipschitzError, match="neutral Lipschitz"):
            ScenarioConfig.from_dict({"nonlinearities": {"g": {"family": "rational", "c": c3}}})
        with pytest.raises(NeutralLipschitzError):
            build_heat_scenario(ScenarioConfig.from_dict(
                {"nonlinearities": {"g": {"family": "rational", "c": c3}}}, strict=False))
    build_heat_scenario(ScenarioConfig.from_dict({"nonlinearities": {"g": {"family": "rational", "c": 0.49}}}))
    for c3 in np.linspace(0.0, 0.7, 141):
        consts = ContractionConstants(0.1, float(c3), 1.0, 1.0, 1.0, 1.0)
        if 4 * c3 ** 2 >= 1:
            with pytest.raises(NeutralLipschitzError):
                find_t1(consts)
        else:
            assert find_t1(consts) > 0


@pytest.mark.criterion(10, "reproducibility")
def test_reproducibility(tmp_path):
    cfg = ScenarioConfig.default().with_overrides(n_replications=16)
    run_steering_experiment(cfg, tmp_path / "serial", workers=1)
    run_steering_experiment(cfg, tmp_path / "threads", workers=4)
    a = (tmp_path / "serial" / "report.json").read_bytes()
    b = (tmp_path / "threads" / "report.json").read_bytes()
    assert a == b
