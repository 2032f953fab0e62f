"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (see conftest) before asserting, so the
summary at the end of a run lists every criterion with its measured value.
"""

import time

import numpy as np
import pytest

from conftest import random_system, random_well_conditioned
from lti_ident import harness
from lti_ident.environments import EnvironmentSpec, generate_dataset, sample_means, sample_random_design, variability_matrix
from lti_ident.estimator import LinearDecoder, center, negative_log_likelihood, nll_gradient
from lti_ident.metrics import default_z_samples, linear_sum_assignment, mcc
from lti_ident.sysid import ho_kalman
from lti_ident.systems import log_odds, markov_params, similarity_transform, simulate, trajectory_log_density, transfer_function
from test_estimator import _central_difference
from test_metrics import brute_force
from test_systems import _equivalent_pair, _joint_oracle

DESK = dict(steps_per_env=4000, epochs=800, seeds=[0, 1, 2])
_cache = {}


def run_cell(**kw):
    """Run (and memoize) one harness cell; returns (rows, seconds)."""
    cfg = harness.ExperimentConfig.from_flat(kw)
    key = (cfg.fingerprint(), cfg.seeds)
    if key not in _cache:
        t0 = time.perf_counter()
        rows = harness.run_experiment(cfg, persist=False)
        _cache[key] = (rows, time.perf_counter() - t0)
    return _cache[key]


def mean_val(rows):
    return float(np.mean([r.val_mcc for r in rows]))


@pytest.mark.slow
def test_criterion_01_dc_motor(accept):
    rows, secs = run_cell(**harness.preset("dc_motor", seeds=[0, 1, 2, 3, 4]))
    vals = [r.val_mcc for r in rows]
    hits = sum(v >= 0.99 for v in vals)
    ok = hits >= 4 and secs < 120
    accept(1, ok, f"DC motor val MCC {np.round(vals, 4).tolist()}, {hits}/5 >= 0.99, {secs:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_02_max_variability_cells(accept):
    r2, t2 = run_cell(kind="table1_cell", d_u=2, **DESK)
    r3, t3 = run_cell(kind="table1_cell", d_u=3, **DESK)
    m2, m3 = mean_val(r2), mean_val(r3)
    ok = m2 >= 0.95 and m3 >= 0.99 and t2 + t3 < 300
    accept(2, ok, f"mean MCC d_u=2 {m2:.4f} (>= 0.95), d_u=3 {m3:.4f} (>= 0.99), {t2 + t3:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_03_trend(accept):
    mb = mean_val(run_cell(kind="table1_cell", d_u=3, **DESK)[0])
    weak = {}
    for bi in (False, True):
        for ci in (False, True):
            rows, _ = run_cell(kind="table1_cell", d_u=3, design="random_uniform", control_mean_nonzero=False,
                               B_identity=bi, C_identity=ci, **DESK)
            weak[f"B{'=' if bi else '!='}I,C{'=' if ci else '!='}I"] = mean_val(rows)
    ok = all(v < mb for v in weak.values())
    accept(3, ok, "d_u=3 zero-mean random cells " + ", ".join(f"{k} {v:.5f}" for k, v in weak.items())
           + f" < max-variability nonzero mean {mb:.5f}")
    assert ok


@pytest.mark.slow
def test_criterion_04_noise(accept):
    means, complete = {}, True
    for nz in (0.0, 1e-2, 1.0):
        rows, _ = run_cell(**harness.preset("table3_cell", d_u=2, obs_noise_var=nz, **DESK))
        complete &= all(not r.diverged and 0 <= r.val_mcc <= 1 for r in rows)
        means[nz] = mean_val(rows)
    gap = means[0.0] - means[1e-2]
    ok = complete and abs(gap) <= 0.15
    accept(4, ok, "mean MCC by noise " + ", ".join(f"{k:g}: {v:.4f}" for k, v in means.items())
           + f"; gap at 1e-2 = {gap:.4f} (<= 0.15)")
    assert ok


def test_criterion_05_ho_kalman(accept):
    rng = np.random.default_rng(2024)
    worst_mp, worst_tf = 0.0, 0.0
    for i in range(20):
        d_x = 1 + i % 8
        sys = random_system(rng, d_x, int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        T1 = T2 = d_x
        T = T1 + T2 + 1
        mp = markov_params(sys, T)
        res = ho_kalman(mp, d_x, T1, T2)
        back = markov_params(res.sys, T)
        for k in range(1, T):
            worst_mp = max(worst_mp, np.linalg.norm(back.block(k) - mp.block(k)) / np.linalg.norm(mp.block(k)))
        for z in default_z_samples(32, 1.5):
            H = transfer_function(sys, z)
            worst_tf = max(worst_tf, np.linalg.norm(transfer_function(res.sys, z) - H) / np.linalg.norm(H))
    ok = worst_mp <= 1e-8 and worst_tf <= 1e-7
    accept(5, ok, f"20 systems: worst Markov error {worst_mp:.2e} (<= 1e-8), transfer {worst_tf:.2e} (<= 1e-7)")
    assert ok


def test_criterion_06_similarity(accept):
    rng = np.random.default_rng(6)
    worst = 0.0
    for i in range(50):
        d_x = 1 + i % 6
        sys = random_system(rng, d_x, 2, 2)
        other = similarity_transform(sys, random_well_conditioned(rng, d_x, 1e6))
        for z in default_z_samples(32, 1.5):
            H = transfer_function(sys, z)
            worst = max(worst, np.linalg.norm(transfer_function(other, z) - H) / np.linalg.norm(H))
    ok = worst <= 1e-9
    accept(6, ok, f"50 pairs: worst transfer-function error {worst:.2e} (<= 1e-9)")
    assert ok


def test_criterion_07_gradients(accept):
    worst = 0.0
    for i, d in enumerate([2, 3, 5, 2, 3, 5, 2, 3, 5, 3]):
        rng = np.random.default_rng(100 + i)
        sys = random_system(rng, d)
        m = sample_means(d + 1, d, i) if i % 2 else None
        data, _ = center(generate_dataset(sys, sample_random_design(d, d + 1, (0.1, 1.0), i, m), 60, 0.0, i), m)
        M = rng.standard_normal((d, 2 * d))
        f = lambda X: negative_log_likelihood(LinearDecoder(X), data)
        num = _central_difference(f, M)
        ana = nll_gradient(LinearDecoder(M), data)
        worst = max(worst, np.linalg.norm(ana - num) / np.linalg.norm(num))
    ok = worst <= 1e-5
    accept(7, ok, f"10 instances: worst gradient relative error {worst:.2e} (<= 1e-5)")
    assert ok


def test_criterion_08_mcc_oracle(accept):
    rng = np.random.default_rng(8)
    exact = all(linear_sum_assignment(c)[1] == brute_force(c) for c in rng.standard_normal((100, 6, 6)))
    worst = 0.0
    for _ in range(100):
        u = rng.standard_normal((300, 6))
        perm = rng.permutation(6)
        D = rng.uniform(0.1, 10, 6) * rng.choice([-1, 1], 6)
        worst = max(worst, abs(1.0 - mcc(u, u[:, perm] * D).mcc))
    ok = exact and worst <= 1e-12
    accept(8, ok, f"assignment equals brute force on 100 6x6 cases: {exact}; invariance error {worst:.1e} (<= 1e-12)")
    assert ok


def test_criterion_09_variability(accept):
    counts = {}
    for d_u in range(1, 11):
        counts[d_u] = sum(
            variability_matrix(sample_random_design(d_u, d_u + 1, (0.1, 1.0), seed)).satisfies_variability
            for seed in range(100)
        )
    ok = min(counts.values()) >= 99
    accept(9, ok, f"full-rank designs per 100 seeds, d_u=1..10: {list(counts.values())}")
    assert ok


def test_criterion_10_density(accept):
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        sys = random_system(rng, 2)
        env = EnvironmentSpec(0, rng.uniform(0.2, 1.0, 2), rng.uniform(-1, 1, 2))
        tr = simulate(sys, env, 4, obs_noise_var=0.5, x0=rng.standard_normal(2), seed=seed)
        got = trajectory_log_density(sys, tr, env, process_noise_var=0.1, obs_noise_var=0.5)
        worst = max(worst, abs(got - _joint_oracle(sys, tr, env, 0.1, 0.5)))
    ok = worst <= 1e-8
    accept(10, ok, f"10 instances (d_x=2, T=4): worst |factorized - joint| {worst:.2e} (<= 1e-8)")
    assert ok


def test_criterion_11_log_odds(accept):
    rng = np.random.default_rng(11)
    sys, other, env_map = _equivalent_pair(rng, 3)
    base_var, e_var = rng.uniform(0.1, 1.0, 3), rng.uniform(0.1, 1.0, 3)
    base, env = EnvironmentSpec(0, base_var), EnvironmentSpec(1, e_var)
    base2, env2 = EnvironmentSpec(0, env_map(base_var)), EnvironmentSpec(1, env_map(e_var))
    worst = 0.0
    for y in rng.standard_normal((100, 3)):
        t = int(rng.integers(1, 6))
        worst = max(worst, abs(log_odds(sys, env, base, t, y) - log_odds(other, env2, base2, t, y)))
    ok = worst <= 1e-8
    accept(11, ok, f"100 sampled outputs: worst log-odds difference {worst:.2e} (<= 1e-8)")
    assert ok
