#!/usr/bin/env python3
"""
bprelab - θ 傾斜抽樣與重要性抽樣測試
"""

import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from env_fixtures import LAMBDA_ONE_A, LAMBDA_PRIME_A, P1_A, P2_A, env_a, env_b, run_tests
from bprelab.errors import InputError
from bprelab.genfun import compose_complement, exact_complement, exact_survival
from bprelab.matprod import lyapunov
from bprelab.replicas import replica_rng
from bprelab.simulate import mc_survival
from bprelab.spectral import lambda_prime, solve
from bprelab.tilt import (
    TiltedSampler,
    check_consistency,
    check_total_mass,
    density,
    is_samples,
    is_survival,
    log_density,
    psi_series,
    sample_path,
    sample_paths,
    step_distribution,
    truncated_representation,
    unit_direction,
    weight,
)

_SPECS = {}


def _spec(name: str, env, theta: float = 1.0):
    key = (name, theta)
    if key not in _SPECS:
        _SPECS[key] = solve(env, theta)
    return _SPECS[key]


def test_scalar_weights():
    """ENV-A、θ = 1：w(a) = 1/0.6875、w(b) = 0.375/0.6875"""
    env = env_a()
    spec = _spec("a", env)
    assert weight([1.0], env.atoms[0], spec) == pytest.approx(1.0 / LAMBDA_ONE_A, rel=1e-12)
    assert weight([1.0], env.atoms[1], spec) == pytest.approx(0.375 / LAMBDA_ONE_A, rel=1e-12)


def test_scalar_step_distribution():
    """傾斜後的原子機率為 (8/11, 3/11)"""
    env = env_a()
    dist = step_distribution([1.0], env, _spec("a", env))
    assert np.allclose(dist.probs, [8 / 11, 3 / 11], atol=1e-12)
    assert dist.defect <= 1e-12


def test_scalar_density():
    """序列 (a, b)：p_2 = (1·0.375)/0.6875²"""
    env = env_a()
    spec = _spec("a", env)
    assert density([1.0], env, [0, 1], spec) == pytest.approx(0.375 / LAMBDA_ONE_A ** 2, rel=1e-12)
    assert density([1.0], env, [], spec) == 1.0


def test_total_mass_scalar():
    env = env_a()
    spec = _spec("a", env)
    for n in range(7):
        assert check_total_mass(env, spec, n) <= 1e-10
        assert check_consistency(env, spec, n) <= 1e-10


def test_total_mass_two_types():
    env = env_b()
    spec = _spec("b", env)
    for n in range(6):
        assert check_total_mass(env, spec, n) <= 1e-6
        assert check_consistency(env, spec, n) <= 1e-6


def test_total_mass_tilted_two_types():
    """θ ≠ 1 時 r_θ 非線性，缺陷受插值誤差限制"""
    env = env_b()
    spec = _spec("b", env, 1.5)
    assert check_total_mass(env, spec, 4) <= 1e-3


def test_sample_paths_match_sample_path():
    """sample_paths 的第 j 列與 sample_path(replica_rng(seed, j)) 相同"""
    env = env_b()
    spec = _spec("b", env)
    seed, n = 53, 9
    x0 = unit_direction(2, 1)
    batch = sample_paths(env, spec, x0, n, 6, seed)
    assert batch.reps == 6
    assert batch.atom_indices.shape == (6, n)
    for j in range(6):
        path = sample_path(env, spec, x0, n, replica_rng(seed, j))
        assert tuple(batch.atom_indices[j]) == path.atom_indices
        assert batch.log_density[j] == pytest.approx(path.log_density, rel=1e-12)
        assert batch.log_normalizer[j] == pytest.approx(path.log_normalizer, rel=1e-12, abs=1e-15)
        assert batch.max_defect[j] == pytest.approx(path.max_defect, abs=1e-15)
        assert np.allclose(batch.final_directions[j], path.directions[-1], rtol=1e-12)
    empty = sample_paths(env, spec, x0, 0, 3, seed)
    assert empty.atom_indices.shape == (3, 0)
    assert np.allclose(empty.final_directions, x0)


def test_sample_paths_independent_of_workers():
    env = env_b()
    spec = _spec("b", env)
    serial = sample_paths(env, spec, unit_direction(2, 0), 12, 40, 8, workers=1)
    parallel = sample_paths(env, spec, unit_direction(2, 0), 12, 40, 8, workers=3)
    assert np.array_equal(serial.atom_indices, parallel.atom_indices)
    assert np.allclose(serial.log_density, parallel.log_density, rtol=1e-12, atol=0.0)
    assert np.allclose(serial.final_directions, parallel.final_directions, rtol=1e-12, atol=1e-15)


def test_path_density_matches_closed_form():
    env = env_b()
    spec = _spec("b", env)
    x0 = np.array([0.3, 0.7])
    path = sample_path(env, spec, x0, 12, np.random.default_rng(8))
    assert path.n == 12
    assert path.directions.shape == (13, 2)
    assert np.allclose(path.directions.sum(axis=1), 1.0)
    assert path.log_density == pytest.approx(log_density(x0, env, path.atom_indices, spec), abs=1e-10)
    assert path.max_defect <= 1e-6


def test_scalar_tilted_frequencies():
    env = env_a()
    spec = _spec("a", env)
    rng = np.random.default_rng(21)
    counts = np.zeros(2)
    paths = 2000
    for _ in range(paths):
        path = sample_path(env, spec, [1.0], 50, rng)
        counts += np.bincount(path.atom_indices, minlength=2)
    freq = counts[0] / counts.sum()
    se = math.sqrt((8 / 11) * (3 / 11) / counts.sum())
    assert abs(freq - 8 / 11) <= 4 * se


def test_is_survival_scalar_anchors():
    env = env_a()
    spec = _spec("a", env)
    assert is_survival(env, spec, 0, 1, 20_000, seed=1).within(P1_A)
    assert is_survival(env, spec, 0, 2, 20_000, seed=2).within(P2_A)
    est = is_survival(env, spec, 0, 0, 100, seed=3)
    assert est.value == pytest.approx(1.0) and est.std_error == pytest.approx(0.0, abs=1e-15)


def test_is_survival_matches_exact():
    env = env_b()
    spec = _spec("b", env)
    for n in (4, 5, 6):
        exact = exact_survival(env, 0, n)
        est = is_survival(env, spec, 0, n, 10_000, seed=100 + n)
        assert est.within(exact, n_se=4.0)


def test_is_survival_at_one():
    env = env_b()
    est = is_survival(env, _spec("b", env), 1, 5, 10, seed=1, s=[1.0, 1.0])
    assert est.value == 0.0


def test_is_paths_match_sample_path():
    """批次抽樣的第 j 條路徑與 sample_path(replica_rng(seed, j)) 相同"""
    env = env_b()
    spec = _spec("b", env)
    s = np.array([0.4, 0.2])
    seed, n, i = 77, 7, 1
    values = is_samples(env, spec, i, n, 5, seed, [s])
    for j in range(5):
        path = sample_path(env, spec, unit_direction(2, i), n, replica_rng(seed, j))
        y = compose_complement(env, path.atom_indices, s, "backward")[i]
        expected = y * math.exp(path.log_normalizer - path.log_density)
        assert values[j, 0] == pytest.approx(expected, rel=1e-12)


def test_is_reproducible_across_workers():
    env = env_b()
    spec = _spec("b", env)
    serial = is_survival(env, spec, 0, 8, 600, seed=5, workers=1)
    parallel = is_survival(env, spec, 0, 8, 600, seed=5, workers=2)
    assert serial.value == parallel.value
    assert serial.std_error == parallel.std_error


def test_is_samples_common_random_numbers():
    """s = 0 欄與 is_survival 逐路徑相同"""
    env = env_b()
    spec = _spec("b", env)
    samples = is_samples(env, spec, 0, 6, 400, 9, [[0.0, 0.0], [0.5, 0.5]])
    est = is_survival(env, spec, 0, 6, 400, seed=9)
    assert samples[:, 0].mean() == pytest.approx(est.value, rel=1e-12)
    assert np.all(samples[:, 1] <= samples[:, 0] + 1e-15)


def test_is_requires_theta_one():
    env = env_b()
    with pytest.raises(InputError):
        is_survival(env, _spec("b", env, 1.5), 0, 3, 10, seed=1)


def test_truncated_representation():
    """估計值隨 N 不增；N = n 時還原 IS 估計"""
    env = env_b()
    spec = _spec("b", env)
    n, seed = 8, 31
    result = truncated_representation(env, spec, 0, n, [0, 2, 4, n], 500, seed)
    values = [result[d].value for d in (0, 2, 4, n)]
    assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))
    est = is_survival(env, spec, 0, n, 500, seed=seed)
    scale = math.exp(n * spec.log_lambda) * spec.r_one(unit_direction(2, 0))
    assert result[n].value * scale == pytest.approx(est.value, rel=1e-9)
    with pytest.raises(InputError):
        truncated_representation(env, spec, 0, n, [n + 1], 10, seed)


def test_psi_series():
    env = env_a()
    series = psi_series(env, _spec("a", env), [1.0], 100, np.random.default_rng(4))
    assert series.partial_sums[0] == 1.0
    assert len(series.partial_sums) == 101
    assert np.all(series.increments >= 0.0)
    assert series.tail(100) < series.tail(1)


def test_tilted_lyapunov_scalar():
    """θ = 1 傾斜測度下 log||L||/n → Λ′(1)"""
    env = env_a()
    sampler = TiltedSampler(env, _spec("a", env), np.array([1.0]))
    est = lyapunov(env, sampler, 200, 1000, seed=12)
    assert est.within(LAMBDA_PRIME_A)


def test_tilted_phi_ratio_small_n():
    """n = 2：Φ 的分子與分母比值接近精確值"""
    env = env_a()
    spec = _spec("a", env)
    samples = is_samples(env, spec, 0, 2, 20_000, 17, [[0.0], [0.5]])
    ratio = samples[:, 1].mean() / samples[:, 0].mean()
    exact = exact_complement(env, 0, 2, [0.5]) / exact_complement(env, 0, 2, [0.0])
    assert ratio == pytest.approx(exact, rel=0.02)


def test_tilted_lyapunov_two_types():
    """ENV-B：傾斜 Lyapunov 估計與差分 Λ′(1) 相差 ≤ max(5%, 3 s.e.)"""
    env = env_b()
    sampler = TiltedSampler(env, _spec("b", env), unit_direction(2, 0))
    est = lyapunov(env, sampler, 200, 1000, seed=21)
    derivative = lambda_prime(env, 1.0)
    assert derivative < 0.0
    assert abs(est.value - derivative) <= max(0.05 * abs(derivative), 3.0 * est.std_error)


def test_small_theta_step_distribution():
    """θ → 0 時傾斜步分布趨近原始原子機率"""
    env = env_b()
    spec = _spec("b", env, 1e-6)
    for x in ([1.0, 0.0], [0.5, 0.5], [0.0, 1.0]):
        dist = step_distribution(x, env, spec)
        assert np.allclose(dist.probs, env.probs, atol=1e-4)
        assert dist.defect < 1e-5


def test_is_variance_below_naive():
    """ENV-A、n = 20：IS 的相對標準誤小於直接模擬"""
    env = env_a()
    reps = 10_000
    est = is_survival(env, _spec("a", env), 0, 20, reps, seed=41)
    naive = mc_survival(env, 0, 20, reps, seed=41)
    binomial = math.sqrt((1.0 - est.value) / (reps * est.value))
    assert est.relative_error < binomial
    if naive.value > 0.0:
        assert est.relative_error < naive.relative_error


def test_is_unbiased_repeated():
    """n = 4, 5, 6 各 100 次獨立實驗，≥ 99% 落在精確值 3 s.e. 之內"""
    env = env_b()
    spec = _spec("b", env)
    hits = 0
    for n in (4, 5, 6):
        exact = exact_survival(env, 0, n)
        for k in range(100):
            hits += is_survival(env, spec, 0, n, 2000, seed=1000 * n + k).within(exact)
    assert hits >= 297


def run_all_tests():
    return run_tests("傾斜抽樣測試", [
        ("純量權重", test_scalar_weights),
        ("純量步分布", test_scalar_step_distribution),
        ("純量密度", test_scalar_density),
        ("純量總質量", test_total_mass_scalar),
        ("p = 2 總質量", test_total_mass_two_types),
        ("θ = 1.5 總質量", test_total_mass_tilted_two_types),
        ("批次路徑", test_sample_paths_match_sample_path),
        ("批次路徑 worker 數無關", test_sample_paths_independent_of_workers),
        ("路徑密度", test_path_density_matches_closed_form),
        ("傾斜頻率", test_scalar_tilted_frequencies),
        ("IS 錨點", test_is_survival_scalar_anchors),
        ("IS 對精確值", test_is_survival_matches_exact),
        ("s = 1", test_is_survival_at_one),
        ("批次與單路徑一致", test_is_paths_match_sample_path),
        ("worker 數無關", test_is_reproducible_across_workers),
        ("共同亂數", test_is_samples_common_random_numbers),
        ("θ 限制", test_is_requires_theta_one),
        ("截斷表示式", test_truncated_representation),
        ("Ψ 級數", test_psi_series),
        ("傾斜 Lyapunov", test_tilted_lyapunov_scalar),
        ("Φ 比值", test_tilted_phi_ratio_small_n),
        ("p = 2 傾斜 Lyapunov", test_tilted_lyapunov_two_types),
        ("θ → 0 步分布", test_small_theta_step_distribution),
        ("IS 變異數縮減", test_is_variance_below_naive),
        ("IS 重複實驗", test_is_unbiased_repeated),
    ])


if __name__ == "__main__":
    success = run_all_tests()
    sys.exit(0 if success else 1)
