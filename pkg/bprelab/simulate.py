"""
bprelab - 族群前向模擬
在 i.i.d. 環境下演化 Z_n，並提供樸素 Monte Carlo 存活估計與條件經驗分布
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import InputError, PopulationOverflowError
from .model import EnvAtom, EnvDistribution
from .replicas import Estimate, replica_rng, run_replicas, summarize

# 超過 2^53 即無法以 float 精確表示，直接報錯
MAX_POPULATION = 2 ** 53


@dataclass(frozen=True, eq=False)
class PopulationState:
    """第 generation 代的族群向量 Z_n"""
    z: np.ndarray
    generation: int = 0

    def __post_init__(self):
        z = np.array(self.z, dtype=np.int64)
        if z.ndim != 1:
            raise InputError(f"❌ 族群向量必須是一維，收到形狀 {z.shape}")
        if np.any(z < 0):
            raise InputError("❌ 族群數量必須非負")
        if np.any(z > MAX_POPULATION):
            raise PopulationOverflowError("❌ 族群數量超過 2^53")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    @property
    def total(self) -> int:
        return int(self.z.sum())

    @property
    def is_extinct(self) -> bool:
        return not self.z.any()


@dataclass(frozen=True)
class Trajectory:
    """states[0..n] 與所用的環境索引 env_indices[1..n]"""
    states: Tuple[PopulationState, ...]
    env_indices: Tuple[int, ...]

    def __post_init__(self):
        if len(self.states) != len(self.env_indices) + 1:
            raise InputError("❌ 軌跡長度與環境序列長度不一致")

    @property
    def final(self) -> PopulationState:
        return self.states[-1]

    @property
    def survived(self) -> bool:
        return not self.final.is_extinct


def _offspring(z: np.ndarray, atom: EnvAtom, rng: np.random.Generator) -> np.ndarray:
    total = np.zeros(atom.p, dtype=np.int64)
    for j in range(atom.p):
        count = int(z[j])
        if count == 0:
            continue
        law = atom.laws[j]
        if float(count) * float(law.points.max()) >= 2.0 ** 62:
            raise PopulationOverflowError(f"❌ 類型 {j} 的後代數量可能溢位（親代數 {count}）")
        total += law.sample(count, rng)
    if np.any(total > MAX_POPULATION):
        raise PopulationOverflowError(f"❌ 族群數量 {total.tolist()} 超過 2^53")
    return total


def step(state: PopulationState, atom: EnvAtom, rng: np.random.Generator) -> PopulationState:
    """
    一代演化：Z_n^i = Σ_j Σ_{k ≤ Z_{n−1}^j} X^i_{n,j,k}

    z = 0 時直接回傳 0，不消耗亂數。
    """
    if state.z.shape != (atom.p,):
        raise InputError(f"❌ 族群向量維度 {state.z.shape} 與原子類型數 {atom.p} 不符")
    if state.is_extinct:
        return PopulationState(z=np.zeros(atom.p, dtype=np.int64), generation=state.generation + 1)
    return PopulationState(z=_offspring(state.z, atom, rng), generation=state.generation + 1)


def evolve(
    env: EnvDistribution, z0: Sequence[int], seq: Sequence[int], rng: np.random.Generator
) -> Trajectory:
    """在固定的環境序列上演化"""
    state = PopulationState(z=np.asarray(z0), generation=0)
    if state.z.shape != (env.p,):
        raise InputError(f"❌ z0 的維度應為 {env.p}，收到 {state.z.shape}")
    indices = tuple(int(k) for k in seq)
    states = [state]
    for k in indices:
        if k < 0 or k >= env.size:
            raise InputError(f"❌ 環境索引 {k} 超出範圍 [0, {env.size})")
        state = step(state, env.atoms[k], rng)
        states.append(state)
    return Trajectory(states=tuple(states), env_indices=indices)


def run(env: EnvDistribution, z0: Sequence[int], n: int, rng: np.random.Generator) -> Trajectory:
    """先抽出 n 個 i.i.d. 環境索引，再逐代演化"""
    if n < 0:
        raise InputError(f"❌ n 必須非負，收到: {n}")
    seq = env.sample_indices(n, rng)
    return evolve(env, z0, seq, rng)


def _final_population(env: EnvDistribution, z0: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    seq = env.sample_indices(n, rng)
    z = z0.copy()
    for k in seq:
        if not z.any():
            break
        z = _offspring(z, env.atoms[k], rng)
    return z


def _unit(env: EnvDistribution, i: int) -> np.ndarray:
    if not 0 <= i < env.p:
        raise InputError(f"❌ 類型索引 {i} 超出範圍 [0, {env.p})")
    z0 = np.zeros(env.p, dtype=np.int64)
    z0[i] = 1
    return z0


def _final_block(seed: int, start: int, stop: int, env: EnvDistribution, z0: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((stop - start, env.p), dtype=np.int64)
    for j, rep in enumerate(range(start, stop)):
        out[j] = _final_population(env, z0, n, replica_rng(seed, rep))
    return out


def _frozen_block(seed: int, start: int, stop: int, env: EnvDistribution, z0: np.ndarray, seq: np.ndarray) -> np.ndarray:
    out = np.empty((stop - start, env.p), dtype=np.int64)
    for j, rep in enumerate(range(start, stop)):
        rng = replica_rng(seed, rep)
        z = z0.copy()
        for k in seq:
            if not z.any():
                break
            z = _offspring(z, env.atoms[k], rng)
        out[j] = z
    return out


def final_populations(
    env: EnvDistribution, i: int, n: int, reps: int, seed: int, workers: Optional[int] = None
) -> np.ndarray:
    """reps 個從 e_i 出發的 Z_n（依 replica 索引排序）"""
    if n < 0:
        raise InputError(f"❌ n 必須非負，收到: {n}")
    return run_replicas(_final_block, reps, seed, (env, _unit(env, i), n), workers)


def mc_survival(
    env: EnvDistribution, i: int, n: int, reps: int, seed: int, workers: Optional[int] = None
) -> Estimate:
    """|Z_n| > 0 的比例與二項標準誤"""
    if reps < 1:
        raise InputError(f"❌ reps 必須 ≥ 1，收到: {reps}")
    if n == 0:
        _unit(env, i)
        return Estimate(value=1.0, std_error=0.0, reps=reps)
    finals = final_populations(env, i, n, reps, seed, workers)
    alive = int(np.count_nonzero(finals.sum(axis=1) > 0))
    p_hat = alive / reps
    return Estimate(value=p_hat, std_error=math.sqrt(p_hat * (1.0 - p_hat) / reps), reps=reps)


def frozen_environment_mean(
    env: EnvDistribution,
    z0: Sequence[int],
    seq: Sequence[int],
    reps: int,
    seed: int,
    workers: Optional[int] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """固定環境序列下 Z_n 的樣本平均與各座標標準誤（對照 z0·M_1···M_n）"""
    z0 = np.asarray(z0, dtype=np.int64)
    if z0.shape != (env.p,):
        raise InputError(f"❌ z0 的維度應為 {env.p}，收到 {z0.shape}")
    seq = np.asarray(seq, dtype=np.int64)
    finals = run_replicas(_frozen_block, reps, seed, (env, z0, seq), workers).astype(float)
    estimates = [summarize(finals[:, j]) for j in range(env.p)]
    return (
        np.array([e.value for e in estimates]),
        np.array([e.std_error for e in estimates])
    )


# ============ 條件經驗分布 ============

@dataclass(frozen=True, eq=False)
class ConditionalLaw:
    """Z_n 在 |Z_n| > 0 條件下的經驗分布"""
    survivors: np.ndarray
    reps: int
    status: str
    frequencies: Dict[Tuple[int, ...], float] = field(default_factory=dict)

    @property
    def count(self) -> int:
        return int(self.survivors.shape[0])

    def probability(self, z: Sequence[int]) -> float:
        return self.frequencies.get(tuple(int(c) for c in z), 0.0)

    def pgf(self, s: Sequence[float]) -> Estimate:
        """經驗條件機率母函數 E[s^{Z_n} | |Z_n| > 0]"""
        if self.status != "ok":
            raise InputError("❌ 沒有存活的樣本，條件分布無定義")
        vec = np.asarray(s, dtype=float)
        if vec.shape != (self.survivors.shape[1],):
            raise InputError(f"❌ s 的維度應為 {self.survivors.shape[1]}")
        values = np.prod(vec[None, :] ** self.survivors, axis=1)
        return summarize(values)


def conditional_empirical(
    env: EnvDistribution, i: int, n: int, reps: int, seed: int, workers: Optional[int] = None
) -> ConditionalLaw:
    """
    存活樣本的經驗分布

    沒有存活樣本時回傳 status = "no-survivors"，不拋出例外。
    """
    finals = final_populations(env, i, n, reps, seed, workers)
    survivors = finals[finals.sum(axis=1) > 0]
    if survivors.shape[0] == 0:
        return ConditionalLaw(survivors=survivors, reps=reps, status="no-survivors")

    support, counts = np.unique(survivors, axis=0, return_counts=True)
    total = survivors.shape[0]
    frequencies = {
        tuple(int(c) for c in z): count / total for z, count in zip(support, counts)
    }
    return ConditionalLaw(survivors=survivors, reps=reps, status="ok", frequencies=frequencies)
