"""
bprelab - 隨機平均矩陣乘積
R_k = M_1···M_k、L_{n,k} = M_n···M_k、範數約定、Hennion 秩一分解與 Lyapunov 指數估計

範數約定：||m|| 為欄作用的 L1 誘導範數（最大欄和），|m| 為所有元素絕對值之和。
長度超過 60 的乘積每 20 步提出 ||·|| 並另記 log 尺度，避免次臨界情形下溢。
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Callable, Optional, Sequence, Tuple

import numpy as np

from .errors import InputError, NotApplicableError, NumericalError
from .replicas import Estimate, replica_rng, run_replicas, summarize

if TYPE_CHECKING:
    from .model import EnvAtom, EnvDistribution

RESCALE_THRESHOLD = 60
RESCALE_EVERY = 20


# ============ 範數 ============

def op_norm(m: np.ndarray) -> float:
    """最大欄和 ||m||"""
    m = np.asarray(m, dtype=float)
    if m.size == 0:
        return 0.0
    return float(np.abs(m).sum(axis=0).max())


def l1_norm(m: np.ndarray) -> float:
    """元素絕對值總和 |m|"""
    return float(np.abs(np.asarray(m, dtype=float)).sum())


def norms(m: np.ndarray) -> Tuple[float, float]:
    """回傳 (||m||, |m|)"""
    return op_norm(m), l1_norm(m)


def entry_ratio(m: np.ndarray) -> float:
    """最大元素 / 最小元素；最小元素為 0 時回傳 +∞"""
    m = np.asarray(m, dtype=float)
    low = float(m.min())
    if low <= 0.0:
        return math.inf
    return float(m.max()) / low


def _indices(seq: Any) -> Tuple[int, ...]:
    return tuple(int(k) for k in getattr(seq, "atom_indices", seq))


def _check_indices(env: "EnvDistribution", idx: Sequence[int]) -> None:
    for position, k in enumerate(idx):
        if k < 0 or k >= env.size:
            raise InputError(f"❌ 環境序列第 {position} 項索引 {k} 超出範圍 [0, {env.size})")


def scaled_product(matrices: Sequence[np.ndarray], p: int, left: bool = True) -> Tuple[np.ndarray, float]:
    """
    依序相乘並在長乘積時週期性重新縮放

    Args:
        matrices: 依出現順序的矩陣 A_1, ..., A_m
        left: True 時計算 A_m···A_1（左乘），否則 A_1···A_m

    Returns:
        (縮放後矩陣, log 尺度)，真實乘積 = 矩陣 · exp(log 尺度)
    """
    cur = np.eye(p)
    log_scale = 0.0
    rescale = len(matrices) > RESCALE_THRESHOLD
    for step, mat in enumerate(matrices, start=1):
        cur = mat @ cur if left else cur @ mat
        if rescale and step % RESCALE_EVERY == 0:
            nrm = op_norm(cur)
            if nrm == 0.0:
                break
            cur = cur / nrm
            log_scale += math.log(nrm)
    return cur, log_scale


# ============ 乘積路徑 ============

@dataclass(frozen=True, eq=False)
class MatrixPath:
    """一條環境序列上的矩陣乘積"""
    seq: Tuple[int, ...]
    matrices: Tuple[np.ndarray, ...]
    right_scaled: Tuple[np.ndarray, ...]
    right_log_scale: Tuple[float, ...]

    @property
    def n(self) -> int:
        return len(self.seq)

    @property
    def p(self) -> int:
        return self.right_scaled[0].shape[0]

    def right(self, k: int) -> np.ndarray:
        """R_k = M_1···M_k（R_0 = Id）"""
        return self.right_scaled[k] * math.exp(self.right_log_scale[k])

    def right_row(self, k: int, i: int) -> np.ndarray:
        """a_i R_k 的非零列，即 R_k 的第 i 列"""
        return self.right(k)[i].copy()

    def left_scaled(self, n: int, k: int) -> Tuple[np.ndarray, float]:
        """L_{n,k} = M_n···M_k，k = n + 1 時為 Id"""
        if not 1 <= k <= n + 1 or n > self.n:
            raise InputError(f"❌ L_{{{n},{k}}} 超出路徑長度 {self.n}")
        return scaled_product(self.matrices[k - 1:n], self.p, left=True)

    def left(self, n: int, k: int) -> np.ndarray:
        mat, log_scale = self.left_scaled(n, k)
        return mat * math.exp(log_scale)


def products(env: "EnvDistribution", seq: Any) -> MatrixPath:
    """建立 R_0..R_n；L_{n,k} 於需要時計算"""
    idx = _indices(seq)
    _check_indices(env, idx)
    p = env.p
    mats = tuple(env.atoms[k].mean_matrix for k in idx)
    rescale = len(mats) > RESCALE_THRESHOLD

    cur = np.eye(p)
    log_scale = 0.0
    scaled = [cur.copy()]
    logs = [0.0]
    for step, mat in enumerate(mats, start=1):
        cur = cur @ mat
        if rescale and step % RESCALE_EVERY == 0:
            nrm = op_norm(cur)
            if nrm > 0.0:
                cur = cur / nrm
                log_scale += math.log(nrm)
        scaled.append(cur.copy())
        logs.append(log_scale)
    return MatrixPath(seq=idx, matrices=mats, right_scaled=tuple(scaled), right_log_scale=tuple(logs))


def log_op_norm_product(env: "EnvDistribution", seq: Any) -> float:
    """log ||M_n···M_1||，每步重新縮放"""
    idx = _indices(seq)
    cur = np.eye(env.p)
    log_scale = 0.0
    for k in idx:
        cur = env.atoms[k].mean_matrix @ cur
        nrm = op_norm(cur)
        if nrm == 0.0:
            raise NumericalError("❌ 乘積範數為 0（H0 不成立）")
        cur = cur / nrm
        log_scale += math.log(nrm)
    return log_scale


# ============ Hennion 秩一分解 ============

@dataclass(frozen=True, eq=False)
class RankOneDecomposition:
    """L/λ_n(N) ≈ v ⊗ u"""
    scale: float
    log_scale: float
    v: np.ndarray
    u: np.ndarray
    residual: float


def hennion_decompose(env: "EnvDistribution", seq: Any, start: int = 0) -> RankOneDecomposition:
    """
    對 seq 中位置 start 之後的因子 L = M_n···M_{start+1} 做秩一分解

    v = L·1 正規化、u = 1ᵀL 正規化、λ_n(N) = ||L||，
    殘差 = || L/||L|| − (v⊗u)/||v⊗u|| ||。
    """
    idx = _indices(seq)
    _check_indices(env, idx)
    if start < 0 or start > len(idx):
        raise InputError(f"❌ 起點 {start} 超出序列長度 {len(idx)}")
    tail = idx[start:]
    for k in set(tail):
        if env.atoms[k].mean_matrix.min() <= 0.0:
            raise NotApplicableError(f"⚠️ 原子 {k} 的平均矩陣含非正元素，Hennion 分解不適用")

    mat, log_scale = scaled_product([env.atoms[k].mean_matrix for k in tail], env.p, left=True)
    nrm = op_norm(mat)
    if nrm == 0.0:
        raise NotApplicableError("⚠️ 乘積為零矩陣，Hennion 分解不適用")
    normalized = mat / nrm
    ones = np.ones(env.p)
    v = normalized @ ones
    v = v / v.sum()
    u = ones @ normalized
    u = u / u.sum()
    outer = np.outer(v, u)
    outer = outer / op_norm(outer)
    residual = op_norm(normalized - outer)
    total_log = math.log(nrm) + log_scale
    return RankOneDecomposition(
        scale=math.exp(total_log),
        log_scale=total_log,
        v=v,
        u=u,
        residual=residual
    )


# ============ H3 推論 ============

@dataclass(frozen=True)
class BoundCheck:
    value: float
    bound: float
    passed: bool


def check_h3_lower_bound(atom: "EnvAtom") -> BoundCheck:
    """min_{x∈S+} |Mx| ≥ ||M||/γ；最小值在單純形頂點上達到"""
    if not math.isfinite(atom.gamma):
        raise NotApplicableError("⚠️ 平均矩陣含零元素，H3 不成立")
    vertex_min = float(atom.mean_matrix.sum(axis=0).min())
    bound = op_norm(atom.mean_matrix) / atom.gamma
    return BoundCheck(value=vertex_min, bound=bound, passed=vertex_min >= bound * (1.0 - 1e-12))


def check_entry_ratio(env: "EnvDistribution", seq: Any) -> BoundCheck:
    """L_{n,1} 的最大/最小元素比 ≤ γ²p"""
    gamma = env.gamma
    if not math.isfinite(gamma):
        raise NotApplicableError("⚠️ 環境含有零元素的平均矩陣，H3 不成立")
    idx = _indices(seq)
    mat, _ = scaled_product([env.atoms[k].mean_matrix for k in idx], env.p, left=True)
    ratio = entry_ratio(mat)
    bound = gamma ** 2 * env.p
    return BoundCheck(value=ratio, bound=bound, passed=ratio <= bound * (1.0 + 1e-12))


# ============ Lyapunov 指數 ============

@dataclass(frozen=True, eq=False)
class AmbientSampler:
    """原始（未傾斜）環境下的 i.i.d. 序列來源"""
    env: "EnvDistribution"

    def __call__(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.env.sample_indices(n, rng)


def _lyapunov_block(
    seed: int, start: int, stop: int,
    env: "EnvDistribution", sampler: Callable[[np.random.Generator, int], Any], n: int
) -> np.ndarray:
    out = np.empty(stop - start)
    for j, rep in enumerate(range(start, stop)):
        rng = replica_rng(seed, rep)
        seq = sampler(rng, n)
        out[j] = log_op_norm_product(env, seq) / n
    return out


def lyapunov(
    env: "EnvDistribution",
    sampler: Callable[[np.random.Generator, int], Any],
    n: int,
    reps: int,
    seed: int,
    workers: Optional[int] = None
) -> Estimate:
    """
    log||L_{n,1}||/n 的 replica 平均

    sampler 決定序列的分布：AmbientSampler 為原始測度，
    tilt.TiltedSampler 為 θ 傾斜測度（θ = 1 時極限為 Λ′(1)）。
    """
    if n < 1:
        raise InputError(f"❌ n 必須 ≥ 1，收到: {n}")
    values = run_replicas(_lyapunov_block, reps, seed, (env, sampler, n), workers)
    return summarize(values)
