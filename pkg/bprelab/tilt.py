"""
bprelab - 指數測度變換
密度 p_n^θ、沿方向鏈的逐步傾斜抽樣、一致性與總質量檢查、
θ = 1 的重要性抽樣存活估計、Ψ 級數診斷與截斷表示式 K_n(N; s)

抽樣器以 q̃_e(x) = prob_e·w_θ(x, M_e) / Σ 為每步分布（插值誤差已重新正規化），
重要性權重取 Π prob_e / q̃_e = exp(log_normalizer − log_density)，
因此估計量對離散化後的抽樣分布仍是嚴格不偏的。
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateInputError, DiscretizationError, InputError, NumericalError
from .genfun import DEFAULT_BUDGET, check_budget, enumerate_sequences
from .matprod import op_norm, scaled_product
from .model import EnvAtom, EnvDistribution
from .replicas import Estimate, replica_rng, run_replicas, summarize
from .spectral import SpectralSolution

DEFECT_TOL = 1e-3
BATCH = 2048


# ============ 資料結構 ============

@dataclass(frozen=True)
class StepDistribution:
    """方向 x 上的一步傾斜分布；defect = |Σ_e prob_e w_θ(x, M_e) − 1|"""
    probs: np.ndarray
    raw_total: float

    @property
    def defect(self) -> float:
        return abs(self.raw_total - 1.0)


@dataclass(frozen=True, eq=False)
class TiltedPath:
    """傾斜測度下的環境序列與方向鏈 x_0..x_n"""
    atom_indices: Tuple[int, ...]
    directions: np.ndarray
    log_density: float
    log_normalizer: float
    theta: float
    max_defect: float

    @property
    def n(self) -> int:
        return len(self.atom_indices)

    @property
    def density(self) -> float:
        return math.exp(self.log_density)


@dataclass(frozen=True, eq=False)
class TiltedPathBatch:
    """reps 條傾斜路徑；第 j 列與 sample_path(replica_rng(seed, j)) 相同"""
    atom_indices: np.ndarray
    log_density: np.ndarray
    log_normalizer: np.ndarray
    max_defect: np.ndarray
    final_directions: np.ndarray

    @property
    def reps(self) -> int:
        return self.atom_indices.shape[0]


@dataclass(frozen=True, eq=False)
class PsiSeries:
    """S_K = 1 + Σ_{k≤K} ||L_{k−1,1}||·T_k，K = 0..K_max"""
    partial_sums: np.ndarray
    atom_indices: Tuple[int, ...]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.partial_sums)

    def tail(self, k: int) -> float:
        """第 k 個增量 ||L_{k−1,1}||·T_k"""
        return float(self.increments[k - 1])


@dataclass(frozen=True)
class _Batch:
    indices: np.ndarray
    log_density: np.ndarray
    log_normalizer: np.ndarray
    max_defect: np.ndarray
    directions: Optional[np.ndarray]
    final: np.ndarray


# ============ 輔助 ============

def _check_spec(env: EnvDistribution, spec: SpectralSolution) -> None:
    if spec.grid.p != env.p:
        raise InputError(f"❌ 譜解的維度 {spec.grid.p} 與環境類型數 {env.p} 不符")


def _direction(x, p: int) -> np.ndarray:
    vec = np.asarray(x, dtype=float)
    if vec.shape != (p,):
        raise InputError(f"❌ 方向向量的維度應為 {p}，收到 {vec.shape}")
    if np.any(vec < 0.0) or abs(vec.sum() - 1.0) > 1e-9:
        raise InputError("❌ 方向向量必須在 S_+ 上（非負且總和為 1）")
    return vec


def unit_direction(p: int, i: int) -> np.ndarray:
    if not 0 <= i < p:
        raise InputError(f"❌ 類型索引 {i} 超出範圍 [0, {p})")
    x = np.zeros(p)
    x[i] = 1.0
    return x


def _step_weights(env: EnvDistribution, spec: SpectralSolution, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    對 R 個方向同時計算 prob_e·w_θ(x, M_e)

    Returns:
        (raw 形狀 (R, A), 新方向形狀 (A, R, p))
    """
    R = X.shape[0]
    r_x = spec.r_at(X)
    if np.any(r_x <= 0.0):
        raise NumericalError("❌ r_θ(x) ≤ 0，譜解已損壞")
    raw = np.empty((R, env.size))
    dirs = np.empty((env.size, R, env.p))
    for a, (atom, prob) in enumerate(zip(env.atoms, env.probs)):
        Y = X @ atom.mean_matrix.T
        lengths = Y.sum(axis=1)
        if np.any(lengths <= 0.0):
            raise NumericalError(f"❌ 原子 {a} 的 M x = 0")
        dirs[a] = Y / lengths[:, None]
        raw[:, a] = prob * lengths ** spec.theta * spec.r_at(dirs[a]) / (spec.lam * r_x)
    return raw, dirs


def _sample_batch(
    env: EnvDistribution,
    spec: SpectralSolution,
    x0: np.ndarray,
    uniforms: np.ndarray,
    keep_directions: bool = False
) -> _Batch:
    """R 條路徑同步抽樣；第 r 條路徑只使用 uniforms[r]"""
    R, n = uniforms.shape
    X = np.repeat(x0[None, :], R, axis=0)
    indices = np.empty((R, n), dtype=np.int64)
    log_density = np.zeros(R)
    log_normalizer = np.zeros(R)
    max_defect = np.zeros(R)
    directions = np.empty((R, n + 1, env.p)) if keep_directions else None
    if keep_directions:
        directions[:, 0] = X
    rows = np.arange(R)

    for k in range(n):
        raw, dirs = _step_weights(env, spec, X)
        totals = raw.sum(axis=1)
        defect = np.abs(totals - 1.0)
        worst = float(defect.max())
        if worst > DEFECT_TOL:
            raise DiscretizationError(f"❌ 正規化缺陷 {worst:.3e} > {DEFECT_TOL}；網格過粗")
        max_defect = np.maximum(max_defect, defect)
        cumulative = np.cumsum(raw / totals[:, None], axis=1)
        cumulative[:, -1] = 1.0
        choice = (cumulative <= uniforms[:, k:k + 1]).sum(axis=1)
        indices[:, k] = choice
        log_density += np.log(raw[rows, choice] / env.probs[choice])
        log_normalizer += np.log(totals)
        X = dirs[choice, rows]
        if keep_directions:
            directions[:, k + 1] = X
    return _Batch(indices, log_density, log_normalizer, max_defect, directions, X)


def _apply_atoms(env: EnvDistribution, choice: np.ndarray, U: np.ndarray) -> np.ndarray:
    """每列以各自的原子作用 u ↦ 1 − F(1 − u)"""
    out = np.empty_like(U)
    for a, atom in enumerate(env.atoms):
        mask = choice == a
        if mask.any():
            out[mask] = atom.pgf_complement_many(U[mask])
    return out


def _uniforms(seed: int, lo: int, hi: int, n: int) -> np.ndarray:
    return np.stack([replica_rng(seed, rep).random(n) for rep in range(lo, hi)])


# ============ 單步權重 ============

def weight(x, atom: EnvAtom, spec: SpectralSolution) -> float:
    """w_θ(x, M) = |Mx|^θ · r(M·x) / (λ(θ) · r(x))"""
    x = _direction(x, atom.p)
    r_x = spec.r_one(x)
    if r_x <= 0.0:
        raise NumericalError("❌ r_θ(x) ≤ 0，譜解已損壞")
    y = atom.mean_matrix @ x
    length = float(y.sum())
    if length <= 0.0:
        raise NumericalError("❌ M x = 0")
    return length ** spec.theta * spec.r_one(y / length) / (spec.lam * r_x)


def step_distribution(x, env: EnvDistribution, spec: SpectralSolution) -> StepDistribution:
    """q_e(x) = prob_e · w_θ(x, M_e)，重新正規化後回傳並記錄原始缺陷"""
    _check_spec(env, spec)
    x = _direction(x, env.p)
    raw, _ = _step_weights(env, spec, x[None, :])
    raw_total = math.fsum(raw[0])
    if abs(raw_total - 1.0) > DEFECT_TOL:
        raise DiscretizationError(f"❌ 正規化缺陷 {abs(raw_total - 1.0):.3e} > {DEFECT_TOL}；網格過粗")
    return StepDistribution(probs=raw[0] / raw_total, raw_total=raw_total)


# ============ 傾斜路徑 ============

def sample_path(
    env: EnvDistribution, spec: SpectralSolution, x0, n: int, rng: np.random.Generator
) -> TiltedPath:
    """依方向鏈逐步抽樣 atom_k ~ q̃(x_{k−1})，x_k = M_k·x_{k−1}"""
    _check_spec(env, spec)
    if n < 0:
        raise InputError(f"❌ n 必須非負，收到: {n}")
    x0 = _direction(x0, env.p)
    batch = _sample_batch(env, spec, x0, rng.random(n)[None, :], keep_directions=True)
    return TiltedPath(
        atom_indices=tuple(int(k) for k in batch.indices[0]),
        directions=batch.directions[0],
        log_density=float(batch.log_density[0]),
        log_normalizer=float(batch.log_normalizer[0]),
        theta=spec.theta,
        max_defect=float(batch.max_defect[0])
    )


def _paths_block(
    seed: int, start: int, stop: int,
    env: EnvDistribution, spec: SpectralSolution, x0: np.ndarray, n: int
) -> np.ndarray:
    """每列 [atoms(n), log_density, log_normalizer, max_defect, x_n(p)]"""
    out = np.empty((stop - start, n + 3 + env.p))
    for lo in range(start, stop, BATCH):
        hi = min(stop, lo + BATCH)
        batch = _sample_batch(env, spec, x0, _uniforms(seed, lo, hi, n))
        rows = slice(lo - start, hi - start)
        out[rows, :n] = batch.indices
        out[rows, n] = batch.log_density
        out[rows, n + 1] = batch.log_normalizer
        out[rows, n + 2] = batch.max_defect
        out[rows, n + 3:] = batch.final
    return out


def sample_paths(
    env: EnvDistribution,
    spec: SpectralSolution,
    x0,
    n: int,
    reps: int,
    seed: int,
    workers: Optional[int] = None
) -> TiltedPathBatch:
    """批次抽樣 reps 條長度 n 的傾斜路徑（依 BPRELAB_THREADS 分給 worker）"""
    _check_spec(env, spec)
    if n < 0:
        raise InputError(f"❌ n 必須非負，收到: {n}")
    x0 = _direction(x0, env.p)
    table = run_replicas(_paths_block, reps, seed, (env, spec, x0, n), workers)
    return TiltedPathBatch(
        atom_indices=table[:, :n].astype(np.int64),
        log_density=table[:, n],
        log_normalizer=table[:, n + 1],
        max_defect=table[:, n + 2],
        final_directions=table[:, n + 3:]
    )


def log_density(x0, env: EnvDistribution, seq: Sequence[int], spec: SpectralSolution) -> float:
    """log p_n^θ(x0, L_{n,1})，乘積以 log 尺度計算"""
    _check_spec(env, spec)
    x0 = _direction(x0, env.p)
    idx = [int(k) for k in seq]
    for position, k in enumerate(idx):
        if k < 0 or k >= env.size:
            raise InputError(f"❌ 環境序列第 {position} 項索引 {k} 超出範圍 [0, {env.size})")
    if not idx:
        return 0.0
    mat, log_scale = scaled_product([env.atoms[k].mean_matrix for k in idx], env.p, left=True)
    y = mat @ x0
    length = float(y.sum())
    if length <= 0.0:
        raise NumericalError("❌ L_{n,1} x = 0")
    r_x = spec.r_one(x0)
    if r_x <= 0.0:
        raise NumericalError("❌ r_θ(x) ≤ 0，譜解已損壞")
    return (
        spec.theta * (math.log(length) + log_scale)
        - len(idx) * spec.log_lambda
        + math.log(spec.r_one(y / length))
        - math.log(r_x)
    )


def density(x0, env: EnvDistribution, seq: Sequence[int], spec: SpectralSolution) -> float:
    """p_n^θ(x0, L_{n,1}) = |L x0|^θ r(L·x0) / (λ^n r(x0))"""
    return math.exp(log_density(x0, env, seq, spec))


def _start_points(env: EnvDistribution, x0s) -> List[np.ndarray]:
    if x0s is None:
        return [unit_direction(env.p, i) for i in range(env.p)]
    return [_direction(x, env.p) for x in x0s]


def check_consistency(
    env: EnvDistribution,
    spec: SpectralSolution,
    n: int,
    x0s=None,
    budget: int = DEFAULT_BUDGET
) -> float:
    """max |E[p_{n+1}^θ(x, M·m)] − p_n^θ(x, m)|，對所有長度 n 的 m 窮舉"""
    _check_spec(env, spec)
    check_budget(env, n + 1, budget)
    worst = 0.0
    for x0 in _start_points(env, x0s):
        for seq, _ in enumerate_sequences(env, n, budget):
            base = density(x0, env, seq, spec)
            extended = math.fsum(
                float(prob) * density(x0, env, seq + (e,), spec)
                for e, prob in enumerate(env.probs)
            )
            worst = max(worst, abs(extended - base))
    return worst


def check_total_mass(
    env: EnvDistribution,
    spec: SpectralSolution,
    n: int,
    x0s=None,
    budget: int = DEFAULT_BUDGET
) -> float:
    """max_x |E[p_n^θ(x, L_{n,1})] − 1|"""
    _check_spec(env, spec)
    if n == 0:
        return 0.0
    worst = 0.0
    for x0 in _start_points(env, x0s):
        total = math.fsum(
            w * density(x0, env, seq, spec) for seq, w in enumerate_sequences(env, n, budget)
        )
        worst = max(worst, abs(total - 1.0))
    return worst


# ============ 重要性抽樣 ============

def _require_theta_one(spec: SpectralSolution) -> None:
    if spec.theta != 1.0:
        raise InputError(f"❌ 存活估計只在 θ = 1 下定義，收到 θ = {spec.theta}")


def _is_block(
    seed: int, start: int, stop: int,
    env: EnvDistribution, spec: SpectralSolution, i: int, n: int, u0: np.ndarray
) -> np.ndarray:
    out = np.empty(stop - start)
    x0 = unit_direction(env.p, i)
    for lo in range(start, stop, BATCH):
        hi = min(stop, lo + BATCH)
        batch = _sample_batch(env, spec, x0, _uniforms(seed, lo, hi, n))
        V = np.repeat(u0[None, :], hi - lo, axis=0)
        for k in range(n):
            V = _apply_atoms(env, batch.indices[:, k], V)
        with np.errstate(divide="ignore"):
            log_y = np.log(V[:, i])
        out[lo - start:hi - start] = np.exp(log_y + batch.log_normalizer - batch.log_density)
    return out


def is_survival(
    env: EnvDistribution,
    spec: SpectralSolution,
    i: int,
    n: int,
    reps: int,
    seed: int,
    s=None,
    workers: Optional[int] = None
) -> Estimate:
    """
    E[1 − F^i_{n,0}(s)] 的重要性抽樣估計

    路徑從 x0 = e_i 以 θ = 1 傾斜抽樣；積分值
    (1 − F^i_{n,0}(s)) · λ^n(1) r_1(e_i) / (|L_{n,1} e_i| r_1(L_{n,1}·e_i))
    在 log 尺度下計算。
    """
    _check_spec(env, spec)
    _require_theta_one(spec)
    unit_direction(env.p, i)
    if n < 0:
        raise InputError(f"❌ n 必須非負，收到: {n}")
    s = np.zeros(env.p) if s is None else np.asarray(s, dtype=float)
    if s.shape != (env.p,) or np.any(s < 0.0) or np.any(s > 1.0):
        raise InputError(f"❌ s 必須是 [0,1]^{env.p} 中的向量")
    u0 = 1.0 - s
    if not u0.any():
        return Estimate(value=0.0, std_error=0.0, reps=reps)
    values = run_replicas(_is_block, reps, seed, (env, spec, i, n, u0), workers)
    return summarize(values)


def is_samples(
    env: EnvDistribution,
    spec: SpectralSolution,
    i: int,
    n: int,
    reps: int,
    seed: int,
    s_list: Sequence[Sequence[float]],
    workers: Optional[int] = None
) -> np.ndarray:
    """
    同一批傾斜路徑上多個 s 的逐路徑積分值（共同亂數）

    Returns:
        形狀 (reps, len(s_list))
    """
    _check_spec(env, spec)
    _require_theta_one(spec)
    columns = []
    for s in s_list:
        u0 = 1.0 - np.asarray(s, dtype=float)
        if u0.shape != (env.p,):
            raise InputError(f"❌ s 的維度應為 {env.p}")
        columns.append(run_replicas(_is_block, reps, seed, (env, spec, i, n, u0), workers))
    return np.column_stack(columns)


# ============ Ψ 級數 ============

def psi_series(
    env: EnvDistribution, spec: SpectralSolution, x0, k_max: int, rng: np.random.Generator
) -> PsiSeries:
    """沿一條 θ = 1 傾斜路徑計算 S_K = 1 + Σ_{k≤K} ||L_{k−1,1}||·T_k"""
    _require_theta_one(spec)
    if k_max < 0:
        raise InputError(f"❌ K_max 必須非負，收到: {k_max}")
    path = sample_path(env, spec, x0, k_max, rng)
    increments = np.empty(k_max)
    cur = np.eye(env.p)
    log_scale = 0.0
    for k, atom_index in enumerate(path.atom_indices):
        increments[k] = math.exp(math.log(op_norm(cur)) + log_scale) * env.atoms[atom_index].t_value
        cur = env.atoms[atom_index].mean_matrix @ cur
        nrm = op_norm(cur)
        if nrm == 0.0:
            raise NumericalError("❌ 乘積範數為 0")
        cur = cur / nrm
        log_scale += math.log(nrm)
    partial = np.concatenate([[1.0], 1.0 + np.cumsum(increments)])
    return PsiSeries(partial_sums=partial, atom_indices=path.atom_indices)


# ============ 截斷表示式 ============

def _xi_partial_sums(env: EnvDistribution, idx: np.ndarray, i: int, u0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    每條路徑的 log|e_i L_{n,1}(1−s)| 與累積和 Σ_{j≤N} |e_i L_{n,1}(1−s)|·ψ̃_j / |e_i L_{n,j+1}|

    列向量 e_i L_{n,j} 由後往前累乘並逐步正規化，log 尺度另記。
    """
    R, n = idx.shape
    p = env.p
    V = np.empty((n + 1, R, p))
    V[0] = u0
    for k in range(n):
        V[k + 1] = _apply_atoms(env, idx[:, k], V[k])

    row = np.zeros((R, p))
    row[:, i] = 1.0
    log_s = np.zeros(R)
    coeff = np.empty((R, n))
    scale_at = np.empty((R, n))
    for j in range(n, 0, -1):
        mats = env.mean_matrices[idx[:, j - 1]]
        den_f = np.einsum("rp,rp->r", row, V[j])
        den_m = np.einsum("rp,rpq,rq->r", row, mats, V[j - 1])
        if np.any(den_f <= 0.0) or np.any(den_m <= 0.0):
            raise DegenerateInputError("❌ Ξ 展開中的分母為零", step=j)
        coeff[:, j - 1] = 1.0 / den_f - 1.0 / den_m
        scale_at[:, j - 1] = log_s
        row = np.einsum("rp,rpq->rq", row, mats)
        nrm = row.sum(axis=1)
        if np.any(nrm <= 0.0):
            raise DegenerateInputError(f"❌ |e_i L_{{n,{j}}}| = 0", step=j)
        row = row / nrm[:, None]
        log_s = log_s + np.log(nrm)

    lead_hat = row @ u0
    log_lead = np.log(lead_hat) + log_s
    # lead·ψ̃_j/|e_i L_{n,j+1}| = (rowhat_1·u0)·exp(S_1 − S_{j+1})·coeff_j
    terms = lead_hat[:, None] * np.exp(log_s[:, None] - scale_at) * coeff
    return log_lead, np.cumsum(terms, axis=1)


def _truncation_block(
    seed: int, start: int, stop: int,
    env: EnvDistribution, spec: SpectralSolution, i: int, n: int, u0: np.ndarray, depths: Tuple[int, ...]
) -> np.ndarray:
    out = np.empty((stop - start, len(depths)))
    x0 = unit_direction(env.p, i)
    log_r0 = math.log(spec.r_one(x0))
    for lo in range(start, stop, BATCH):
        hi = min(stop, lo + BATCH)
        batch = _sample_batch(env, spec, x0, _uniforms(seed, lo, hi, n))
        log_lead, sums = _xi_partial_sums(env, batch.indices, i, u0)
        base = np.exp(
            log_lead + batch.log_normalizer - batch.log_density - n * spec.log_lambda - log_r0
        )
        for c, depth in enumerate(depths):
            truncated = sums[:, depth - 1] if depth > 0 else 0.0
            out[lo - start:hi - start, c] = base / (1.0 + truncated)
    return out


def truncated_representation(
    env: EnvDistribution,
    spec: SpectralSolution,
    i: int,
    n: int,
    depths: Sequence[int],
    reps: int,
    seed: int,
    s=None,
    workers: Optional[int] = None
) -> Dict[int, Estimate]:
    """
    K_n(N; s) 的 Monte Carlo 估計（各 N 共用同一批路徑，估計值隨 N 不增）

    N = n 時 λ^n(1)·r_1(e_i)·K_n(n; s) 與 is_survival 逐路徑相同。
    """
    _check_spec(env, spec)
    _require_theta_one(spec)
    unit_direction(env.p, i)
    depths = tuple(sorted(set(int(d) for d in depths)))
    if not depths or depths[0] < 0 or depths[-1] > n:
        raise InputError(f"❌ 截斷深度必須在 [0, {n}] 之內，收到: {depths}")
    s = np.zeros(env.p) if s is None else np.asarray(s, dtype=float)
    u0 = 1.0 - s
    if s.shape != (env.p,) or not u0.any():
        raise InputError("❌ s 必須是 [0,1]^p 中不等於 1 的向量")
    values = run_replicas(_truncation_block, reps, seed, (env, spec, i, n, u0, depths), workers)
    return {depth: summarize(values[:, c]) for c, depth in enumerate(depths)}


# ============ Lyapunov 用的抽樣器 ============

@dataclass(frozen=True, eq=False)
class TiltedSampler:
    """θ 傾斜測度下的環境序列來源（供 matprod.lyapunov 使用）"""
    env: EnvDistribution
    spec: SpectralSolution
    x0: Optional[np.ndarray] = None

    def __call__(self, rng: np.random.Generator, n: int) -> np.ndarray:
        x0 = unit_direction(self.env.p, 0) if self.x0 is None else self.x0
        return np.asarray(sample_path(self.env, self.spec, x0, n, rng).atom_indices, dtype=np.int64)
