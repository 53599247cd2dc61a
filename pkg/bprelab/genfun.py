"""
bprelab - 生成函數引擎
F_{0,n} / F_{n,0} 合成、精確存活機率（窮舉環境序列）、ψ 函數、
迭代恆等式、反序表示式與 Furstenberg–Kesten 比值界

所有合成都在補空間 u = 1 − s 中進行：u ↦ 1 − F(1 − u)，
因此極小的存活機率仍保有完整的相對精度。
"""

import itertools
import math
import os
from dataclasses import dataclass
from typing import Iterator, List, Literal, Sequence, Tuple

import numpy as np

from .errors import (
    BudgetExceededError,
    DegenerateInputError,
    DomainError,
    InputError,
    NotApplicableError,
    NumericalError,
)
from .matprod import products, scaled_product
from .model import EnvAtom, EnvDistribution

DEFAULT_BUDGET = 10_000_000
DEBUG_ENV = "BPRELAB_DEBUG"

# 呼叫端在 s = 1 附近的夾取距離
S_CLAMP = 1e-9

# 向量化列舉區塊的最大列數
CHUNK_ROWS = 1 << 16

Order = Literal["forward", "backward"]


def debug_enabled() -> bool:
    return os.environ.get(DEBUG_ENV, "").strip().lower() in {"1", "true", "yes", "on"}


# ============ 資料結構 ============

@dataclass(frozen=True)
class EnvSequence:
    """環境原子索引序列 (e_1, ..., e_n)"""
    atom_indices: Tuple[int, ...]

    @classmethod
    def of(cls, env: EnvDistribution, indices: Sequence[int]) -> "EnvSequence":
        seq = cls(atom_indices=tuple(int(k) for k in indices))
        seq.validate(env)
        return seq

    def validate(self, env: EnvDistribution) -> None:
        for position, k in enumerate(self.atom_indices):
            if k < 0 or k >= env.size:
                raise InputError(f"❌ 環境序列第 {position} 項索引 {k} 超出範圍 [0, {env.size})")

    def __len__(self) -> int:
        return len(self.atom_indices)


@dataclass(frozen=True)
class SupportGap:
    """A(s) = {j : s^j < 1}，Δ(s) = min_{j∈A(s)} (1 − s^j)"""
    active_set: Tuple[int, ...]
    delta: float


@dataclass(frozen=True)
class IdentityCheck:
    lhs: float
    rhs: float
    residual: float
    leading: float
    psi_terms: Tuple[float, ...]


@dataclass(frozen=True)
class RepresentationCheck:
    """1 − F^i_{n,0}(s) = |e_i L_{n,1}(1−s)| · Ξ_n(s)"""
    direct: float
    represented: float
    xi: float
    residual: float


@dataclass(frozen=True)
class PsiBoundCheck:
    value: float
    bound: float
    passed: bool


@dataclass(frozen=True)
class FkBounds:
    lower: float
    ratio: float
    upper: float

    @property
    def passed(self) -> bool:
        return self.lower * (1.0 - 1e-12) <= self.ratio <= self.upper * (1.0 + 1e-12)


@dataclass(frozen=True)
class ExchangeabilityCheck:
    forward: float
    backward: float

    @property
    def difference(self) -> float:
        return abs(self.forward - self.backward)


# ============ 輔助 ============

def _indices(env: EnvDistribution, seq) -> Tuple[int, ...]:
    if isinstance(seq, EnvSequence):
        seq.validate(env)
        return seq.atom_indices
    return EnvSequence.of(env, seq).atom_indices


def _vector(s, p: int) -> np.ndarray:
    vec = np.asarray(s, dtype=float)
    if vec.ndim != 1 or vec.shape[0] != p:
        raise InputError(f"❌ s 的維度應為 {p}，收到形狀 {vec.shape}")
    if np.any(vec < 0.0) or np.any(vec > 1.0) or np.any(np.isnan(vec)):
        raise InputError("❌ s 必須在 [0,1]^p 之內")
    return vec


def _type_index(i: int, p: int) -> int:
    if not 0 <= i < p:
        raise InputError(f"❌ 類型索引 {i} 超出範圍 [0, {p})")
    return i


def support_gap(s) -> SupportGap:
    vec = np.asarray(s, dtype=float)
    active = tuple(int(j) for j in np.flatnonzero(vec < 1.0))
    if not active:
        raise DomainError("❌ s = 1 時 A(s) 為空，Δ(s) 無定義")
    return SupportGap(active_set=active, delta=float(np.min(1.0 - vec[list(active)])))


def clamp_away_from_one(s) -> np.ndarray:
    """把 max s^j 限制在 1 − 1e-9 以下"""
    return np.minimum(np.asarray(s, dtype=float), 1.0 - S_CLAMP)


# ============ 合成 ============

def compose_complement(env: EnvDistribution, seq, s, order: Order = "forward") -> np.ndarray:
    """
    回傳 1 − F_{0,n}(s)（forward）或 1 − F_{n,0}(s)（backward）

    forward 先作用 F_n，backward 先作用 F_1。
    """
    idx = _indices(env, seq)
    u = 1.0 - _vector(s, env.p)
    if order == "forward":
        steps = reversed(idx)
    elif order == "backward":
        steps = iter(idx)
    else:
        raise InputError(f"❌ 未知的合成順序: {order}")
    for k in steps:
        u = env.atoms[k].pgf_complement_many(u[None, :])[0]
    return u


def compose(env: EnvDistribution, seq, s, order: Order = "forward") -> np.ndarray:
    """F_{0,n}(s) = F_1∘···∘F_n(s) 或 F_{n,0}(s) = F_n∘···∘F_1(s)；n = 0 回傳 s"""
    idx = _indices(env, seq)
    vec = _vector(s, env.p)
    if not idx:
        return vec.copy()
    return 1.0 - compose_complement(env, idx, vec, order)


# ============ 精確列舉 ============

def check_budget(env: EnvDistribution, n: int, budget: int) -> None:
    if n < 0:
        raise InputError(f"❌ n 必須非負，收到: {n}")
    count = env.size ** n
    if count > budget:
        raise BudgetExceededError(
            f"❌ 需列舉 {count} 條環境序列，超過預算 {budget}；請改用 IS 估計 (tilt.is_survival)"
        )


def enumerate_sequences(
    env: EnvDistribution, n: int, budget: int = DEFAULT_BUDGET
) -> Iterator[Tuple[Tuple[int, ...], float]]:
    """依字典序列出所有長度 n 的序列與其機率（依序相乘）"""
    check_budget(env, n, budget)
    for seq in itertools.product(range(env.size), repeat=n):
        weight = 1.0
        for k in seq:
            weight *= float(env.probs[k])
        yield seq, weight


def _inner_block(env: EnvDistribution, depth: int, u0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """所有長度 depth 的作用序列之補值與權重（向量化）"""
    U = u0[None, :]
    W = np.ones(1)
    for _ in range(depth):
        U = np.concatenate([atom.pgf_complement_many(U) for atom in env.atoms], axis=0)
        W = np.concatenate([prob * W for prob in env.probs])
    return U, W


def _enumeration_terms(env: EnvDistribution, i: int, n: int, u0: np.ndarray) -> Iterator[float]:
    """逐條序列的 w(e)·(1 − F^i_e(s))，依序列字典序產生"""
    depth = n
    while depth > 0 and env.size ** depth > CHUNK_ROWS:
        depth -= 1
    inner_U, inner_W = _inner_block(env, depth, u0)

    # 前綴 (e_1..e_{n−depth}) 依字典序；內層列已按 (e_{n−depth+1}..e_n) 字典序排列
    for prefix in itertools.product(range(env.size), repeat=n - depth):
        weight = 1.0
        for k in prefix:
            weight *= float(env.probs[k])
        U = inner_U
        for k in reversed(prefix):
            U = env.atoms[k].pgf_complement_many(U)
        yield from (weight * inner_W * U[:, i]).tolist()


def exact_complement(
    env: EnvDistribution, i: int, n: int, s, budget: int = DEFAULT_BUDGET
) -> float:
    """E[1 − F^i_{0,n}(s)]，對所有 |atoms|^n 條序列求和"""
    i = _type_index(i, env.p)
    vec = _vector(s, env.p)
    check_budget(env, n, budget)
    u0 = 1.0 - vec
    if n == 0:
        return float(u0[i])
    return math.fsum(_enumeration_terms(env, i, n, u0))


def exact_survival(env: EnvDistribution, i: int, n: int, budget: int = DEFAULT_BUDGET) -> float:
    """P(|Z_n| > 0 | Z_0 = e_i) = E[1 − F^i_{0,n}(0)]"""
    return exact_complement(env, i, n, np.zeros(env.p), budget)


def exact_pgf(env: EnvDistribution, i: int, n: int, s, budget: int = DEFAULT_BUDGET) -> float:
    """E[s^{Z_n} | Z_0 = e_i]"""
    vec = _vector(s, env.p)
    if n == 0:
        return float(vec[_type_index(i, env.p)])
    return 1.0 - exact_complement(env, i, n, vec, budget)


def check_exchangeability(
    env: EnvDistribution, i: int, n: int, s, budget: int = DEFAULT_BUDGET
) -> ExchangeabilityCheck:
    """逐條序列比較 E[1 − F^i_{0,n}(s)] 與 E[1 − F^i_{n,0}(s)]"""
    i = _type_index(i, env.p)
    vec = _vector(s, env.p)
    forward: List[float] = []
    backward: List[float] = []
    for seq, weight in enumerate_sequences(env, n, budget):
        forward.append(weight * compose_complement(env, seq, vec, "forward")[i])
        backward.append(weight * compose_complement(env, seq, vec, "backward")[i])
    return ExchangeabilityCheck(forward=math.fsum(forward), backward=math.fsum(backward))


# ============ ψ 函數 ============

def _psi_colsums(atom: EnvAtom, c: np.ndarray, u: np.ndarray, step=None) -> float:
    """
    ψ 只透過 a 的欄和 c 依賴於 a：|a v| = c·v，|a| = Σ c

    u = 1 − s；回傳 ψ_{f,a}(s) = |a|/(c·(1 − f(s))) − |a|/(c·M u)
    """
    total = float(c.sum())
    if total <= 0.0:
        raise DegenerateInputError("❌ a 為零矩陣", step=step)
    g = atom.pgf_complement_many(u[None, :])[0]
    den_f = float(c @ g)
    den_m = float(c @ (atom.mean_matrix @ u))
    if den_m <= 0.0 or den_f <= 0.0:
        raise DegenerateInputError(
            f"❌ ψ 的分母為零 (|a(1−f(s))| = {den_f}, |a M (1−s)| = {den_m})", step=step
        )
    value = total * (den_m - den_f) / (den_f * den_m)
    if debug_enabled() and value < -1e-12:
        raise NumericalError(f"❌ ψ = {value} < 0（違反母函數凸性）")
    return value


def psi(atom: EnvAtom, a, s) -> float:
    """ψ_{f,a}(s) = |a|/|a(1−f(s))| − |a|/|a m (1−s)|"""
    p = atom.p
    a = np.asarray(a, dtype=float)
    if a.shape != (p, p):
        raise InputError(f"❌ a 的形狀應為 ({p}, {p})，收到 {a.shape}")
    if np.any(a < 0.0):
        raise InputError("❌ a 必須非負")
    vec = _vector(s, p)
    if np.all(vec >= 1.0):
        raise DomainError("❌ ψ 在 s = 1 無定義；請先夾取到 1 − 1e-9 以下")
    return _psi_colsums(atom, a.sum(axis=0), 1.0 - vec)


def psi_bound(atom: EnvAtom) -> float:
    """γ·p²·T"""
    if atom.t_value == 0.0:
        return 0.0
    return atom.gamma * atom.p ** 2 * atom.t_value


def check_psi_bound(atom: EnvAtom, a, s) -> PsiBoundCheck:
    value = psi(atom, a, s)
    bound = psi_bound(atom)
    return PsiBoundCheck(value=value, bound=bound, passed=-1e-12 <= value <= bound + 1e-12)


# ============ 迭代恆等式與反序表示式 ============

def check_iteration_identity(env: EnvDistribution, seq, i: int, s) -> IdentityCheck:
    """
    1/(1 − F^i_{0,n}(s)) = 1/|a_i R_n(1−s)| + Σ_k ψ_{F_k, a_i R_{k−1}}(F_{k,n}(s)) / |a_i R_{k−1}|

    a_i R 以 R 的第 i 列表示。
    """
    idx = _indices(env, seq)
    i = _type_index(i, env.p)
    vec = _vector(s, env.p)
    support_gap(vec)
    n = len(idx)

    # u[k] = 1 − F_{k,n}(s)
    u: List[np.ndarray] = [np.empty(0)] * (n + 1)
    u[n] = 1.0 - vec
    for k in range(n, 0, -1):
        u[k - 1] = env.atoms[idx[k - 1]].pgf_complement_many(u[k][None, :])[0]
    if u[0][i] <= 0.0:
        raise DegenerateInputError("❌ 1 − F^i_{0,n}(s) = 0", step=0)
    lhs = 1.0 / u[0][i]

    path = products(env, idx)
    row_n = path.right_row(n, i)
    den = float(row_n @ u[n])
    if den <= 0.0:
        raise DegenerateInputError("❌ |a_i R_n(1−s)| = 0", step=n)
    leading = 1.0 / den

    terms = []
    for k in range(1, n + 1):
        row = path.right_row(k - 1, i)
        norm_a = float(row.sum())
        if norm_a <= 0.0:
            raise DegenerateInputError(f"❌ |a_i R_{k - 1}| = 0", step=k)
        terms.append(_psi_colsums(env.atoms[idx[k - 1]], row, u[k], step=k) / norm_a)

    rhs = math.fsum([leading] + terms)
    return IdentityCheck(
        lhs=lhs,
        rhs=rhs,
        residual=abs(lhs - rhs) / abs(lhs),
        leading=leading,
        psi_terms=tuple(terms)
    )


def xi_terms(env: EnvDistribution, idx: Sequence[int], i: int, u0: np.ndarray) -> Tuple[np.ndarray, List[float], List[np.ndarray]]:
    """
    反序展開的組成部分

    Returns:
        (e_i L_{n,1}, [ψ_{F_j, e_i L_{n,j+1}}(F_{j−1,0}(s)) / |e_i L_{n,j+1}|]_{j=1..n}, [1 − F_{j,0}(s)]_{j=0..n})
    """
    n = len(idx)
    v = [u0]
    for k in idx:
        v.append(env.atoms[k].pgf_complement_many(v[-1][None, :])[0])

    rows: List[np.ndarray] = [np.empty(0)] * (n + 2)
    rows[n + 1] = np.eye(env.p)[i]
    for j in range(n, 0, -1):
        rows[j] = rows[j + 1] @ env.atoms[idx[j - 1]].mean_matrix

    terms = []
    for j in range(1, n + 1):
        row = rows[j + 1]
        norm_row = float(row.sum())
        if norm_row <= 0.0:
            raise DegenerateInputError(f"❌ |e_i L_{{n,{j + 1}}}| = 0", step=j)
        terms.append(_psi_colsums(env.atoms[idx[j - 1]], row, v[j - 1], step=j) / norm_row)
    return rows[1], terms, v


def representation_check(env: EnvDistribution, seq, i: int, s) -> RepresentationCheck:
    """沿單一路徑驗證 1 − F^i_{n,0}(s) = |e_i L_{n,1}(1−s)| · Ξ_n(s)"""
    idx = _indices(env, seq)
    i = _type_index(i, env.p)
    vec = _vector(s, env.p)
    support_gap(vec)
    u0 = 1.0 - vec

    row, terms, v = xi_terms(env, idx, i, u0)
    lead = float(row @ u0)
    if lead <= 0.0:
        raise DegenerateInputError("❌ |e_i L_{n,1}(1−s)| = 0", step=len(idx))
    xi = 1.0 / (1.0 + lead * math.fsum(terms))
    direct = float(v[-1][i])
    represented = lead * xi
    return RepresentationCheck(
        direct=direct,
        represented=represented,
        xi=xi,
        residual=abs(direct - represented) / direct if direct > 0.0 else abs(represented)
    )


# ============ Furstenberg–Kesten 界 ============

def fk_bounds(env: EnvDistribution, seq, i: int, s) -> FkBounds:
    """Δ(s)/(p²γ²) ≤ |e_i L_{n,1}(1−s)| / |L_{n,1} e_i| ≤ γ²p²"""
    idx = _indices(env, seq)
    i = _type_index(i, env.p)
    vec = _vector(s, env.p)
    gap = support_gap(vec)
    gamma = env.gamma
    if not math.isfinite(gamma):
        raise NotApplicableError("⚠️ γ = ∞（平均矩陣含零元素），fk 界不適用")

    p = env.p
    mat, _ = scaled_product([env.atoms[k].mean_matrix for k in idx], p, left=True)
    column = float(mat[:, i].sum())
    if column <= 0.0:
        raise DegenerateInputError("❌ |L_{n,1} e_i| = 0", step=len(idx))
    ratio = float(mat[i] @ (1.0 - vec)) / column
    return FkBounds(
        lower=gap.delta / (p ** 2 * gamma ** 2),
        ratio=ratio,
        upper=gamma ** 2 * p ** 2
    )
