"""
bprelab - 環境模型
有限支撐後代分布、環境原子（M、B(k)、T、γ）、環境分布與 H0–H4 條件檢查
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from .errors import InputError
from .matprod import entry_ratio, op_norm
from .schemas import PROB_TOL, ConditionReport, ConditionResult, EnvironmentFile

# log1p(-1) = -inf；以有限下限取代，避免 0·(-inf) = nan
LOG_FLOOR = -1e300

DEFAULT_EPSILON = 0.5


def _as_vector(s: Union[Sequence[float], np.ndarray], p: int, name: str = "s") -> np.ndarray:
    vec = np.asarray(s, dtype=float)
    if vec.ndim != 1 or vec.shape[0] != p:
        raise InputError(f"❌ {name} 的維度應為 {p}，收到形狀 {vec.shape}")
    return vec


def _as_batch(s: np.ndarray, p: int, name: str = "s") -> np.ndarray:
    batch = np.asarray(s, dtype=float)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[1] != p:
        raise InputError(f"❌ {name} 的形狀應為 (N, {p})，收到 {batch.shape}")
    return batch


def _check_unit_cube(vec: np.ndarray, name: str = "s") -> None:
    if np.any(vec < 0.0) or np.any(vec > 1.0) or np.any(np.isnan(vec)):
        raise InputError(f"❌ {name} 必須在 [0,1]^p 之內")


# ============ 後代分布 ============

@dataclass(frozen=True, eq=False)
class OffspringLaw:
    """
    單一親代類型的有限支撐後代分布

    points[k] 為支撐點 z（長度 p 的非負整數向量），probs[k] 為其機率。
    """
    points: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=np.int64)
        probs = np.array(self.probs, dtype=float)
        if points.ndim != 2 or points.shape[0] == 0:
            raise InputError("❌ 後代分布的支撐集為空")
        if probs.shape != (points.shape[0],):
            raise InputError(f"❌ 支撐點數 {points.shape[0]} 與機率數 {probs.shape} 不符")
        if np.any(points < 0):
            raise InputError("❌ 後代數量必須非負")
        if np.any(probs <= 0.0) or np.any(probs > 1.0):
            raise InputError("❌ 支撐點機率必須在 (0, 1] 之內")
        total = math.fsum(probs)
        if abs(total - 1.0) > PROB_TOL:
            raise InputError(f"❌ 後代分布機率總和為 {total!r}，應為 1")
        if np.unique(points, axis=0).shape[0] != points.shape[0]:
            raise InputError("❌ 後代分布含重複的支撐點")

        cumulative = np.cumsum(probs)
        cumulative[-1] = 1.0
        for arr in (points, probs, cumulative):
            arr.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "cumulative", cumulative)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[Sequence[int], float]]) -> "OffspringLaw":
        """由 [(z, prob), ...] 建立"""
        pairs = list(pairs)
        if not pairs:
            raise InputError("❌ 後代分布的支撐集為空")
        return cls(points=[list(z) for z, _ in pairs], probs=[w for _, w in pairs])

    @property
    def p(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def mean(self) -> np.ndarray:
        """E[X]"""
        return self.probs @ self.points

    def factorial_moments(self) -> np.ndarray:
        """二階階乘動差 E[X^j X^l] − δ_{jl} E[X^j]"""
        z = self.points.astype(float)
        second = (z.T * self.probs) @ z
        return second - np.diag(self.mean())

    def pgf(self, s: Sequence[float]) -> float:
        """f(s) = Σ p(z) Π_j (s^j)^{z^j}，0^0 = 1"""
        vec = _as_vector(s, self.p)
        _check_unit_cube(vec)
        return float(self.pgf_many(vec[None, :])[0])

    def pgf_many(self, S: np.ndarray) -> np.ndarray:
        """批次求值，S 形狀 (N, p)"""
        S = _as_batch(S, self.p)
        terms = np.prod(S[:, None, :] ** self.points[None, :, :], axis=2)
        return terms @ self.probs

    def pgf_complement_many(self, U: np.ndarray) -> np.ndarray:
        """1 − f(1 − u)，於補空間計算以保留小量的相對精度"""
        U = _as_batch(U, self.p, "u")
        with np.errstate(divide="ignore"):
            logs = np.log1p(-U)
        logs = np.maximum(logs, LOG_FLOOR)
        vals = -np.expm1(logs @ self.points.T.astype(float))
        return vals @ self.probs

    def pgf_complement(self, u: Sequence[float]) -> float:
        vec = _as_vector(u, self.p, "u")
        _check_unit_cube(vec, "u")
        return float(self.pgf_complement_many(vec[None, :])[0])

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """count 個獨立個體的後代總和（反 CDF 抽樣）"""
        if count == 0:
            return np.zeros(self.p, dtype=np.int64)
        draws = np.searchsorted(self.cumulative, rng.random(count), side="right")
        counts = np.bincount(draws, minlength=self.size)
        return counts @ self.points


def pgf_eval(law: OffspringLaw, s: Sequence[float]) -> float:
    """單一後代分布的機率母函數值"""
    return law.pgf(s)


# ============ 環境原子 ============

@dataclass(frozen=True, eq=False)
class EnvAtom:
    """p 個後代分布（每個親代類型一個）與其導出量"""
    laws: Tuple[OffspringLaw, ...]
    mean_matrix: np.ndarray
    hessians: np.ndarray
    t_value: float
    gamma: float

    @property
    def p(self) -> int:
        return len(self.laws)

    def pgf(self, s: Sequence[float]) -> np.ndarray:
        """F(s) = (f^1(s), ..., f^p(s))"""
        vec = _as_vector(s, self.p)
        _check_unit_cube(vec)
        return self.pgf_many(vec[None, :])[0]

    def pgf_many(self, S: np.ndarray) -> np.ndarray:
        S = _as_batch(S, self.p)
        return np.stack([law.pgf_many(S) for law in self.laws], axis=1)

    def pgf_complement(self, u: Sequence[float]) -> np.ndarray:
        """1 − F(1 − u)"""
        vec = _as_vector(u, self.p, "u")
        _check_unit_cube(vec, "u")
        return self.pgf_complement_many(vec[None, :])[0]

    def pgf_complement_many(self, U: np.ndarray) -> np.ndarray:
        U = _as_batch(U, self.p, "u")
        return np.stack([law.pgf_complement_many(U) for law in self.laws], axis=1)


def derive_moments(laws: Sequence[OffspringLaw]) -> EnvAtom:
    """
    由 p 個後代分布導出 M、B(k)、T 與 γ

    M^{ij} = law i 的第 j 座標期望值；B(k) 為 law k 的二階階乘動差矩陣；
    T = Σ_k ||B(k)|| / ||M||²。
    """
    laws = tuple(laws)
    if not laws:
        raise InputError("❌ 環境原子至少需要一個後代分布")
    p = len(laws)
    for j, law in enumerate(laws):
        if law.p != p:
            raise InputError(f"❌ 第 {j} 個後代分布的維度為 {law.p}，應為 {p}")

    mean_matrix = np.stack([law.mean() for law in laws])
    hessians = np.stack([law.factorial_moments() for law in laws])
    m_norm = op_norm(mean_matrix)
    b_sum = math.fsum(op_norm(b) for b in hessians)
    if m_norm > 0.0:
        t_value = b_sum / m_norm ** 2
    else:
        t_value = 0.0 if b_sum == 0.0 else math.inf

    mean_matrix.setflags(write=False)
    hessians.setflags(write=False)
    return EnvAtom(
        laws=laws,
        mean_matrix=mean_matrix,
        hessians=hessians,
        t_value=t_value,
        gamma=entry_ratio(mean_matrix)
    )


# ============ 環境分布 ============

@dataclass(frozen=True, eq=False)
class EnvDistribution:
    """有限個環境原子的混合分布"""
    atoms: Tuple[EnvAtom, ...]
    probs: np.ndarray

    def __post_init__(self):
        atoms = tuple(self.atoms)
        probs = np.array(self.probs, dtype=float)
        if not atoms:
            raise InputError("❌ 環境分布至少需要一個原子")
        if probs.shape != (len(atoms),):
            raise InputError(f"❌ 原子數 {len(atoms)} 與機率數 {probs.shape} 不符")
        if np.any(probs <= 0.0):
            raise InputError("❌ 原子機率必須為正")
        total = math.fsum(probs)
        if abs(total - 1.0) > PROB_TOL:
            raise InputError(f"❌ 原子機率總和為 {total!r}，應為 1")
        p = atoms[0].p
        for a, atom in enumerate(atoms):
            if atom.p != p:
                raise InputError(f"❌ 原子 {a} 的類型數為 {atom.p}，應為 {p}")

        cumulative = np.cumsum(probs)
        cumulative[-1] = 1.0
        mean_matrices = np.stack([atom.mean_matrix for atom in atoms])
        for arr in (probs, cumulative, mean_matrices):
            arr.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "cumulative", cumulative)
        object.__setattr__(self, "mean_matrices", mean_matrices)

    @classmethod
    def from_atoms(cls, weighted: Sequence[Tuple[EnvAtom, float]]) -> "EnvDistribution":
        return cls(atoms=tuple(a for a, _ in weighted), probs=[w for _, w in weighted])

    @classmethod
    def from_spec(cls, spec: EnvironmentFile) -> "EnvDistribution":
        atoms = []
        for atom in spec.atoms:
            laws = [OffspringLaw.from_pairs((pt.z, pt.p) for pt in law) for law in atom.laws]
            atoms.append(derive_moments(laws))
        return cls(atoms=tuple(atoms), probs=[atom.prob for atom in spec.atoms])

    @property
    def p(self) -> int:
        return self.atoms[0].p

    @property
    def size(self) -> int:
        return len(self.atoms)

    @property
    def gamma(self) -> float:
        """全域 γ = 各原子元素比的最大值"""
        return max(atom.gamma for atom in self.atoms)

    @property
    def t_values(self) -> np.ndarray:
        return np.array([atom.t_value for atom in self.atoms])

    def expected_mean_matrix(self) -> np.ndarray:
        """E[M]"""
        return np.tensordot(self.probs, self.mean_matrices, axes=1)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """i.i.d. 抽取 n 個原子索引"""
        if n == 0:
            return np.zeros(0, dtype=np.int64)
        return np.searchsorted(self.cumulative, rng.random(n), side="right").astype(np.int64)


def build_environment(
    atoms: Sequence[Tuple[Sequence[Sequence[Tuple[Sequence[int], float]]], float]]
) -> EnvDistribution:
    """
    由巢狀串列建立環境

    Args:
        atoms: [(每個類型的 [(z, prob), ...], 原子機率), ...]
    """
    weighted = []
    for laws, prob in atoms:
        weighted.append((derive_moments([OffspringLaw.from_pairs(law) for law in laws]), prob))
    return EnvDistribution.from_atoms(weighted)


def format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(part) for part in err["loc"]) or "<root>"
        lines.append(f"  - {path}: {err['msg']}")
    return "\n".join(lines)


def parse_environment(data: dict) -> EnvDistribution:
    """驗證 JSON 物件並建立 EnvDistribution"""
    try:
        spec = EnvironmentFile.model_validate(data)
    except ValidationError as e:
        raise InputError("❌ 環境檔驗證失敗:\n" + format_validation_error(e)) from e
    return EnvDistribution.from_spec(spec)


def load_environment(path: Union[str, Path]) -> EnvDistribution:
    """讀取環境 JSON 檔"""
    path = Path(path)
    if not path.exists():
        raise InputError(f"❌ 找不到環境檔: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InputError(f"❌ 環境檔不是合法的 JSON ({path}): {e}") from e
    return parse_environment(data)


def environment_to_dict(env: EnvDistribution) -> dict:
    """轉回環境檔格式"""
    atoms = []
    for atom, prob in zip(env.atoms, env.probs):
        laws = [
            [{"z": [int(c) for c in z], "p": float(w)} for z, w in zip(law.points, law.probs)]
            for law in atom.laws
        ]
        atoms.append({"prob": float(prob), "laws": laws})
    return {"p": env.p, "atoms": atoms}


# ============ 條件檢查 ============

def check_conditions(env: EnvDistribution, epsilon: float = DEFAULT_EPSILON) -> ConditionReport:
    """
    檢查 H0–H4

    H2 只驗證充分條件（所有平均矩陣嚴格為正）；
    有限支撐下 Θ = (0, ∞)，H1 恆成立。
    """
    if epsilon <= 0.0:
        raise InputError(f"❌ ε 必須為正，收到: {epsilon}")

    zero_norm = [a for a, atom in enumerate(env.atoms) if op_norm(atom.mean_matrix) == 0.0]
    h0 = ConditionResult(
        passed=not zero_norm,
        note="" if not zero_norm else f"原子 {zero_norm} 的 ||M|| = 0"
    )
    h1 = ConditionResult(passed=True, note="有限支撐：Θ = (0, ∞)")

    non_positive = [a for a, atom in enumerate(env.atoms) if atom.mean_matrix.min() <= 0.0]
    h2 = ConditionResult(
        passed=not non_positive,
        note="僅檢查充分條件：所有 M 嚴格為正" if not non_positive
        else f"原子 {non_positive} 的 M 含零元素（充分條件不成立）"
    )

    gamma: Optional[float] = env.gamma
    if math.isfinite(gamma):
        h3 = ConditionResult(passed=True, note=f"γ = {gamma:.6g}")
    else:
        h3 = ConditionResult(passed=False, note=f"原子 {non_positive} 的最小元素為 0")
        gamma = None

    zero_t = [a for a, atom in enumerate(env.atoms) if not atom.t_value > 0.0]
    infinite_t = [a for a, atom in enumerate(env.atoms) if math.isinf(atom.t_value)]
    h4_moment = None
    if zero_t:
        h4 = ConditionResult(passed=False, note=f"原子 {zero_t} 的 T = 0（線性母函數），log T 發散")
    elif infinite_t:
        h4 = ConditionResult(passed=False, note=f"原子 {infinite_t} 的 T = ∞")
    else:
        terms = [
            prob * op_norm(atom.mean_matrix) * abs(math.log(atom.t_value)) ** (1.0 + epsilon)
            for atom, prob in zip(env.atoms, env.probs)
        ]
        h4_moment = math.fsum(terms)
        h4 = ConditionResult(passed=True, note=f"E[||M|| |log T|^(1+ε)] = {h4_moment:.6g}")

    return ConditionReport(
        h0=h0, h1=h1, h2=h2, h2_sufficient_only=True,
        h3=h3, gamma=gamma, h4=h4, h4_moment=h4_moment,
        epsilon_used=epsilon
    )
