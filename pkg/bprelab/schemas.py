"""
bprelab - Pydantic Schemas
環境檔 JSON、實驗設定、條件報告與診斷報告的資料模型
"""

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

PROB_TOL = 1e-12

STOCHASTIC_COMMANDS = {"survival", "phi", "tilt-sample", "diagnostics"}


# ============ 環境檔 ============

class SupportPoint(BaseModel):
    """後代分布的一個支撐點"""
    z: List[int] = Field(description="各類型的後代數量")
    p: float = Field(gt=0.0, le=1.0, description="機率")

    @field_validator("z")
    @classmethod
    def nonnegative_counts(cls, v: List[int]) -> List[int]:
        if any(c < 0 for c in v):
            raise ValueError(f"後代數量必須非負: {v}")
        return v


class AtomSpec(BaseModel):
    """環境分布的一個原子：p 個後代分布"""
    prob: float = Field(gt=0.0, le=1.0, description="原子的機率")
    laws: List[List[SupportPoint]] = Field(description="每個親代類型一個後代分布")


class EnvironmentFile(BaseModel):
    """
    環境檔格式
    {"p": int, "atoms": [{"prob": float, "laws": [[{"z": [...], "p": float}, ...] × p]}]}
    """
    p: int = Field(ge=1, description="類型數")
    atoms: List[AtomSpec] = Field(min_length=1, description="環境原子")

    @model_validator(mode="after")
    def check_structure(self) -> "EnvironmentFile":
        problems = []
        total = sum(atom.prob for atom in self.atoms)
        if abs(total - 1.0) > PROB_TOL:
            problems.append(f"atoms: 原子機率總和為 {total!r}，應為 1")
        for a, atom in enumerate(self.atoms):
            if len(atom.laws) != self.p:
                problems.append(f"atoms.{a}.laws: 需要 {self.p} 個後代分布，收到 {len(atom.laws)}")
                continue
            for j, law in enumerate(atom.laws):
                path = f"atoms.{a}.laws.{j}"
                if not law:
                    problems.append(f"{path}: 支撐集為空")
                    continue
                seen = set()
                for k, point in enumerate(law):
                    if len(point.z) != self.p:
                        problems.append(f"{path}.{k}.z: 長度應為 {self.p}，收到 {len(point.z)}")
                    key = tuple(point.z)
                    if key in seen:
                        problems.append(f"{path}.{k}.z: 重複的支撐點 {list(key)}")
                    seen.add(key)
                law_total = sum(point.p for point in law)
                if abs(law_total - 1.0) > PROB_TOL:
                    problems.append(f"{path}: 機率總和為 {law_total!r}，應為 1")
        if problems:
            raise ValueError("; ".join(problems))
        return self


# ============ 條件報告 ============

class ConditionResult(BaseModel):
    """單一條件的檢查結果"""
    passed: bool
    note: str = ""


class ConditionReport(BaseModel):
    """H0–H4 條件報告"""
    h0: ConditionResult = Field(description="所有原子 ||M|| > 0")
    h1: ConditionResult = Field(description="Θ 非空；有限支撐時 Θ = (0, ∞)")
    h2: ConditionResult = Field(description="強不可約性（僅檢查充分條件）")
    h2_sufficient_only: bool = Field(default=True, description="H2 只驗證了充分條件")
    h3: ConditionResult = Field(description="最大/最小元素比有界")
    gamma: Optional[float] = Field(default=None, description="全域 γ；H3 不成立時為 None")
    h4: ConditionResult = Field(description="E[||M|| |log T|^{1+ε}] < ∞")
    h4_moment: Optional[float] = Field(default=None, description="有限時的 E[||M|| |log T|^{1+ε}]")
    epsilon_used: float

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in (self.h0, self.h1, self.h2, self.h3, self.h4))

    def failures(self) -> List[str]:
        names = ("h0", "h1", "h2", "h3", "h4")
        return [name for name in names if not getattr(self, name).passed]


class SubcriticalityResult(BaseModel):
    """強次臨界檢查"""
    lambda_one: float = Field(description="λ(1)")
    lambda_prime_one: float = Field(description="Λ′(1)")
    strongly_subcritical: bool


# ============ 診斷報告 ============

class DiagnosticSection(BaseModel):
    """診斷報告的一個區段"""
    name: str
    status: Literal["pass", "fail", "not-applicable"]
    worst: Optional[float] = Field(default=None, description="最差情況的數值")
    checked: int = Field(default=0, description="檢查的案例數")
    detail: Dict[str, Any] = Field(default_factory=dict)


class DiagnosticsReport(BaseModel):
    """cmd_diagnostics 的輸出"""
    sections: List[DiagnosticSection]

    @property
    def all_passed(self) -> bool:
        return all(s.status != "fail" for s in self.sections)


# ============ 實驗設定 ============

class ExperimentConfig(BaseModel):
    """CLI 指令參數；在任何計算之前驗證"""
    command: Literal["check", "survival", "phi", "spectral", "tilt-sample", "diagnostics"]
    env_path: str
    seed: Optional[int] = Field(default=None, ge=0)
    n_values: List[int] = Field(default_factory=lambda: list(range(0, 61)))
    reps: int = Field(default=100_000, ge=1)
    theta: float = Field(default=1.0, gt=0.0)
    grid: Optional[int] = Field(default=None, ge=2, description="網格大小 K")
    tol: float = Field(default=1e-12, gt=0.0)
    out: Optional[str] = None
    type_index: int = Field(default=0, ge=0)
    s_vectors: List[List[float]] = Field(default_factory=list)
    window: int = Field(default=10, ge=1)
    exact_max_n: int = Field(default=10, ge=0)
    empirical_max_n: int = Field(default=3, ge=0)
    enumeration_budget: int = Field(default=10_000_000, ge=1)
    force: bool = False
    verbose: bool = True

    @field_validator("n_values")
    @classmethod
    def sorted_nonnegative(cls, v: List[int]) -> List[int]:
        if any(n < 0 for n in v):
            raise ValueError("n 必須非負")
        return sorted(set(v))

    @field_validator("s_vectors")
    @classmethod
    def unit_cube(cls, v: List[List[float]]) -> List[List[float]]:
        for s in v:
            if any(x < 0.0 or x > 1.0 for x in s):
                raise ValueError(f"s 必須在 [0,1]^p 之內: {s}")
            if s and all(x == 1.0 for x in s):
                raise ValueError("s 不可為 1 向量")
        return v

    @model_validator(mode="after")
    def seed_for_stochastic(self) -> "ExperimentConfig":
        if self.command in STOCHASTIC_COMMANDS and self.seed is None:
            raise ValueError(f"指令 {self.command} 需要 --seed")
        return self


# ============ CSV 列 ============

class SurvivalRow(BaseModel):
    """存活曲線的一列"""
    n: int
    p_n: float
    method: Literal["exact", "is"]
    std_error: float
    ratio: float = Field(description="P_n / λ^n(1)")
    log_excess: float = Field(description="log P_n − n·Λ(1)")
    lambda_one: float = Field(description="所用的 λ(1)")


class PhiRow(BaseModel):
    """條件機率母函數估計的一列"""
    s: str
    n: int
    method: Literal["exact", "is"]
    phi: float
    std_error: float
    phi_empirical: Optional[float] = None
    empirical_std_error: Optional[float] = None
