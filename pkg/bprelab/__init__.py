"""
bprelab - 隨機環境下多類型分支過程的數值實驗室
  模型：環境原子、機率母函數、H0–H4 條件
  模擬：族群前向演化與樸素 Monte Carlo
  母函數：合成、精確列舉、ψ 函數與迭代恆等式
  矩陣乘積：範數、Hennion 秩一分解、Lyapunov 指數
  譜解：轉移算子 P_θ 的 λ(θ)、r_θ、l_θ
  傾斜：θ 傾斜環境抽樣與重要性抽樣存活估計
"""

from .errors import (
    BpreLabError,
    InputError,
    DomainError,
    DegenerateInputError,
    NumericalError,
    ConvergenceError,
    DiscretizationError,
    PopulationOverflowError,
    NotApplicableError,
    BudgetExceededError
)
from .replicas import Estimate, replica_rng, run_replicas
from .model import (
    OffspringLaw,
    EnvAtom,
    EnvDistribution,
    build_environment,
    parse_environment,
    load_environment,
    check_conditions,
    pgf_eval
)
from .simulate import (
    PopulationState,
    Trajectory,
    step,
    run,
    mc_survival,
    conditional_empirical
)
from .genfun import (
    EnvSequence,
    compose,
    compose_complement,
    exact_pgf,
    exact_survival,
    psi,
    psi_bound,
    check_iteration_identity,
    representation_check,
    fk_bounds
)
from .matprod import (
    MatrixPath,
    products,
    norms,
    hennion_decompose,
    lyapunov,
    AmbientSampler
)
from .spectral import (
    SimplexGrid,
    SpectralSolution,
    solve,
    lambda_prime,
    lambda_one_closed_form,
    lambda_subadditive_mc,
    subcriticality_check
)
from .tilt import (
    TiltedPath,
    TiltedSampler,
    weight,
    sample_path,
    sample_paths,
    density,
    is_survival,
    psi_series,
    truncated_representation
)
from .schemas import (
    EnvironmentFile,
    ConditionReport,
    DiagnosticsReport,
    ExperimentConfig,
    SurvivalRow,
    PhiRow
)
from .lab import (
    LabDefaults,
    cmd_check,
    cmd_survival,
    fit_c,
    cmd_phi,
    cmd_spectral,
    cmd_tilt_sample,
    cmd_diagnostics
)

__all__ = [
    # 錯誤
    "BpreLabError",
    "InputError",
    "DomainError",
    "DegenerateInputError",
    "NumericalError",
    "ConvergenceError",
    "DiscretizationError",
    "PopulationOverflowError",
    "NotApplicableError",
    "BudgetExceededError",
    # 模型
    "OffspringLaw",
    "EnvAtom",
    "EnvDistribution",
    "build_environment",
    "parse_environment",
    "load_environment",
    "check_conditions",
    "pgf_eval",
    # 模擬
    "PopulationState",
    "Trajectory",
    "step",
    "run",
    "mc_survival",
    "conditional_empirical",
    # 母函數
    "EnvSequence",
    "compose",
    "compose_complement",
    "exact_pgf",
    "exact_survival",
    "psi",
    "psi_bound",
    "check_iteration_identity",
    "representation_check",
    "fk_bounds",
    # 矩陣乘積
    "MatrixPath",
    "products",
    "norms",
    "hennion_decompose",
    "lyapunov",
    "AmbientSampler",
    # 譜解
    "SimplexGrid",
    "SpectralSolution",
    "solve",
    "lambda_prime",
    "lambda_one_closed_form",
    "lambda_subadditive_mc",
    "subcriticality_check",
    # 傾斜
    "TiltedPath",
    "TiltedSampler",
    "weight",
    "sample_path",
    "sample_paths",
    "density",
    "is_survival",
    "psi_series",
    "truncated_representation",
    # 報告與設定
    "Estimate",
    "replica_rng",
    "run_replicas",
    "EnvironmentFile",
    "ConditionReport",
    "DiagnosticsReport",
    "ExperimentConfig",
    "SurvivalRow",
    "PhiRow",
    # 實驗
    "LabDefaults",
    "cmd_check",
    "cmd_survival",
    "fit_c",
    "cmd_phi",
    "cmd_spectral",
    "cmd_tilt_sample",
    "cmd_diagnostics"
]

__version__ = "1.0.0"
