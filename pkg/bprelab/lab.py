"""
bprelab - 實驗室
條件檢查、存活曲線與 c^i 擬合、條件機率母函數 Φ_i、譜解輸出、
傾斜路徑抽樣與整合診斷報告；結果以 CSV / JSON 輸出
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import (
    BpreLabError,
    BudgetExceededError,
    DegenerateInputError,
    InputError,
    NotApplicableError,
)
from .genfun import (
    check_budget,
    check_exchangeability,
    check_iteration_identity,
    check_psi_bound,
    exact_complement,
    fk_bounds,
    psi_bound,
    representation_check,
)
from .matprod import (
    check_entry_ratio,
    check_h3_lower_bound,
    hennion_decompose,
    lyapunov,
)
from .model import DEFAULT_EPSILON, EnvDistribution, check_conditions, load_environment
from .replicas import Estimate, derive_seed, ratio_estimate, replica_rng
from .schemas import (
    ConditionReport,
    DiagnosticSection,
    DiagnosticsReport,
    ExperimentConfig,
    PhiRow,
    SubcriticalityResult,
    SurvivalRow,
)
from .simulate import conditional_empirical
from .spectral import (
    DEFAULT_GRID,
    DEFAULT_H,
    DEFAULT_MAX_ITER,
    MAX_P,
    SpectralSolution,
    lambda_prime,
    solve,
    subcriticality_check,
)
from .tilt import (
    TiltedSampler,
    check_consistency,
    check_total_mass,
    is_samples,
    is_survival,
    psi_series,
    sample_paths,
    unit_direction,
)

SURVIVAL_COLUMNS = ["n", "method", "p_n", "std_error", "ratio", "log_excess", "lambda_one"]
PHI_COLUMNS = ["s", "n", "method", "phi", "std_error", "phi_empirical", "empirical_std_error"]
FLOAT_FORMAT = "%.17g"


@dataclass
class LabDefaults:
    """診斷與實驗的預設規模"""
    epsilon: float = DEFAULT_EPSILON
    h: float = DEFAULT_H
    max_iter: int = DEFAULT_MAX_ITER
    identity_cases: int = 100
    identity_max_n: int = 10
    psi_samples: int = 10_000
    fk_samples: int = 10_000
    fk_max_n: int = 30
    exhaustive_max_n: int = 6
    exhaustive_budget: int = 100_000
    hennion_gaps: Tuple[int, ...] = (5, 10, 15, 20, 25, 30)
    hennion_paths: int = 20
    lyapunov_n: int = 200
    lyapunov_reps: int = 1000
    psi_series_k: int = 100
    representation_cases: int = 50


# ============ 共用 ============

def _log(verbose: bool, message: str) -> None:
    if verbose:
        print(message)


def _load(config: ExperimentConfig) -> EnvDistribution:
    _log(config.verbose, f"📍[Lab] 載入環境檔: {config.env_path}")
    env = load_environment(config.env_path)
    _log(config.verbose, f"📍[Lab] p = {env.p}，原子數 = {env.size}")
    return env


def _check_type(env: EnvDistribution, i: int) -> None:
    if not 0 <= i < env.p:
        raise InputError(f"❌ 類型索引 {i} 超出範圍 [0, {env.p})")


def _solve_one(env: EnvDistribution, config: ExperimentConfig, defaults: LabDefaults) -> SpectralSolution:
    return solve(env, 1.0, config.grid, config.tol, defaults.max_iter, verbose=config.verbose)


def write_csv(frame: pd.DataFrame, path: str) -> None:
    """固定欄位順序、`,` 分隔、`.` 小數點、LF 換行"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_json(payload: Dict[str, Any], path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8"
    )


def _require_hypotheses(env: EnvDistribution, config: ExperimentConfig, defaults: LabDefaults) -> None:
    if config.force:
        _log(config.verbose, "⚠️ 已使用 --force，略過條件檢查")
        return
    report = check_conditions(env, defaults.epsilon)
    if not report.all_passed:
        raise InputError(f"❌ 條件不成立: {', '.join(report.failures())}（可用 --force 略過）")
    sub = subcriticality_check(env, defaults.h, config.grid, config.tol, defaults.max_iter)
    if not sub.strongly_subcritical:
        raise InputError(f"❌ Λ′(1) = {sub.lambda_prime_one:.6g} ≥ 0，不是強次臨界（可用 --force 略過）")


# ============ check ============

def cmd_check(
    config: ExperimentConfig, defaults: Optional[LabDefaults] = None
) -> Tuple[Dict[str, Any], int]:
    """
    H0–H4 與強次臨界檢查

    Returns:
        (JSON 報告, 退出碼)；條件全數成立且 Λ′(1) < 0 時退出碼為 0
    """
    defaults = defaults or LabDefaults()
    env = _load(config)
    report: ConditionReport = check_conditions(env, defaults.epsilon)
    failures = report.failures()

    sub: Optional[SubcriticalityResult] = None
    unavailable: Optional[str] = None
    if not report.h0.passed:
        unavailable = "H0 不成立，λ(1) 無定義"
    else:
        try:
            sub = subcriticality_check(env, defaults.h, config.grid, config.tol, defaults.max_iter)
        except BpreLabError as e:
            unavailable = str(e)

    if sub is None:
        failures.append("subcriticality unavailable")
    elif not sub.strongly_subcritical:
        failures.append("Λ′(1) ≥ 0")
    passed = not failures

    if config.verbose:
        for name in ("h0", "h1", "h2", "h3", "h4"):
            result = getattr(report, name)
            mark = "✅" if result.passed else "❌"
            print(f"{mark} {name.upper()}: {result.note}")
        if sub is None:
            print(f"⚠️ 無法判定強次臨界: {unavailable}")
        else:
            print(f"📍[Lab] λ(1) = {sub.lambda_one:.12g}")
            print(f"📍[Lab] Λ′(1) = {sub.lambda_prime_one:.12g}")
            if not sub.strongly_subcritical:
                print("❌ Λ′(1) ≥ 0，不是強次臨界")

    payload = {
        "conditions": report.model_dump(),
        "subcriticality": None if sub is None else sub.model_dump(),
        "subcriticality_error": unavailable,
        "passed": passed,
        "failures": failures
    }
    if config.out:
        write_json(payload, config.out)
    return payload, 0 if passed else 1


# ============ survival ============

def _survival_row(n: int, p_n: float, method: str, std_error: float, lam: float) -> SurvivalRow:
    log_lam = math.log(lam)
    ratio = math.exp(math.log(p_n) - n * log_lam) if p_n > 0.0 else 0.0
    log_excess = math.log(p_n) - n * log_lam if p_n > 0.0 else -math.inf
    return SurvivalRow(
        n=n, p_n=p_n, method=method, std_error=std_error,
        ratio=ratio, log_excess=log_excess, lambda_one=lam
    )


def survival_curve(
    env: EnvDistribution,
    spec: SpectralSolution,
    config: ExperimentConfig,
    i: int = 0
) -> List[SurvivalRow]:
    """
    精確列舉列（n ≤ exact_max_n）與 IS 列（n ≥ exact_max_n − 1），兩者在兩個 n 上重疊

    每個 n 的 IS 批次使用 derive_seed(seed, n)。
    """
    lam = spec.lam
    rows: List[SurvivalRow] = []
    is_start = max(1, config.exact_max_n - 1)
    for n in config.n_values:
        exact_done = False
        if n <= config.exact_max_n:
            try:
                check_budget(env, n, config.enumeration_budget)
                value = exact_complement(env, i, n, np.zeros(env.p), config.enumeration_budget)
                rows.append(_survival_row(n, value, "exact", 0.0, lam))
                exact_done = True
            except BudgetExceededError:
                _log(config.verbose, f"⚠️ n = {n} 超出列舉預算，改用 IS")
        if n >= is_start or not exact_done:
            if n == 0:
                continue
            est = is_survival(env, spec, i, n, config.reps, derive_seed(config.seed, n))
            rows.append(_survival_row(n, est.value, "is", est.std_error, lam))
            _log(config.verbose, f"📍[Survival] n = {n}: P = {est.value:.6e} ± {est.std_error:.2e}")
    return rows


def cmd_survival(config: ExperimentConfig, defaults: Optional[LabDefaults] = None) -> pd.DataFrame:
    """存活曲線 CSV：P_n、P_n/λ^n(1)、log P_n − nΛ(1)"""
    defaults = defaults or LabDefaults()
    env = _load(config)
    _check_type(env, config.type_index)
    _require_hypotheses(env, config, defaults)
    spec = _solve_one(env, config, defaults)
    rows = survival_curve(env, spec, config, config.type_index)
    frame = pd.DataFrame([row.model_dump() for row in rows], columns=SURVIVAL_COLUMNS)

    try:
        c = fit_c(rows, config.window)
        _log(config.verbose, f"✅ c^{config.type_index} ≈ {c.value:.6g} ± {c.std_error:.2g}")
    except InputError as e:
        _log(config.verbose, f"⚠️ 略過 c 擬合: {e}")

    if config.out:
        write_csv(frame, config.out)
        _log(config.verbose, f"✅ 已寫出 {config.out}")
    return frame


def fit_c(rows: List[SurvivalRow], window: int) -> Estimate:
    """
    c^i ≈ 最後 window 個 IS 列的 P_n/λ^n(1) 平均

    不確定度由各列標準誤合成。
    """
    is_rows = [row for row in rows if row.method == "is"]
    if window < 1 or len(is_rows) < window:
        raise InputError(f"❌ window too large: 需要 {window} 個 IS 列，只有 {len(is_rows)} 個")
    tail = is_rows[-window:]
    ratios = [row.ratio for row in tail]
    ratio_errors = [
        row.std_error * row.ratio / row.p_n if row.p_n > 0.0 else 0.0 for row in tail
    ]
    value = math.fsum(ratios) / window
    std_error = math.sqrt(math.fsum(e * e for e in ratio_errors)) / window
    if not value > 0.0:
        raise InputError(f"❌ c 的估計值 {value} 不為正")
    return Estimate(value=value, std_error=std_error, reps=window)


# ============ phi ============

def _format_s(s: np.ndarray) -> str:
    return ";".join(f"{x:.17g}" for x in s)


def _s_vectors(env: EnvDistribution, config: ExperimentConfig) -> List[np.ndarray]:
    if not config.s_vectors:
        return [np.full(env.p, 0.5)]
    vectors = []
    for s in config.s_vectors:
        vec = np.asarray(s, dtype=float)
        if vec.shape != (env.p,):
            raise InputError(f"❌ s 的維度應為 {env.p}，收到 {list(s)}")
        vectors.append(vec)
    return vectors


def phi_rows(
    env: EnvDistribution,
    spec: SpectralSolution,
    config: ExperimentConfig,
    s_list: List[np.ndarray],
    i: int = 0
) -> List[PhiRow]:
    """
    Φ̂_i(s) = 1 − Ê[1 − F^i(s)] / Ê[1 − F^i(0)]

    IS 列的分子分母共用同一批傾斜路徑。
    """
    rows: List[PhiRow] = []
    zero = np.zeros(env.p)
    for n in config.n_values:
        exact = False
        if n <= config.exact_max_n:
            try:
                check_budget(env, n, config.enumeration_budget)
                exact = True
            except BudgetExceededError:
                exact = False

        empirical = None
        if n <= config.empirical_max_n and n > 0:
            empirical = conditional_empirical(env, i, n, config.reps, derive_seed(config.seed, n, 1))

        if exact:
            den = exact_complement(env, i, n, zero, config.enumeration_budget)
            values = [
                (1.0 - exact_complement(env, i, n, s, config.enumeration_budget) / den, 0.0)
                for s in s_list
            ]
            method = "exact"
        else:
            samples = is_samples(env, spec, i, n, config.reps, derive_seed(config.seed, n), [zero] + s_list)
            values = []
            for c in range(len(s_list)):
                ratio = ratio_estimate(samples[:, c + 1], samples[:, 0])
                values.append((1.0 - ratio.value, ratio.std_error))
            method = "is"

        for s, (phi, se) in zip(s_list, values):
            emp_value = emp_se = None
            if empirical is not None and empirical.status == "ok":
                est = empirical.pgf(s)
                emp_value, emp_se = est.value, est.std_error
            rows.append(PhiRow(
                s=_format_s(s), n=n, method=method, phi=phi, std_error=se,
                phi_empirical=emp_value, empirical_std_error=emp_se
            ))
        _log(config.verbose, f"📍[Phi] n = {n} ({method}) 完成")
    return rows


def cmd_phi(config: ExperimentConfig, defaults: Optional[LabDefaults] = None) -> pd.DataFrame:
    """條件機率母函數估計 CSV（共同亂數耦合分子與分母）"""
    defaults = defaults or LabDefaults()
    env = _load(config)
    _check_type(env, config.type_index)
    _require_hypotheses(env, config, defaults)
    s_list = _s_vectors(env, config)
    spec = _solve_one(env, config, defaults)
    rows = phi_rows(env, spec, config, s_list, config.type_index)
    frame = pd.DataFrame([row.model_dump() for row in rows], columns=PHI_COLUMNS)
    if config.out:
        write_csv(frame, config.out)
        _log(config.verbose, f"✅ 已寫出 {config.out}（Φ 的分子與分母使用共同亂數）")
    return frame


# ============ spectral / tilt-sample ============

def cmd_spectral(config: ExperimentConfig, defaults: Optional[LabDefaults] = None) -> pd.DataFrame:
    """網格節點上的 r_θ 與 l_θ"""
    defaults = defaults or LabDefaults()
    env = _load(config)
    spec = solve(env, config.theta, config.grid, config.tol, defaults.max_iter, verbose=config.verbose)
    frame = pd.DataFrame(spec.grid.nodes, columns=[f"x{j}" for j in range(env.p)])
    frame["r"] = spec.r_values
    frame["l"] = spec.l_weights
    frame["lambda"] = spec.lam
    if config.out:
        write_csv(frame, config.out)
        _log(config.verbose, f"✅ 已寫出 {config.out}")
    return frame


def cmd_tilt_sample(config: ExperimentConfig, defaults: Optional[LabDefaults] = None) -> pd.DataFrame:
    """reps 條 θ 傾斜路徑；每列一條路徑"""
    defaults = defaults or LabDefaults()
    env = _load(config)
    _check_type(env, config.type_index)
    spec = solve(env, config.theta, config.grid, config.tol, defaults.max_iter, verbose=config.verbose)
    n = max(config.n_values) if config.n_values else 0
    paths = sample_paths(env, spec, unit_direction(env.p, config.type_index), n, config.reps, config.seed)
    frame = pd.DataFrame({
        "path": np.arange(paths.reps),
        "n": n,
        "atoms": [" ".join(str(k) for k in row) for row in paths.atom_indices],
        "log_density": paths.log_density,
        "log_normalizer": paths.log_normalizer,
        "max_defect": paths.max_defect,
    })
    for c in range(env.p):
        frame[f"x{c}"] = paths.final_directions[:, c]
    if config.out:
        write_csv(frame, config.out)
        _log(config.verbose, f"✅ 已寫出 {config.out}（{config.reps} 條路徑，n = {n}）")
    return frame


# ============ diagnostics ============

def _section(
    name: str,
    runner: Callable[[], DiagnosticSection],
    verbose: bool
) -> DiagnosticSection:
    try:
        section = runner()
    except NotApplicableError as e:
        section = DiagnosticSection(name=name, status="not-applicable", detail={"reason": str(e)})
    except BpreLabError as e:
        section = DiagnosticSection(name=name, status="fail", detail={"error": str(e)})
    mark = {"pass": "✅", "fail": "❌", "not-applicable": "⚠️"}[section.status]
    _log(verbose, f"{mark} [{name}] worst = {section.worst}，檢查 {section.checked} 項")
    return section


def _diag_identity(env: EnvDistribution, rng: np.random.Generator, d: LabDefaults) -> DiagnosticSection:
    worst = 0.0
    degenerate = 0
    for _ in range(d.identity_cases):
        n = int(rng.integers(0, d.identity_max_n + 1))
        seq = env.sample_indices(n, rng)
        i = int(rng.integers(0, env.p))
        s = rng.random(env.p)
        try:
            worst = max(worst, check_iteration_identity(env, seq, i, s).residual)
        except DegenerateInputError:
            degenerate += 1
    return DiagnosticSection(
        name="iteration_identity", status="pass" if worst <= 1e-9 else "fail",
        worst=worst, checked=d.identity_cases, detail={"degenerate": degenerate, "tolerance": 1e-9}
    )


def _diag_representation(env: EnvDistribution, rng: np.random.Generator, d: LabDefaults) -> DiagnosticSection:
    worst = 0.0
    for _ in range(d.representation_cases):
        n = int(rng.integers(0, d.identity_max_n + 1))
        seq = env.sample_indices(n, rng)
        worst = max(worst, representation_check(env, seq, int(rng.integers(0, env.p)), rng.random(env.p)).residual)
    return DiagnosticSection(
        name="representation", status="pass" if worst <= 1e-9 else "fail",
        worst=worst, checked=d.representation_cases, detail={"tolerance": 1e-9}
    )


def _diag_psi_bound(env: EnvDistribution, rng: np.random.Generator, d: LabDefaults) -> DiagnosticSection:
    if not math.isfinite(env.gamma):
        raise NotApplicableError("⚠️ γ = ∞，ψ 上界不適用")
    worst = -math.inf
    violations = 0
    for _ in range(d.psi_samples):
        atom = env.atoms[int(rng.integers(0, env.size))]
        a = rng.random((env.p, env.p))
        s = rng.random(env.p)
        result = check_psi_bound(atom, a, s)
        worst = max(worst, result.value - result.bound)
        violations += 0 if result.passed else 1
    return DiagnosticSection(
        name="psi_bound", status="pass" if violations == 0 else "fail",
        worst=worst, checked=d.psi_samples,
        detail={"violations": violations, "bounds": [psi_bound(atom) for atom in env.atoms]}
    )


def _diag_fk(env: EnvDistribution, rng: np.random.Generator, d: LabDefaults) -> DiagnosticSection:
    violations = 0
    lowest = math.inf
    highest = 0.0
    for _ in range(d.fk_samples):
        n = int(rng.integers(1, d.fk_max_n + 1))
        result = fk_bounds(env, env.sample_indices(n, rng), int(rng.integers(0, env.p)), rng.random(env.p))
        lowest = min(lowest, result.ratio / result.lower)
        highest = max(highest, result.ratio / result.upper)
        violations += 0 if result.passed else 1
    return DiagnosticSection(
        name="fk_bounds", status="pass" if violations == 0 else "fail",
        worst=highest, checked=d.fk_samples,
        detail={"violations": violations, "min_ratio_over_lower": lowest, "max_ratio_over_upper": highest}
    )


def _diag_entry_ratio(env: EnvDistribution, rng: np.random.Generator, d: LabDefaults) -> DiagnosticSection:
    violations = 0
    worst = 0.0
    for atom in env.atoms:
        if not check_h3_lower_bound(atom).passed:
            violations += 1
    for _ in range(d.hennion_paths):
        result = check_entry_ratio(env, env.sample_indices(d.fk_max_n, rng))
        worst = max(worst, result.value / result.bound)
        violations += 0 if result.passed else 1
    return DiagnosticSection(
        name="h3_entry_ratio", status="pass" if violations == 0 else "fail",
        worst=worst, checked=env.size + d.hennion_paths, detail={"violations": violations}
    )


def _diag_exchangeability(env: EnvDistribution, d: LabDefaults) -> DiagnosticSection:
    worst = 0.0
    checked = 0
    for n in range(d.exhaustive_max_n + 1):
        if env.size ** n > d.exhaustive_budget:
            break
        for i in range(env.p):
            result = check_exchangeability(env, i, n, np.zeros(env.p), d.exhaustive_budget)
            worst = max(worst, result.difference)
            checked += 1
    return DiagnosticSection(
        name="exchangeability", status="pass" if worst <= 1e-12 else "fail",
        worst=worst, checked=checked
    )


def _diag_mass(env: EnvDistribution, spec: SpectralSolution, d: LabDefaults) -> DiagnosticSection:
    tolerance = 1e-10 if env.p == 1 else 1e-6
    total = consistency = 0.0
    checked = 0
    for n in range(d.exhaustive_max_n + 1):
        if env.size ** (n + 1) > d.exhaustive_budget:
            break
        total = max(total, check_total_mass(env, spec, n, budget=d.exhaustive_budget))
        consistency = max(consistency, check_consistency(env, spec, n, budget=d.exhaustive_budget))
        checked += 1
    worst = max(total, consistency)
    return DiagnosticSection(
        name="total_mass", status="pass" if worst <= tolerance else "fail",
        worst=worst, checked=checked,
        detail={"total_mass": total, "consistency": consistency, "tolerance": tolerance}
    )


def _diag_hennion(env: EnvDistribution, rng: np.random.Generator, d: LabDefaults) -> DiagnosticSection:
    if any(atom.mean_matrix.min() <= 0.0 for atom in env.atoms):
        raise NotApplicableError("⚠️ 平均矩陣含非正元素，Hennion 分解不適用")
    gaps = sorted(d.hennion_gaps)
    worst = 0.0
    trend_breaks = 0
    for _ in range(d.hennion_paths):
        seq = env.sample_indices(gaps[-1], rng)
        residuals = [hennion_decompose(env, seq[:gap], 0).residual for gap in gaps]
        worst = max(worst, residuals[-1])
        trend_breaks += sum(1 for a, b in zip(residuals, residuals[1:]) if b > a + 1e-12)
    return DiagnosticSection(
        name="hennion", status="pass" if worst <= 1e-8 and trend_breaks == 0 else "fail",
        worst=worst, checked=d.hennion_paths,
        detail={"gap": gaps[-1], "trend_breaks": trend_breaks}
    )


def _diag_lyapunov(env: EnvDistribution, spec: SpectralSolution, config: ExperimentConfig, d: LabDefaults) -> DiagnosticSection:
    derivative = lambda_prime(env, 1.0, d.h, config.grid, config.tol, d.max_iter)
    sampler = TiltedSampler(env, spec, unit_direction(env.p, config.type_index))
    est = lyapunov(env, sampler, d.lyapunov_n, d.lyapunov_reps, derive_seed(config.seed, 7))
    gap = abs(est.value - derivative)
    allowed = max(0.05 * abs(derivative), 3.0 * est.std_error, 1e-9)
    return DiagnosticSection(
        name="lyapunov", status="pass" if gap <= allowed else "fail",
        worst=gap, checked=d.lyapunov_reps,
        detail={"lyapunov": est.value, "std_error": est.std_error, "lambda_prime_one": derivative}
    )


def _diag_psi_series(env: EnvDistribution, spec: SpectralSolution, config: ExperimentConfig, d: LabDefaults) -> DiagnosticSection:
    x0 = unit_direction(env.p, config.type_index)
    series = psi_series(env, spec, x0, d.psi_series_k, replica_rng(derive_seed(config.seed, 11), 0))
    monotone = bool(np.all(np.diff(series.partial_sums) >= 0.0))
    finite = bool(np.all(np.isfinite(series.partial_sums)))
    tail = series.tail(d.psi_series_k) if d.psi_series_k > 0 else 0.0
    return DiagnosticSection(
        name="psi_series", status="pass" if monotone and finite else "fail",
        worst=tail, checked=d.psi_series_k,
        detail={"final_sum": float(series.partial_sums[-1]), "tail_increment": tail}
    )


def run_diagnostics(
    env: EnvDistribution, config: ExperimentConfig, defaults: Optional[LabDefaults] = None
) -> DiagnosticsReport:
    """依序執行所有檢查；每個區段各自記錄失敗或不適用"""
    d = defaults or LabDefaults()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(3,)))
    v = config.verbose
    sections = [
        _section("iteration_identity", lambda: _diag_identity(env, rng, d), v),
        _section("representation", lambda: _diag_representation(env, rng, d), v),
        _section("psi_bound", lambda: _diag_psi_bound(env, rng, d), v),
        _section("fk_bounds", lambda: _diag_fk(env, rng, d), v),
        _section("h3_entry_ratio", lambda: _diag_entry_ratio(env, rng, d), v),
        _section("exchangeability", lambda: _diag_exchangeability(env, d), v),
        _section("hennion", lambda: _diag_hennion(env, rng, d), v),
    ]

    spec: Optional[SpectralSolution] = None
    if env.p <= MAX_P:
        try:
            spec = _solve_one(env, config, d)
        except BpreLabError as e:
            sections.append(DiagnosticSection(name="spectral", status="fail", detail={"error": str(e)}))
    if spec is None:
        reason = {"reason": f"沒有 θ = 1 的譜解（p = {env.p}）"}
        for name in ("total_mass", "lyapunov", "psi_series"):
            sections.append(DiagnosticSection(name=name, status="not-applicable", detail=reason))
    else:
        sections += [
            _section("total_mass", lambda: _diag_mass(env, spec, d), v),
            _section("lyapunov", lambda: _diag_lyapunov(env, spec, config, d), v),
            _section("psi_series", lambda: _diag_psi_series(env, spec, config, d), v),
        ]
    return DiagnosticsReport(sections=sections)


def cmd_diagnostics(
    config: ExperimentConfig, defaults: Optional[LabDefaults] = None
) -> Tuple[Dict[str, Any], int]:
    """整合診斷 JSON；任一區段失敗時退出碼為 2"""
    d = defaults or LabDefaults()
    env = _load(config)
    _check_type(env, config.type_index)
    report = run_diagnostics(env, config, d)
    payload = {
        "sections": [section.model_dump() for section in report.sections],
        "all_passed": report.all_passed,
        "grid": config.grid or DEFAULT_GRID.get(env.p),
        "exhaustive_budget": d.exhaustive_budget,
    }
    if config.out:
        write_json(payload, config.out)
        _log(config.verbose, f"✅ 已寫出 {config.out}")
    return payload, 0 if report.all_passed else 2
