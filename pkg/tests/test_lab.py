#!/usr/bin/env python3
"""
bprelab - 實驗室與 CLI 測試
"""

import json
import math
import os
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pandas as pd
import pytest

from env_fixtures import ENV_DIR, LAMBDA_ONE_A, LAMBDA_PRIME_A, P1_A, P2_A, run_tests
from bprelab.cli import main, parse_n_values, parse_s_vector
from bprelab.errors import InputError
from bprelab.genfun import exact_complement
from bprelab.lab import (
    PHI_COLUMNS,
    SURVIVAL_COLUMNS,
    LabDefaults,
    cmd_check,
    cmd_diagnostics,
    cmd_phi,
    cmd_spectral,
    cmd_survival,
    cmd_tilt_sample,
    fit_c,
)
from bprelab.model import build_environment, environment_to_dict, load_environment
from bprelab.replicas import THREADS_ENV, replica_rng
from bprelab.schemas import ExperimentConfig, SurvivalRow
from bprelab.spectral import solve
from bprelab.tilt import sample_path

QUICK = LabDefaults(
    identity_cases=30,
    psi_samples=300,
    fk_samples=300,
    exhaustive_max_n=4,
    hennion_paths=5,
    lyapunov_n=100,
    lyapunov_reps=200,
    psi_series_k=50,
    representation_cases=20,
)


def _config(command: str, env_file: str, **fields) -> ExperimentConfig:
    fields.setdefault("verbose", False)
    return ExperimentConfig(command=command, env_path=str(ENV_DIR / env_file), **fields)


def _exit_code(argv) -> int:
    with pytest.raises(SystemExit) as exc:
        main(argv)
    return exc.value.code


# ============ 設定 ============

def test_config_requires_seed():
    with pytest.raises(ValueError):
        _config("survival", "env_a.json")
    assert _config("check", "env_a.json").seed is None


def test_config_normalizes_n_values():
    config = _config("survival", "env_a.json", seed=1, n_values=[5, 1, 5, 3])
    assert config.n_values == [1, 3, 5]
    with pytest.raises(ValueError):
        _config("phi", "env_a.json", seed=1, s_vectors=[[1.0]])


def test_parse_cli_values():
    assert parse_n_values("0..3,7") == [0, 1, 2, 3, 7]
    assert parse_s_vector("0.5,0.25") == [0.5, 0.25]
    with pytest.raises(InputError):
        parse_n_values("a..b")


# ============ check ============

def test_check_env_a():
    payload, code = cmd_check(_config("check", "env_a.json"))
    assert code == 0
    assert payload["passed"]
    assert payload["subcriticality"]["lambda_one"] == pytest.approx(LAMBDA_ONE_A, abs=1e-12)
    assert payload["subcriticality"]["lambda_prime_one"] == pytest.approx(LAMBDA_PRIME_A, abs=1e-5)


def test_check_linear_atom():
    payload, code = cmd_check(_config("check", "env_linear.json"))
    assert code == 1
    assert "h4" in payload["failures"]


def test_check_supercritical():
    payload, code = cmd_check(_config("check", "env_supercritical.json"))
    assert code == 1
    assert "Λ′(1) ≥ 0" in payload["failures"]


def _write_env(directory: str, env) -> str:
    path = Path(directory) / "env.json"
    path.write_text(json.dumps(environment_to_dict(env)), encoding="utf-8")
    return str(path)


def test_check_reports_h0_failure():
    """原子 0 沒有後代：報告照常輸出，退出碼 1"""
    env = build_environment([
        ([[((0, 0), 1.0)], [((0, 0), 1.0)]], 0.5),
        ([[((1, 1), 0.5), ((0, 0), 0.5)], [((2, 1), 0.5), ((0, 0), 0.5)]], 0.5),
    ])
    with tempfile.TemporaryDirectory() as d:
        config = ExperimentConfig(command="check", env_path=_write_env(d, env), verbose=False)
        payload, code = cmd_check(config)
    assert code == 1
    assert not payload["passed"]
    assert "h0" in payload["failures"]
    assert "subcriticality unavailable" in payload["failures"]
    assert payload["subcriticality"] is None
    assert payload["conditions"]["h0"]["passed"] is False


def test_check_reports_unsolvable_dimension():
    """p = 4 沒有譜解：條件報告仍輸出，退出碼 1"""
    law = [((0, 0, 0, 0), 0.5), ((1, 1, 1, 1), 0.5)]
    env = build_environment([([law] * 4, 1.0)])
    with tempfile.TemporaryDirectory() as d:
        config = ExperimentConfig(command="check", env_path=_write_env(d, env), verbose=False)
        payload, code = cmd_check(config)
    assert code == 1
    assert payload["conditions"]["h0"]["passed"]
    assert payload["failures"] == ["subcriticality unavailable"]
    assert "p ≤ 3" in payload["subcriticality_error"]


def test_cli_check_h0_failure_exit_code():
    env = build_environment([([[((0, 0), 1.0)], [((0, 0), 1.0)]], 1.0)])
    with tempfile.TemporaryDirectory() as d:
        assert _exit_code(["check", "--env", _write_env(d, env), "-q"]) == 1


# ============ survival ============

def test_survival_curve_env_a():
    config = _config("survival", "env_a.json", seed=11, n_values=list(range(5)), exact_max_n=3, reps=4000)
    frame = cmd_survival(config)
    assert list(frame.columns) == SURVIVAL_COLUMNS
    exact = frame[frame["method"] == "exact"].set_index("n")
    importance = frame[frame["method"] == "is"].set_index("n")
    assert exact.loc[0, "p_n"] == 1.0
    assert exact.loc[1, "p_n"] == pytest.approx(P1_A, abs=1e-15)
    assert exact.loc[2, "p_n"] == pytest.approx(P2_A, abs=1e-15)
    assert (exact["std_error"] == 0.0).all()
    assert list(importance.index) == [2, 3, 4]
    for n in (2, 3):
        assert abs(importance.loc[n, "p_n"] - exact.loc[n, "p_n"]) <= 4 * importance.loc[n, "std_error"]
    assert exact.loc[2, "ratio"] == pytest.approx(P2_A / LAMBDA_ONE_A ** 2)
    assert np.allclose(frame["lambda_one"], LAMBDA_ONE_A, atol=1e-12)


def test_survival_ratio_stabilizes():
    """ENV-A：n = 20..40 的 P_n/λ^n(1) 相對散布 ≤ 5%"""
    config = _config(
        "survival", "env_a.json", seed=19, n_values=[20, 25, 30, 35, 40],
        exact_max_n=0, reps=20_000, window=5
    )
    frame = cmd_survival(config)
    assert (frame["method"] == "is").all()
    ratios = frame["ratio"].to_numpy()
    assert (ratios.max() - ratios.min()) / ratios.mean() <= 0.05
    rows = [SurvivalRow(**record) for record in frame.to_dict(orient="records")]
    c = fit_c(rows, 5)
    assert c.value > 0.0
    assert c.relative_error < 0.05


def test_survival_requires_conditions():
    config = _config("survival", "env_linear.json", seed=1, n_values=[1])
    with pytest.raises(InputError):
        cmd_survival(config)


def test_survival_csv_reproducible():
    with tempfile.TemporaryDirectory() as d:
        outputs = []
        saved = os.environ.get(THREADS_ENV)
        try:
            for threads in ("1", "2"):
                os.environ[THREADS_ENV] = threads
                out = Path(d) / f"survival_{threads}.csv"
                cmd_survival(_config(
                    "survival", "env_b.json", seed=3, n_values=[1, 2, 8, 9], exact_max_n=2,
                    reps=500, out=str(out)
                ))
                outputs.append(out.read_bytes())
        finally:
            if saved is None:
                os.environ.pop(THREADS_ENV, None)
            else:
                os.environ[THREADS_ENV] = saved
        assert outputs[0] == outputs[1]
        header = outputs[0].decode("utf-8").splitlines()[0]
        assert header == ",".join(SURVIVAL_COLUMNS)
        assert b"\r\n" not in outputs[0]


# ============ fit_c ============

def _synthetic_rows(c: float, lam: float, ns):
    return [
        SurvivalRow(
            n=n, p_n=c * lam ** n, method="is", std_error=0.0,
            ratio=c, log_excess=math.log(c), lambda_one=lam
        )
        for n in ns
    ]


def test_fit_c_synthetic():
    est = fit_c(_synthetic_rows(3.0, 0.6875, range(20, 40)), 10)
    assert est.value == pytest.approx(3.0)
    assert est.std_error == 0.0


def test_fit_c_window_too_large():
    rows = [
        SurvivalRow(n=n, p_n=0.5 ** n, method="exact", std_error=0.0,
                    ratio=1.0, log_excess=0.0, lambda_one=0.5)
        for n in range(5)
    ]
    with pytest.raises(InputError) as exc:
        fit_c(rows, 3)
    assert "window too large" in str(exc.value)


def test_fit_c_uncertainty():
    rows = _synthetic_rows(2.0, 0.8, range(10))
    rows = [row.model_copy(update={"std_error": 0.1 * row.p_n}) for row in rows]
    est = fit_c(rows, 4)
    assert est.std_error == pytest.approx(math.sqrt(4 * 0.2 ** 2) / 4)


# ============ phi ============

def test_phi_env_a():
    config = _config(
        "phi", "env_a.json", seed=5, n_values=[1, 2, 4], exact_max_n=2,
        reps=3000, s_vectors=[[0.0], [0.5]]
    )
    frame = cmd_phi(config)
    assert list(frame.columns) == PHI_COLUMNS
    assert (frame[frame["s"] == "0"]["phi"] == 0.0).all()
    env = load_environment(ENV_DIR / "env_a.json")
    exact = 1.0 - exact_complement(env, 0, 2, [0.5]) / exact_complement(env, 0, 2, [0.0])
    row = frame[(frame["s"] == "0.5") & (frame["n"] == 2)].iloc[0]
    assert row["method"] == "exact"
    assert row["phi"] == pytest.approx(exact, abs=1e-12)
    assert abs(row["phi_empirical"] - exact) <= 4 * row["empirical_std_error"]
    far = frame[(frame["s"] == "0.5") & (frame["n"] == 4)].iloc[0]
    assert far["method"] == "is"
    assert pd.isna(far["phi_empirical"])
    assert 0.0 <= far["phi"] <= 1.0


def test_phi_dimension_check():
    config = _config("phi", "env_b.json", seed=5, n_values=[1], s_vectors=[[0.5]])
    with pytest.raises(InputError):
        cmd_phi(config)


# ============ spectral / tilt-sample ============

def test_spectral_csv():
    frame = cmd_spectral(_config("spectral", "env_b.json", grid=20, theta=1.2))
    assert list(frame.columns) == ["x0", "x1", "r", "l", "lambda"]
    assert len(frame) == 20
    assert frame["l"].sum() == pytest.approx(1.0)
    assert (frame["r"] > 0).all()


def test_tilt_sample_paths():
    config = _config("tilt-sample", "env_a.json", seed=2, reps=5, n_values=[10])
    first = cmd_tilt_sample(config)
    second = cmd_tilt_sample(config)
    assert len(first) == 5
    assert all(len(atoms.split()) == 10 for atoms in first["atoms"])
    assert first.equals(second)


def test_tilt_sample_rows_match_single_paths():
    """批次輸出的第 j 列與 sample_path(replica_rng(seed, j)) 相同"""
    config = _config("tilt-sample", "env_b.json", seed=4, reps=4, n_values=[6], type_index=1)
    frame = cmd_tilt_sample(config)
    assert list(frame.columns) == [
        "path", "n", "atoms", "log_density", "log_normalizer", "max_defect", "x0", "x1"
    ]
    env = load_environment(config.env_path)
    spec = solve(env, 1.0)
    for j, row in frame.iterrows():
        path = sample_path(env, spec, [0.0, 1.0], 6, replica_rng(4, j))
        assert row["path"] == j
        assert row["atoms"] == " ".join(str(k) for k in path.atom_indices)
        assert row["log_density"] == pytest.approx(path.log_density, rel=1e-12)
        assert row["x0"] == pytest.approx(path.directions[-1][0], rel=1e-12, abs=1e-15)


# ============ diagnostics ============

def test_diagnostics_env_a():
    payload, code = cmd_diagnostics(_config("diagnostics", "env_a.json", seed=1), QUICK)
    statuses = {s["name"]: s["status"] for s in payload["sections"]}
    assert code == 0, statuses
    assert all(status == "pass" for status in statuses.values())
    assert set(statuses) >= {
        "iteration_identity", "psi_bound", "fk_bounds", "exchangeability",
        "total_mass", "hennion", "lyapunov", "psi_series", "representation",
    }


def test_diagnostics_identity_environment():
    payload, code = cmd_diagnostics(_config("diagnostics", "env_identity.json", seed=1), QUICK)
    sections = {s["name"]: s for s in payload["sections"]}
    assert code == 0
    assert sections["fk_bounds"]["status"] == "not-applicable"
    assert sections["hennion"]["status"] == "not-applicable"
    assert sections["total_mass"]["worst"] == pytest.approx(0.0, abs=1e-12)
    assert sections["lyapunov"]["status"] == "pass"
    assert sections["lyapunov"]["detail"]["lyapunov"] == 0.0


def test_diagnostics_json_stable():
    with tempfile.TemporaryDirectory() as d:
        out = Path(d) / "report.json"
        cmd_diagnostics(_config("diagnostics", "env_a.json", seed=4, out=str(out)), QUICK)
        text = out.read_text(encoding="utf-8")
        data = json.loads(text)
        assert list(data) == sorted(data)
        assert text == json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


# ============ CLI ============

def test_cli_check_exit_codes():
    assert _exit_code(["check", "--env", str(ENV_DIR / "env_a.json"), "-q"]) == 0
    assert _exit_code(["check", "--env", str(ENV_DIR / "env_supercritical.json"), "-q"]) == 1


def test_cli_validation_errors():
    assert _exit_code(["survival", "--env", str(ENV_DIR / "env_a.json"), "-q"]) == 1
    assert _exit_code(["check", "--env", str(ENV_DIR / "missing.json"), "-q"]) == 1
    assert _exit_code(["survival", "--env", str(ENV_DIR / "env_a.json"), "--seed", "1", "--n", "x", "-q"]) == 1


def test_cli_survival_writes_csv():
    with tempfile.TemporaryDirectory() as d:
        out = Path(d) / "survival.csv"
        argv = [
            "survival", "--env", str(ENV_DIR / "env_a.json"), "--seed", "7",
            "--n", "0..3", "--reps", "300", "--exact-max-n", "2", "--out", str(out), "-q",
        ]
        assert _exit_code(argv) == 0
        first = out.read_bytes()
        assert _exit_code(argv) == 0
        assert out.read_bytes() == first


def test_cli_phi_scalar_s_expansion():
    with tempfile.TemporaryDirectory() as d:
        out = Path(d) / "phi.csv"
        argv = [
            "phi", "--env", str(ENV_DIR / "env_b.json"), "--seed", "7", "--s", "0.5",
            "--n", "1,2", "--reps", "300", "--out", str(out), "-q",
        ]
        assert _exit_code(argv) == 0
        frame = pd.read_csv(out)
        assert set(frame["s"]) == {"0.5;0.5"}


def run_all_tests():
    return run_tests("實驗室與 CLI 測試", [
        ("seed 必填", test_config_requires_seed),
        ("n 清單", test_config_normalizes_n_values),
        ("CLI 解析", test_parse_cli_values),
        ("check ENV-A", test_check_env_a),
        ("check 線性原子", test_check_linear_atom),
        ("check 超臨界", test_check_supercritical),
        ("check H0 不成立", test_check_reports_h0_failure),
        ("check p = 4", test_check_reports_unsolvable_dimension),
        ("CLI H0 退出碼", test_cli_check_h0_failure_exit_code),
        ("存活曲線", test_survival_curve_env_a),
        ("比值穩定", test_survival_ratio_stabilizes),
        ("條件前檢", test_survival_requires_conditions),
        ("CSV 重現性", test_survival_csv_reproducible),
        ("c 擬合", test_fit_c_synthetic),
        ("window too large", test_fit_c_window_too_large),
        ("c 不確定度", test_fit_c_uncertainty),
        ("Φ ENV-A", test_phi_env_a),
        ("Φ 維度", test_phi_dimension_check),
        ("譜解 CSV", test_spectral_csv),
        ("傾斜路徑", test_tilt_sample_paths),
        ("傾斜路徑逐列一致", test_tilt_sample_rows_match_single_paths),
        ("診斷 ENV-A", test_diagnostics_env_a),
        ("診斷恆等環境", test_diagnostics_identity_environment),
        ("診斷 JSON", test_diagnostics_json_stable),
        ("CLI 退出碼", test_cli_check_exit_codes),
        ("CLI 驗證錯誤", test_cli_validation_errors),
        ("CLI survival", test_cli_survival_writes_csv),
        ("CLI Φ", test_cli_phi_scalar_s_expansion),
    ])


if __name__ == "__main__":
    success = run_all_tests()
    sys.exit(0 if success else 1)
