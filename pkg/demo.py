#!/usr/bin/env python3
"""
bprelab - 使用示範
展示如何透過 Python 程式碼使用實驗室
"""

import json
import sys
from pathlib import Path

# 載入環境變數
from dotenv import load_dotenv
load_dotenv()

from bprelab import (
    EnvironmentFile,
    check_conditions,
    exact_survival,
    is_survival,
    load_environment,
    mc_survival,
    solve,
    subcriticality_check,
)

ENV_DIR = Path(__file__).parent / "assets" / "environments"


def demo_with_environment(env_path: str, seed: int = 7):
    """
    完整示範：條件檢查 → λ(1) → 存活機率的三種估計

    Args:
        env_path: 環境 JSON 檔路徑
        seed: 主種子
    """
    print("=" * 60)
    print("🧬 bprelab 使用示範")
    print("=" * 60)

    # Step 1: 載入環境
    print("\n📍 Step 1: 載入環境...")
    env = load_environment(env_path)
    print(f"   檔案: {Path(env_path).name}")
    print(f"   類型數 p: {env.p}")
    print(f"   原子數: {env.size}")

    # Step 2: 條件檢查
    print("\n📍 Step 2: H0–H4 條件檢查...")
    report = check_conditions(env)
    for name in ("h0", "h1", "h2", "h3", "h4"):
        result = getattr(report, name)
        print(f"   {'✅' if result.passed else '❌'} {name.upper()}: {result.note}")

    # Step 3: 強次臨界
    print("\n📍 Step 3: 強次臨界判定...")
    sub = subcriticality_check(env)
    print(f"   λ(1) = {sub.lambda_one:.10f}")
    print(f"   Λ′(1) = {sub.lambda_prime_one:.10f}")
    if not (report.all_passed and sub.strongly_subcritical):
        print("   ⚠️ 條件不成立，漸近結果不適用")
        return sub

    # Step 4: 存活機率
    print("\n📍 Step 4: 存活機率 P(Z_n ≠ 0 | Z_0 = e_0)...")
    spec = solve(env, 1.0)
    for n in (1, 2, 5, 10, 20):
        line = f"   n = {n:>2}:"
        if env.size ** n <= 100_000:
            line += f" 精確 {exact_survival(env, 0, n):.6e}"
        est = is_survival(env, spec, 0, n, 20_000, seed + n)
        line += f" | IS {est.value:.6e} ± {est.std_error:.1e}"
        if n <= 5:
            mc = mc_survival(env, 0, n, 20_000, seed + 100 + n)
            line += f" | MC {mc.value:.6e} ± {mc.std_error:.1e}"
        line += f" | P/λ^n = {est.value / sub.lambda_one ** n:.4f}"
        print(line)

    print("\n   💡 P_n/λ^n(1) 收斂到常數 c^0 > 0")
    return sub


def demo_schema():
    """
    示範：查看環境檔 Schema
    """
    print("=" * 60)
    print("📊 環境檔 Schema 示範")
    print("=" * 60)

    schema = EnvironmentFile.model_json_schema()
    print(json.dumps(schema, indent=2, ensure_ascii=False)[:1500] + "...")


if __name__ == "__main__":
    # 檢查是否提供了環境檔
    if len(sys.argv) > 1:
        env_file = sys.argv[1]
        if Path(env_file).exists():
            demo_with_environment(env_file)
        else:
            print(f"❌ 找不到檔案: {env_file}")
    else:
        print("💡 提示: 可提供環境檔路徑進行示範")
        print("   例如: python demo.py assets/environments/env_b.json")
        print()

        demo_schema()
        print()

        demo_with_environment(str(ENV_DIR / "env_a.json"))
