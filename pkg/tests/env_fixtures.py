"""
測試共用的環境與執行器

ENV_A: p = 1，兩個原子（f_a = 0.5 + 0.5s²，f_b = 0.75 + 0.125s + 0.125s²），各 1/2
ENV_B: p = 2，兩個原子，E[M] = [[0.45, 0.4], [0.4, 0.35]]
"""

import math
import sys
from pathlib import Path
from typing import Callable, List, Tuple

ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(ROOT))

from bprelab.model import EnvDistribution, build_environment  # noqa: E402

ENV_DIR = ROOT / "assets" / "environments"

LAMBDA_ONE_A = 0.6875
LAMBDA_PRIME_A = 0.5 * 0.375 * math.log(0.375) / 0.6875
P1_A = 0.375
P2_A = 0.208984375


def env_a() -> EnvDistribution:
    return build_environment([
        ([[((0,), 0.5), ((2,), 0.5)]], 0.5),
        ([[((0,), 0.75), ((1,), 0.125), ((2,), 0.125)]], 0.5),
    ])


def env_b() -> EnvDistribution:
    return build_environment([
        ([
            [((0, 0), 0.5), ((1, 1), 0.3), ((2, 1), 0.1), ((1, 2), 0.1)],
            [((0, 0), 0.6), ((1, 1), 0.3), ((1, 0), 0.1)],
        ], 0.5),
        ([
            [((0, 0), 0.7), ((1, 1), 0.2), ((1, 0), 0.1)],
            [((0, 0), 0.6), ((1, 1), 0.2), ((2, 1), 0.1), ((0, 1), 0.1)],
        ], 0.5),
    ])


def env_identity() -> EnvDistribution:
    """每個個體恰好產生一個同類型後代"""
    return build_environment([
        ([[((1, 0), 1.0)], [((0, 1), 1.0)]], 1.0),
    ])


def env_supercritical() -> EnvDistribution:
    return build_environment([
        ([[((1,), 0.5), ((3,), 0.5)]], 0.5),
        ([[((2,), 1.0)]], 0.5),
    ])


def env_linear() -> EnvDistribution:
    """含一個 T = 0 的原子（線性母函數）"""
    return build_environment([
        ([[((0,), 0.5), ((1,), 0.5)]], 0.5),
        ([[((0,), 0.5), ((2,), 0.5)]], 0.5),
    ])


def env_three() -> EnvDistribution:
    """p = 3、所有平均矩陣嚴格為正"""
    return build_environment([
        ([
            [((0, 0, 0), 0.5), ((1, 1, 1), 0.4), ((2, 1, 0), 0.1)],
            [((0, 0, 0), 0.6), ((1, 1, 1), 0.3), ((0, 1, 2), 0.1)],
            [((0, 0, 0), 0.7), ((1, 1, 1), 0.2), ((1, 0, 1), 0.1)],
        ], 0.5),
        ([
            [((0, 0, 0), 0.6), ((1, 1, 1), 0.3), ((1, 2, 1), 0.1)],
            [((0, 0, 0), 0.5), ((1, 1, 1), 0.4), ((1, 0, 0), 0.1)],
            [((0, 0, 0), 0.6), ((1, 1, 1), 0.3), ((0, 0, 2), 0.1)],
        ], 0.5),
    ])


def run_tests(title: str, tests: List[Tuple[str, Callable[[], None]]]) -> bool:
    """以腳本方式執行測試並印出摘要"""
    print("=" * 60)
    print(f"🧪 {title}")
    print("=" * 60)

    results = []
    for name, test_func in tests:
        try:
            test_func()
            print(f"✅ {name}")
            results.append((name, True))
        except Exception as e:
            print(f"❌ {name} 測試異常: {type(e).__name__}: {e}")
            results.append((name, False))

    passed = sum(1 for _, ok in results if ok)
    print(f"\n總計: {passed}/{len(results)} 測試通過")
    return passed == len(results)
