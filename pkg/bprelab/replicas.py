"""
bprelab - 重複實驗執行器
每個 replica 使用由 (master_seed, replica_index) 衍生的獨立亂數流，
彙總以 math.fsum 進行，因此結果與 worker 數量及完成順序無關。
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Tuple

import numpy as np

from .errors import InputError

THREADS_ENV = "BPRELAB_THREADS"


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo 估計值與標準誤"""
    value: float
    std_error: float
    reps: int

    def within(self, target: float, n_se: float = 3.0, atol: float = 1e-12) -> bool:
        """target 是否落在 value ± n_se·std_error 之內"""
        return abs(self.value - target) <= n_se * self.std_error + atol

    @property
    def relative_error(self) -> float:
        if self.value == 0.0:
            return math.inf
        return self.std_error / abs(self.value)


def worker_count() -> int:
    """讀取 BPRELAB_THREADS（預設 1）"""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise InputError(f"❌ {THREADS_ENV} 必須是正整數，收到: {raw!r}")
    if value < 1:
        raise InputError(f"❌ {THREADS_ENV} 必須是正整數，收到: {value}")
    return value


def replica_rng(seed: int, index: int) -> np.random.Generator:
    """第 index 個 replica 的亂數產生器"""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def derive_seed(seed: int, *keys: int) -> int:
    """由主種子與子鍵衍生新的整數種子（用於不同 n 的獨立批次）"""
    state = np.random.SeedSequence(seed, spawn_key=tuple(keys)).generate_state(1, dtype=np.uint64)
    return int(state[0])


def _blocks(reps: int, workers: int) -> List[Tuple[int, int]]:
    base, extra = divmod(reps, workers)
    blocks = []
    start = 0
    for w in range(workers):
        stop = start + base + (1 if w < extra else 0)
        if stop > start:
            blocks.append((start, stop))
        start = stop
    return blocks


def run_replicas(
    block_fn: Callable[..., np.ndarray],
    reps: int,
    seed: int,
    args: Tuple[Any, ...] = (),
    workers: Optional[int] = None
) -> np.ndarray:
    """
    執行 reps 個 replica

    Args:
        block_fn: 模組層級函式 block_fn(seed, start, stop, *args)，
                  回傳形狀為 (stop - start, ...) 的陣列，第 j 列只依賴 replica_rng(seed, start + j)
        reps: replica 數量
        seed: 主種子
        args: 傳給 block_fn 的額外參數（需可 pickle）
        workers: 程序數，預設讀取 BPRELAB_THREADS

    Returns:
        依 replica 索引排序的結果陣列
    """
    if reps < 1:
        raise InputError(f"❌ reps 必須 ≥ 1，收到: {reps}")
    if seed is None or seed < 0:
        raise InputError("❌ 隨機實驗需要非負整數 seed")

    n_workers = worker_count() if workers is None else workers
    n_workers = max(1, min(n_workers, reps))

    if n_workers == 1:
        return np.asarray(block_fn(seed, 0, reps, *args))

    blocks = _blocks(reps, n_workers)
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(block_fn, seed, start, stop, *args) for start, stop in blocks]
        parts = [future.result() for future in futures]
    return np.concatenate([np.asarray(part) for part in parts], axis=0)


def summarize(values: np.ndarray) -> Estimate:
    """樣本平均與標準誤（補償求和）"""
    values = np.asarray(values, dtype=float).ravel()
    n = values.size
    if n == 0:
        raise InputError("❌ 沒有樣本可彙總")
    mean = math.fsum(values) / n
    if n == 1:
        return Estimate(value=mean, std_error=0.0, reps=1)
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return Estimate(value=mean, std_error=math.sqrt(var / n), reps=n)


def ratio_estimate(numerator: np.ndarray, denominator: np.ndarray) -> Estimate:
    """
    比值估計 mean(A)/mean(B)，標準誤以 delta method 計算

    A 與 B 來自相同的 replica（共同亂數），共變異數一併計入。
    """
    a = np.asarray(numerator, dtype=float).ravel()
    b = np.asarray(denominator, dtype=float).ravel()
    n = a.size
    mean_a = math.fsum(a) / n
    mean_b = math.fsum(b) / n
    if mean_b == 0.0:
        raise InputError("❌ 比值估計的分母平均為 0")
    ratio = mean_a / mean_b
    if n == 1:
        return Estimate(value=ratio, std_error=0.0, reps=1)
    resid = a - ratio * b
    var = math.fsum(resid ** 2) / (n - 1)
    return Estimate(value=ratio, std_error=math.sqrt(var / n) / abs(mean_b), reps=n)
