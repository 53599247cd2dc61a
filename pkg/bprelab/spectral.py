"""
bprelab - 轉移算子的譜分析
S_+ 上的 P_θ g(x) = E[|Mx|^θ g(M·x)] 以分段線性插值離散化，
以冪迭代求 (λ(θ), r_θ, l_θ)，並計算 Λ(θ) = log λ(θ) 的中央差分導數。
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .errors import ConvergenceError, DiscretizationError, InputError, NumericalError
from .matprod import AmbientSampler, log_op_norm_product
from .model import EnvDistribution
from .replicas import Estimate, replica_rng, run_replicas
from .schemas import SubcriticalityResult

DEFAULT_GRID = {1: 1, 2: 200, 3: 40}
DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 20_000
DEFAULT_H = 1e-3
MIN_R = 1e-12
MAX_P = 3


# ============ 單純形網格 ============

class SimplexGrid:
    """
    S_+ = {x ≥ 0 : |x| = 1} 上的網格

    p = 1：單點 {1}
    p = 2：x = (t, 1−t)，t = j/(K−1)
    p = 3：重心座標三角網格，每邊 K 個節點
    """

    def __init__(self, p: int, size: int):
        if p < 1 or p > MAX_P:
            raise InputError(f"❌ 網格只支援 1 ≤ p ≤ {MAX_P}，收到 p = {p}")
        if p > 1 and size < 2:
            raise InputError(f"❌ 網格大小 K 必須 ≥ 2，收到: {size}")
        self.p = p
        self.size_per_edge = 1 if p == 1 else size
        self.nodes = self._build_nodes()
        self.nodes.setflags(write=False)

    def _build_nodes(self) -> np.ndarray:
        if self.p == 1:
            return np.ones((1, 1))
        k = self.size_per_edge
        if self.p == 2:
            t = np.arange(k) / (k - 1)
            return np.column_stack([t, 1.0 - t])
        n = k - 1
        self._index = {}
        rows = []
        for i in range(n + 1):
            for j in range(n + 1 - i):
                self._index[(i, j)] = len(rows)
                rows.append((i / n, j / n, (n - i - j) / n))
        self._lookup = np.full((n + 1, n + 1), -1, dtype=np.int64)
        for (i, j), idx in self._index.items():
            self._lookup[i, j] = idx
        return np.array(rows)

    @property
    def count(self) -> int:
        return self.nodes.shape[0]

    def locate_many(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        每個點所在插值單元的頂點索引與權重

        Returns:
            (indices, weights)，形狀皆為 (N, p)；權重非負且和為 1
        """
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.p:
            raise InputError(f"❌ 點的維度應為 {self.p}，收到 {X.shape[1]}")
        X = X / X.sum(axis=1, keepdims=True)
        N = X.shape[0]

        if self.p == 1:
            return np.zeros((N, 1), dtype=np.int64), np.ones((N, 1))

        if self.p == 2:
            k = self.size_per_edge
            a = np.clip(X[:, 0], 0.0, 1.0) * (k - 1)
            j = np.clip(np.floor(a).astype(np.int64), 0, k - 2)
            f = np.clip(a - j, 0.0, 1.0)
            return np.column_stack([j, j + 1]), np.column_stack([1.0 - f, f])

        n = self.size_per_edge - 1
        a = np.clip(X[:, 0], 0.0, 1.0) * n
        b = np.clip(X[:, 1], 0.0, 1.0) * n
        i = np.floor(a).astype(np.int64)
        j = np.floor(b).astype(np.int64)
        # 邊界上的點歸入較低索引的單元
        over = i + j >= n
        i = np.where(over & (i > 0), i - 1, i)
        over = i + j >= n
        j = np.where(over & (j > 0), j - 1, j)
        fa = a - i
        fb = b - j

        lower = (fa + fb <= 1.0) | (i + j > n - 2)
        idx = np.empty((N, 3), dtype=np.int64)
        w = np.empty((N, 3))

        li = lower
        idx[li, 0] = self._lookup[i[li], j[li]]
        idx[li, 1] = self._lookup[i[li] + 1, j[li]]
        idx[li, 2] = self._lookup[i[li], j[li] + 1]
        w[li, 0] = 1.0 - fa[li] - fb[li]
        w[li, 1] = fa[li]
        w[li, 2] = fb[li]

        ui = ~lower
        idx[ui, 0] = self._lookup[i[ui] + 1, j[ui] + 1]
        idx[ui, 1] = self._lookup[i[ui] + 1, j[ui]]
        idx[ui, 2] = self._lookup[i[ui], j[ui] + 1]
        w[ui, 0] = fa[ui] + fb[ui] - 1.0
        w[ui, 1] = 1.0 - fb[ui]
        w[ui, 2] = 1.0 - fa[ui]

        w = np.clip(w, 0.0, None)
        w = w / w.sum(axis=1, keepdims=True)
        return idx, w

    def interpolate(self, values: np.ndarray, X: np.ndarray) -> np.ndarray:
        """網格函數在任意點的分段線性插值"""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.count,):
            raise InputError(f"❌ 網格函數長度應為 {self.count}，收到 {values.shape}")
        idx, w = self.locate_many(X)
        return (w * values[idx]).sum(axis=1)


def grid_for(p: int, count: int) -> SimplexGrid:
    """由網格函數的長度推回網格"""
    if p == 1:
        return SimplexGrid(1, 1)
    if p == 2:
        return SimplexGrid(2, count)
    if p == 3:
        k = int(round((math.sqrt(8 * count + 1) - 1) / 2))
        if k * (k + 1) // 2 != count:
            raise InputError(f"❌ 長度 {count} 不是 p = 3 三角網格的節點數")
        return SimplexGrid(3, k)
    raise InputError(f"❌ 網格只支援 1 ≤ p ≤ {MAX_P}，收到 p = {p}")


# ============ 轉移矩陣 ============

def transfer_matrix(env: EnvDistribution, theta: float, grid: SimplexGrid) -> sparse.csr_matrix:
    """第 x 列 = Σ_e prob_e |M_e x|^θ · 插值權重(M_e·x)"""
    if grid.p != env.p:
        raise InputError(f"❌ 網格維度 {grid.p} 與環境類型數 {env.p} 不符")
    N = grid.count
    rows, cols, data = [], [], []
    node_ids = np.arange(N)
    for a, (atom, prob) in enumerate(zip(env.atoms, env.probs)):
        Y = grid.nodes @ atom.mean_matrix.T
        lengths = Y.sum(axis=1)
        if np.any(lengths <= 0.0):
            raise NumericalError(f"❌ 原子 {a} 的 M x = 0（網格節點上），P_θ 無定義")
        idx, w = grid.locate_many(Y / lengths[:, None])
        scale = prob * lengths ** theta
        rows.append(np.repeat(node_ids, idx.shape[1]))
        cols.append(idx.ravel())
        data.append((w * scale[:, None]).ravel())
    return sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(N, N)
    )


def apply_P(
    env: EnvDistribution, theta: float, g: np.ndarray, grid: Optional[SimplexGrid] = None
) -> np.ndarray:
    """P_θ g 在網格節點上的值"""
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise InputError("❌ g 必須是有限值")
    grid = grid or grid_for(env.p, g.shape[0])
    if g.shape != (grid.count,):
        raise InputError(f"❌ 網格函數長度應為 {grid.count}，收到 {g.shape}")
    return transfer_matrix(env, theta, grid) @ g


# ============ 譜解 ============

@dataclass(frozen=True, eq=False)
class SpectralSolution:
    """λ(θ) 與 r_θ（節點值）、l_θ（求積權重）"""
    theta: float
    lam: float
    r_values: np.ndarray
    l_weights: np.ndarray
    grid: SimplexGrid
    iterations: int
    residual: float
    left_residual: float

    @property
    def log_lambda(self) -> float:
        return math.log(self.lam)

    def r_at(self, X: np.ndarray) -> np.ndarray:
        return self.grid.interpolate(self.r_values, X)

    def r_one(self, x: np.ndarray) -> float:
        return float(self.r_at(np.asarray(x, dtype=float)[None, :])[0])


def solve(
    env: EnvDistribution,
    theta: float,
    grid_size: Optional[int] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    verbose: bool = False
) -> SpectralSolution:
    """
    冪迭代求右、左 Perron 向量

    r ← P r / max、l ← Pᵀ l / Σ，λ = l·P r / l·r；
    λ 變化 < tol 且兩側殘差 ≤ 10·tol 時停止。
    """
    if not theta > 0.0:
        raise InputError(f"❌ θ 必須為正，收到: {theta}")
    if env.p > MAX_P:
        raise InputError(f"❌ 譜解只支援 p ≤ {MAX_P}（收到 p = {env.p}）；請改用 lambda_subadditive_mc")
    grid = SimplexGrid(env.p, grid_size or DEFAULT_GRID[env.p])
    if verbose:
        print(f"📍[Spectral] θ = {theta}，網格節點數 {grid.count}")

    P = transfer_matrix(env, theta, grid)
    PT = P.T.tocsr()
    N = grid.count
    r = np.ones(N)
    l = np.full(N, 1.0 / N)
    lam_prev = math.nan
    residual = left_residual = math.inf

    for it in range(1, max_iter + 1):
        Pr = P @ r
        top = Pr.max()
        if not top > 0.0:
            raise NumericalError("❌ P_θ r = 0，轉移矩陣退化")
        r = Pr / top
        lP = PT @ l
        l = lP / lP.sum()

        Pr = P @ r
        lam = float(l @ Pr) / float(l @ r)
        residual = float(np.abs(Pr - lam * r).max()) / (lam * float(r.max()))
        left_residual = float(np.abs(PT @ l - lam * l).sum()) / lam

        if abs(lam - lam_prev) < tol and residual <= 10 * tol and left_residual <= 10 * tol:
            break
        lam_prev = lam
    else:
        raise ConvergenceError(
            f"❌ 冪迭代在 {max_iter} 次內未收斂（殘差 {max(residual, left_residual):.3e}）",
            residual=max(residual, left_residual),
            iterations=max_iter
        )

    l = l / math.fsum(l)
    r = r / float(l @ r)
    if r.min() < MIN_R:
        raise DiscretizationError(f"❌ r_θ 的最小值 {r.min():.3e} < {MIN_R}")
    if verbose:
        print(f"✅ λ({theta}) = {lam:.12g}（{it} 次迭代，殘差 {residual:.2e}）")
    return SpectralSolution(
        theta=theta, lam=lam, r_values=r, l_weights=l, grid=grid,
        iterations=it, residual=residual, left_residual=left_residual
    )


# ============ θ = 1 的封閉形式 ============

def perron_root(m: np.ndarray) -> float:
    """非負矩陣的 Perron 根（譜半徑）"""
    return float(np.abs(np.linalg.eigvals(np.asarray(m, dtype=float))).max())


def left_perron_vector(m: np.ndarray) -> np.ndarray:
    """uM = ρu，正規化為 Σu = 1"""
    vals, vecs = np.linalg.eig(np.asarray(m, dtype=float).T)
    u = np.real(vecs[:, int(np.argmax(np.abs(vals)))])
    u = u * np.sign(u.sum())
    return u / u.sum()


def lambda_one_closed_form(env: EnvDistribution) -> float:
    """θ = 1 時線性函數在 P_1 下不變，λ(1) = ρ(E[M])"""
    return perron_root(env.expected_mean_matrix())


# ============ Monte Carlo 與導數 ============

def _log_norm_block(seed: int, start: int, stop: int, env: EnvDistribution, n: int) -> np.ndarray:
    sampler = AmbientSampler(env)
    out = np.empty(stop - start)
    for j, rep in enumerate(range(start, stop)):
        out[j] = log_op_norm_product(env, sampler(replica_rng(seed, rep), n))
    return out


def lambda_subadditive_mc(
    env: EnvDistribution, theta: float, n: int, reps: int, seed: int, workers: Optional[int] = None
) -> Estimate:
    """
    (E||M_n···M_1||^θ)^{1/n} 的 Monte Carlo 估計

    有限 n 時有偏；標準誤以 delta method 計算。
    """
    if n < 1:
        raise InputError(f"❌ n 必須 ≥ 1，收到: {n}")
    if not theta > 0.0:
        raise InputError(f"❌ θ 必須為正，收到: {theta}")
    v = theta * run_replicas(_log_norm_block, reps, seed, (env, n), workers)
    log_mean = float(logsumexp(v)) - math.log(reps)
    value = math.exp(log_mean / n)
    if reps == 1:
        return Estimate(value=value, std_error=0.0, reps=1)
    scaled = np.exp(v - log_mean)
    rel = float(np.std(scaled, ddof=1)) / math.sqrt(reps)
    return Estimate(value=value, std_error=value * rel / n, reps=reps)


def lambda_prime(
    env: EnvDistribution,
    theta: float = 1.0,
    h: float = DEFAULT_H,
    grid_size: Optional[int] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER
) -> float:
    """Λ′(θ) ≈ (Λ(θ+h) − Λ(θ−h)) / 2h"""
    if not theta - h > 0.0:
        raise InputError(f"❌ 需要 θ − h > 0（θ = {theta}, h = {h}）")
    up = solve(env, theta + h, grid_size, tol, max_iter)
    down = solve(env, theta - h, grid_size, tol, max_iter)
    return (up.log_lambda - down.log_lambda) / (2.0 * h)


def subcriticality_check(
    env: EnvDistribution,
    h: float = DEFAULT_H,
    grid_size: Optional[int] = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER
) -> SubcriticalityResult:
    """強次臨界 ⇔ Λ′(1) < 0（有限支撐下 1 恆在 Θ 的內部）"""
    lam_one = solve(env, 1.0, grid_size, tol, max_iter).lam
    derivative = lambda_prime(env, 1.0, h, grid_size, tol, max_iter)
    return SubcriticalityResult(
        lambda_one=lam_one,
        lambda_prime_one=derivative,
        strongly_subcritical=derivative < 0.0
    )
