"""
bprelab - 錯誤類別
每個錯誤帶有 CLI 退出碼：1 輸入驗證、2 數值失敗、3 超出列舉預算
"""

from typing import Optional


class BpreLabError(Exception):
    """bprelab 基礎錯誤"""
    exit_code = 2


class InputError(BpreLabError):
    """輸入驗證錯誤（維度不符、環境檔格式錯誤、參數不合法）"""
    exit_code = 1


class DomainError(InputError):
    """在定義域外求值（例如 ψ 在 s = 1）"""
    pass


class DegenerateInputError(InputError):
    """分母為零的退化輸入"""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class NumericalError(BpreLabError):
    """數值計算失敗"""
    exit_code = 2


class ConvergenceError(NumericalError):
    """迭代未收斂"""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class DiscretizationError(NumericalError):
    """網格過粗，插值誤差超出容許範圍"""
    pass


class PopulationOverflowError(NumericalError):
    """族群數量超過 2^53，拒絕靜默溢位"""
    pass


class NotApplicableError(BpreLabError):
    """前提條件（如 H3）不成立，檢查不適用"""
    exit_code = 2


class BudgetExceededError(BpreLabError):
    """精確列舉超出預算"""
    exit_code = 3
