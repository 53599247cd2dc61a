"""
bprelab - 命令行介面

使用方式:
    python main.py check --env assets/environments/env_a.json
    python main.py survival --env env_a.json --seed 7 --n 0..40 --out survival.csv
    python main.py phi --env env_a.json --seed 7 --s 0.5 --n 10..35 --out phi.csv
"""

import argparse
import json
import sys
from typing import List, Optional, Sequence

from dotenv import load_dotenv
from pydantic import ValidationError

from . import __version__
from .errors import BpreLabError, InputError
from .lab import (
    FLOAT_FORMAT,
    cmd_check,
    cmd_diagnostics,
    cmd_phi,
    cmd_spectral,
    cmd_survival,
    cmd_tilt_sample,
)
from .model import format_validation_error, load_environment
from .schemas import ExperimentConfig

COMMANDS = ("check", "survival", "phi", "spectral", "tilt-sample", "diagnostics")


def print_banner():
    """印出程式 Banner"""
    banner = f"""
╔══════════════════════════════════════════════════════════════════╗
║                                                                  ║
║   🧬  bprelab {__version__:<8} 隨機環境分支過程數值實驗室              ║
║                                                                  ║
║   強次臨界存活漸近、條件極限分布與 θ 傾斜重要性抽樣              ║
║                                                                  ║
╚══════════════════════════════════════════════════════════════════╝
    """
    print(banner)


def parse_n_values(text: str) -> List[int]:
    """'0..60'、'1,2,5' 或兩者混用（'0..10,20,30..32'）"""
    values: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                lo, hi = part.split("..", 1)
                values.extend(range(int(lo), int(hi) + 1))
            else:
                values.append(int(part))
        except ValueError:
            raise InputError(f"❌ 無法解析 --n: {text!r}")
    if not values:
        raise InputError("❌ --n 不可為空")
    return values


def parse_s_vector(text: str) -> List[float]:
    """'0.5' 或 '0.5,0.25'（逗號分隔的座標）"""
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"❌ 無法解析 --s: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bprelab",
        description="bprelab - 隨機環境下多類型分支過程的數值實驗室",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
範例:
    bprelab check --env assets/environments/env_a.json
    bprelab survival --env env_a.json --seed 7 --n 0..40 --reps 100000 --out survival.csv
    bprelab phi --env env_b.json --seed 7 --s 0.5,0.5 --s 0,0.9 --n 2..20 --out phi.csv
    bprelab spectral --env env_b.json --theta 1.2 --grid 400 --out spectral.csv
    bprelab diagnostics --env env_b.json --seed 1 --out report.json

退出碼: 0 成功、1 輸入驗證失敗、2 數值失敗、3 超出列舉預算
        """
    )
    parser.add_argument("command", choices=COMMANDS, help="要執行的指令")
    parser.add_argument("--env", required=True, help="環境 JSON 檔路徑")
    parser.add_argument("--seed", type=int, help="主種子（隨機指令必填）")
    parser.add_argument("--n", type=str, help="n 的清單，例如 0..60 或 1,2,5")
    parser.add_argument("--reps", type=int, help="重複次數 (預設: 100000)")
    parser.add_argument("--theta", type=float, help="傾斜參數 θ (預設: 1)")
    parser.add_argument("--grid", type=int, help="單純形網格大小 K (預設: p=2 為 200、p=3 為 40)")
    parser.add_argument("--tol", type=float, help="冪迭代容許誤差 (預設: 1e-12)")
    parser.add_argument("-o", "--out", type=str, help="輸出 CSV / JSON 路徑")
    parser.add_argument("--type", type=int, dest="type_index", help="初始類型 i（0 起算）")
    parser.add_argument(
        "--s", action="append", dest="s_vectors",
        help="s 向量，逗號分隔；可重複指定。單一數值會擴展為 s·1"
    )
    parser.add_argument("--window", type=int, help="c^i 擬合使用的 IS 列數 (預設: 10)")
    parser.add_argument("--exact-max-n", type=int, help="精確列舉的最大 n (預設: 10)")
    parser.add_argument("--empirical-max-n", type=int, help="經驗條件分布的最大 n (預設: 3)")
    parser.add_argument("--budget", type=int, dest="enumeration_budget", help="列舉預算 (預設: 1e7)")
    parser.add_argument("--force", action="store_true", help="條件不成立時仍執行")
    parser.add_argument("-q", "--quiet", action="store_true", help="靜默模式，僅輸出最終結果")
    parser.add_argument("--version", action="version", version=f"bprelab {__version__}")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """argparse 結果 → ExperimentConfig（未指定的選項沿用預設值）"""
    fields = {
        "command": args.command,
        "env_path": args.env,
        "force": args.force,
        "verbose": not args.quiet,
    }
    for name in ("seed", "reps", "theta", "grid", "tol", "out", "type_index", "window",
                 "exact_max_n", "empirical_max_n", "enumeration_budget"):
        value = getattr(args, name)
        if value is not None:
            fields[name] = value
    if args.n is not None:
        fields["n_values"] = parse_n_values(args.n)
    if args.s_vectors:
        fields["s_vectors"] = [parse_s_vector(text) for text in args.s_vectors]
    try:
        return ExperimentConfig(**fields)
    except ValidationError as e:
        raise InputError(f"❌ 參數驗證失敗:\n{format_validation_error(e)}")


def _expand_scalar_s(config: ExperimentConfig) -> ExperimentConfig:
    """單一數值的 s 擴展為 s·1（需要先知道 p）"""
    if not any(len(s) == 1 for s in config.s_vectors):
        return config
    p = load_environment(config.env_path).p
    vectors = [s * p if len(s) == 1 else s for s in config.s_vectors]
    return config.model_copy(update={"s_vectors": vectors})


def dispatch(config: ExperimentConfig) -> int:
    """執行指令並回傳退出碼"""
    if config.command == "check":
        payload, code = cmd_check(config)
        if not config.out:
            print(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False))
        return code
    if config.command == "survival":
        frame = cmd_survival(config)
    elif config.command == "phi":
        frame = cmd_phi(_expand_scalar_s(config))
    elif config.command == "spectral":
        frame = cmd_spectral(config)
    elif config.command == "tilt-sample":
        frame = cmd_tilt_sample(config)
    else:
        payload, code = cmd_diagnostics(config)
        if not config.out:
            print(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False))
        return code
    if not config.out:
        print(frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"), end="")
    return 0


def main(argv: Optional[Sequence[str]] = None):
    """主程式入口"""
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.quiet:
        print_banner()

    try:
        config = config_from_args(args)
        code = dispatch(config)
    except BpreLabError as e:
        print(f"\n{e}" if str(e).startswith("❌") else f"\n❌ {e}", file=sys.stderr)
        sys.exit(e.exit_code)
    except KeyboardInterrupt:
        print("\n⚠️ 使用者中斷操作", file=sys.stderr)
        sys.exit(130)
    sys.exit(code)
