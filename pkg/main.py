#!/usr/bin/env python3
"""
bprelab - 隨機環境分支過程數值實驗室
主程式入口與命令行介面

使用方式:
    python main.py check --env assets/environments/env_a.json
    python main.py survival --env assets/environments/env_a.json --seed 7 --out survival.csv
    python main.py diagnostics --env assets/environments/env_b.json --seed 1 -q
"""

from bprelab.cli import main


if __name__ == "__main__":
    main()
