#!/usr/bin/env python
"""
dafkit 命令行启动脚本

用法:
    python run.py toy --preset shapes4 --out data/shapes4
    python run.py train --config configs/acceptance.toml --out runs/backbone
    python run.py invert --checkpoint runs/backbone/backbone.dafkit --data data/shapes4 --out runs/invert
    python run.py augment --checkpoint runs/invert/backbone.dafkit --data data/shapes4 --M 10 --out runs/store
    python run.py fewshot --config configs/acceptance.toml --auto --out runs/fewshot
    python run.py report runs/fewshot/report
"""
import shutil
import sys
from pathlib import Path

# 确保项目根目录在 Python 路径中
ROOT_DIR = Path(__file__).parent
sys.path.insert(0, str(ROOT_DIR))


def check_env():
    """检查环境配置"""
    env_file = ROOT_DIR / ".env"
    env_example = ROOT_DIR / ".env.example"
    if not env_file.exists() and env_example.exists():
        shutil.copy(env_example, env_file)
        print("⚠️  未找到 .env 文件，已从 .env.example 创建", file=sys.stderr)


def main() -> int:
    check_env()
    from dafkit.main import main as cli_main

    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
