#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Flow-Fuse Tracker - 项目初始化脚本
"""

import shutil
from pathlib import Path


def main():
    """初始化项目配置"""

    print("🚀 Flow-Fuse Tracker - 项目初始化")
    print("=" * 50)

    source_path = Path("config/app.example.yaml")
    target_path = Path("config/app.yaml")

    if not source_path.exists():
        print(f"⚠️  模板文件不存在: {source_path}")
        return
    if target_path.exists():
        print(f"📄 文件已存在，跳过: {target_path}")
        return

    try:
        shutil.copy2(source_path, target_path)
        print(f"✅ 已创建: {target_path}")
    except OSError as e:
        print(f"❌ 创建失败 {target_path}: {e}")
        return

    # 日志与输出目录在运行时自动创建
    print("\n📝 下一步:")
    print("1. 按需编辑 config/app.yaml 中的 tracker / evaluation 参数")
    print("2. python main.py track --synth clean --out output/")


if __name__ == "__main__":
    main()
