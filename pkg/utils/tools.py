# -*- coding: utf-8 -*-
"""
工具函数模块

提供常用的工具函数，包括：
- 时间处理：毫秒时间戳（用于运行耗时统计）
- 文件操作：YAML、JSON文件读写，项目相对路径解析

"""

import os
import json
import time
from pathlib import Path
from typing import Any, Dict, Union

import yaml


PathLike = Union[str, Path]


# ==================== 时间相关函数 ====================

def get_cur_timestamp_ms() -> int:
    """
    获取当前时间戳（毫秒）

    Returns:
        int: 当前Unix时间戳（毫秒）
    """
    return int(time.time() * 1000)


# ==================== 路径 ====================

def get_file_path(filename: PathLike) -> Path:
    """
    获取文件的完整路径

    Args:
        filename: 绝对路径，或相对于项目根目录的路径

    Returns:
        Path: 文件的完整Path对象
    """
    path = Path(filename)
    if path.is_absolute():
        return path
    # 项目根目录为 utils 目录的上级目录
    root = Path(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    return root.joinpath(path)


# ==================== 文件操作函数 ====================

def load_yaml(filename: PathLike) -> Dict[str, Any]:
    """
    加载YAML文件

    Args:
        filename: 文件路径（相对路径按项目根目录解析）

    Returns:
        Dict[str, Any]: YAML文件内容的字典，文件不存在或为空时返回空字典
    """
    file_path = get_file_path(filename)
    if not file_path.exists():
        return {}
    with open(file_path, mode="r", encoding="UTF-8") as f:
        data = yaml.safe_load(f.read())
    return data if data else {}


def dump_json(data: Dict[str, Any], filename: PathLike) -> None:
    """
    保存数据到JSON文件（键排序，保证输出可复现）

    Args:
        data: 要保存的数据字典
        filename: 文件路径
    """
    file_path = get_file_path(filename)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with open(file_path, mode="w", encoding="UTF-8") as f:
        json.dump(data, f, indent=4, ensure_ascii=False, sort_keys=True)
