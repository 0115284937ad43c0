# -*- coding: utf-8 -*-
"""
应用配置管理模块

提供统一的配置文件加载和访问功能。
"""

from typing import Any, Dict, Optional
import os

from utils import tools
from utils.errors import ConfigError


# 环境变量：覆盖日志级别
ENV_LOG_LEVEL = "FFT_LOG"


class Settings:
    """
    应用配置管理类

    负责加载和管理 config/app.yaml（跟踪参数、评估参数、合成数据参数、日志）。
    配置文件允许不存在，但访问不存在的配置项会抛出 KeyError。
    """

    def __init__(self, path: str = "config/app.yaml"):
        """初始化配置管理器，加载配置文件"""
        self._path = path
        self._app_config: Dict[str, Any] = tools.load_yaml(path)
        self._load_env_overrides()

    def _load_env_overrides(self) -> None:
        """从环境变量加载配置覆盖"""
        level = os.getenv(ENV_LOG_LEVEL)
        if level:
            self._app_config.setdefault('logging', {})['level'] = level.upper()

    # ==================== 应用配置访问 ====================

    def get_config(self, key: Optional[str] = None, default: Any = None) -> Any:
        """
        获取应用配置

        Args:
            key: 配置键名（支持点号分隔的多级键，如 'tracker.thresh_nms'）
                 为 None 时返回所有配置
            default: 默认值，如果配置不存在则返回此值（为 None 时抛出异常）

        Returns:
            Any: 配置值

        Raises:
            KeyError: 配置项不存在且未提供默认值时抛出

        Examples:
            >>> settings.get_config('tracker.thresh_nms')
            0.5

            >>> settings.get_config('not_exist', default={})
            {}
        """
        if key is None:
            return self._app_config

        value = self._app_config
        try:
            for k in key.split('.'):
                value = value[k]
            return value
        except (KeyError, TypeError):
            if default is not None:
                return default
            raise KeyError(f"配置项不存在: {key}")

    def _section(self, name: str) -> Dict[str, Any]:
        section = self.get_config(name, default={})
        if not isinstance(section, dict):
            raise ConfigError(f"配置节 {name} 必须是映射: {section!r}")
        return dict(section)

    def get_tracker_config(self) -> Dict[str, Any]:
        """
        获取跟踪参数（未合并默认值，默认值由各配置数据类给出）

        Returns:
            Dict[str, Any]: tracker 配置节
        """
        return self._section('tracker')

    def get_eval_config(self) -> Dict[str, Any]:
        """
        获取评估参数

        Returns:
            Dict[str, Any]: 评估配置字典，包含默认值
        """
        eval_config = {'iou_thresh': 0.5}
        eval_config.update(self._section('evaluation'))
        return eval_config

    def get_synth_config(self) -> Dict[str, Any]:
        """
        获取合成数据参数

        Returns:
            Dict[str, Any]: 合成数据配置字典，包含默认值
        """
        synth_config = {
            'sequences': 5,
            'targets': 8,
            'frames': 100,
            'seed': 0,
            'flow_depth': 1,
        }
        synth_config.update(self._section('synth'))
        return synth_config

    def get_logging_config(self) -> Dict[str, Any]:
        """
        获取日志配置

        Returns:
            Dict[str, Any]: 日志配置字典，包含默认值
        """
        default_logging = {
            'level': 'INFO',
            'name': 'fft',
            'file_enabled': False,
            'console_enabled': True,
            'path': './logs',
            'backup_count': 5
        }
        default_logging.update(self._section('logging'))
        return default_logging

    # ==================== 辅助方法 ====================

    def load_file(self, path: str) -> None:
        """
        改用指定的配置文件（命令行 --config）

        Raises:
            ConfigError: 文件不存在或不是 YAML 映射
        """
        if not tools.get_file_path(path).exists():
            raise ConfigError(f"配置文件不存在: {path}")
        try:
            data = tools.load_yaml(path)
        except Exception as e:
            raise ConfigError(f"配置文件解析失败: {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"配置文件顶层必须是映射: {path}")
        self._path = path
        self._app_config = data
        self._load_env_overrides()

    def __repr__(self) -> str:
        return f"Settings(path={self._path}, sections={list(self._app_config.keys())})"


# 全局配置实例
settings = Settings()
