# -*- coding: utf-8 -*-
"""
异常定义模块

跟踪引擎所有可预期的失败都继承自 TrackerError，命令行入口据此映射退出码。
"""

from typing import Optional


class TrackerError(Exception):
    """跟踪引擎异常基类"""
    pass


class ConfigError(TrackerError):
    """配置错误异常"""
    pass


class GeometryError(TrackerError, ValueError):
    """几何值非法（负宽高、非有限坐标、分数越界等）"""
    pass


class TooFewSamples(TrackerError):
    """光流采样点不足，调用方需退化为零运动"""

    def __init__(self, samples: int, required: int):
        self.samples = samples
        self.required = required
        super().__init__(f"光流采样点不足: {samples} < {required}")


class LengthMismatch(TrackerError, ValueError):
    """两个序列长度不一致"""
    pass


class RefinerFailure(TrackerError):
    """精修器执行失败或返回了不合法的结果"""
    pass


class MissingFlow(TrackerError):
    """缺少必需的光流场"""
    pass


class PipelineError(TrackerError):
    """帧序列不满足流水线前置条件"""
    pass


class FrameRangeMismatch(TrackerError):
    """预测结果与真值的帧范围不一致"""
    pass


class SequenceMismatch(TrackerError):
    """评估时结果文件与真值文件的序列名称不一致"""
    pass


class SpecError(TrackerError, ValueError):
    """合成序列参数越界"""
    pass


class ParseError(TrackerError):
    """文本文件解析失败，携带出错行号"""

    def __init__(self, line: Optional[int], reason: str):
        self.line = line
        self.reason = reason
        where = f"第 {line} 行" if line is not None else "文件"
        super().__init__(f"{where}解析失败: {reason}")


class FlowFormatError(TrackerError):
    """光流文件格式错误基类"""
    pass


class BadMagic(FlowFormatError):
    """光流文件魔数错误"""
    pass


class TruncatedFile(FlowFormatError):
    """光流文件被截断"""
    pass


class NonFiniteValue(FlowFormatError, ValueError):
    """光流数据中存在 NaN / Inf"""
    pass
