# -*- coding: utf-8 -*-
"""
日志工具模块

提供统一的日志记录功能，支持控制台彩色输出和文件轮转输出。
日志级别从 config/app.yaml 读取，环境变量 FFT_LOG 可以覆盖。
"""

import os
import json
from typing import Optional

import logbook
from logbook import Logger, TimedRotatingFileHandler, lookup_level
from logbook.more import ColorizedStderrHandler


# 全局日志记录器实例
logger = Logger("log")


def init_logger_from_config() -> None:
    """
    从配置文件初始化日志记录器

    读取 config/app.yaml 中的 logging 配置项进行初始化
    """
    from utils.settings import settings

    try:
        logging_config = settings.get_logging_config()
        init_logger(
            level=logging_config.get('level', 'INFO'),
            name=logging_config.get('name', 'fft'),
            path=logging_config.get('path') if logging_config.get('file_enabled', False) else None,
            backup_count=logging_config.get('backup_count', 5),
            console_enabled=logging_config.get('console_enabled', True)
        )
        logger.debug("日志系统初始化完成", level=logging_config.get('level'),
                     file_enabled=logging_config.get('file_enabled'),
                     path=logging_config.get('path'))
    except Exception as e:
        # 配置读取失败时退回默认配置
        init_logger(path=None)
        logger.warning(f"读取日志配置失败，使用默认配置: {e}")


def init_logger(
    level: str = 'INFO',
    name: str = 'fft',
    path: Optional[str] = None,
    backup_count: int = 5,
    console_enabled: bool = True,
    encoding: str = 'utf-8'
) -> None:
    """
    初始化日志记录器

    Args:
        level: 日志级别，可选值: DEBUG, INFO, WARNING, ERROR, CRITICAL
        name: 日志文件名称（不含扩展名）
        path: 日志文件保存路径，为 None 时不写入文件
        backup_count: 日志文件备份数量
        console_enabled: 是否启用控制台输出
        encoding: 文件编码
    """
    logbook.set_datetime_format("local")

    logger.name = name
    logger.level = lookup_level(str(level).upper())
    logger.handlers = []

    if console_enabled:
        log_std = ColorizedStderrHandler(bubble=False)
        log_std.formatter = log_formatter
        logger.handlers.append(log_std)

    if path is not None:
        log_dir = os.path.abspath(path)
        os.makedirs(log_dir, exist_ok=True)
        log_file = TimedRotatingFileHandler(
            os.path.join(log_dir, f'{name}.log'),
            date_format='%Y-%m-%d',
            backup_count=backup_count,
            bubble=False,
            encoding=encoding
        )
        log_file.formatter = log_formatter
        logger.handlers.append(log_file)


def log_formatter(record, handler) -> str:
    """
    格式化日志记录

    格式: [时间] [级别] [文件:行号] [函数] 消息 {关键字参数JSON}

    Args:
        record: 日志记录对象
        handler: 日志处理器对象（未使用）

    Returns:
        str: 格式化后的日志字符串
    """
    try:
        log = "[{date}] [{level}] [{filename}:{lineno}] [{func_name}] {msg}".format(
            date=record.time.strftime('%Y-%m-%d %H:%M:%S'),
            level=record.level_name,
            filename=os.path.split(record.filename)[-1],
            func_name=record.func_name,
            lineno=record.lineno,
            msg=record.msg
        )

        if record.args:
            for arg in record.args:
                log += f" {arg}"

        if record.kwargs:
            try:
                log += f" {json.dumps(record.kwargs, ensure_ascii=False, default=str)}"
            except (TypeError, ValueError):
                log += f" {record.kwargs}"

        return log

    except Exception:
        return f"[{record.time}] [{record.level_name}] {record.msg}"


def set_log_level(level: str) -> None:
    """
    动态设置日志级别

    Args:
        level: 日志级别 (DEBUG, INFO, WARNING, ERROR, CRITICAL)
    """
    try:
        logger.level = lookup_level(level.upper())
        logger.debug(f"日志级别已更改为: {level}")
    except (KeyError, LookupError, ValueError) as e:
        logger.error(f"无效的日志级别: {level}, 错误: {e}")
