# -*- coding: utf-8 -*-
"""
跟踪结果可视化

每帧输出一张 PPM 图片，按轨迹ID着色绘制框。调试用途，不依赖视频编码。
"""

from pathlib import Path
from typing import List, Tuple

from PIL import Image, ImageColor, ImageDraw

from tracker.core import TrajectorySet
from utils.log import logger


PALETTE_SIZE = 64
BACKGROUND = (0, 0, 0)
LINE_WIDTH = 2

# 16 种色相 x 4 档饱和度/明度
_LEVELS = ((100, 100), (55, 100), (100, 60), (55, 60))


def _build_palette() -> List[Tuple[int, int, int]]:
    palette = []
    for i in range(PALETTE_SIZE):
        hue = int((i * 7 % 16) * 22.5)
        saturation, value = _LEVELS[i // 16]
        palette.append(ImageColor.getrgb(f"hsv({hue},{saturation}%,{value}%)"))
    return palette


PALETTE = _build_palette()


def color_for_id(track_id: int) -> Tuple[int, int, int]:
    """ID -> 颜色，64 个以内的ID颜色互不相同"""
    return PALETTE[(track_id - 1) % PALETTE_SIZE]


def render_frame(results: TrajectorySet, frame: int, width: int, height: int) -> Image.Image:
    """绘制单帧"""
    image = Image.new("RGB", (width, height), BACKGROUND)
    draw = ImageDraw.Draw(image)
    for target in results.targets_at(frame):
        box = target.box
        if box.w <= 0 or box.h <= 0:
            continue
        draw.rectangle([box.x, box.y, box.x2 - 1, box.y2 - 1], outline=color_for_id(target.id), width=LINE_WIDTH)
    return image


def render_sequence(results: TrajectorySet, width: int, height: int, num_frames: int,
                    out_dir: str) -> List[Path]:
    """
    把整段序列渲染成逐帧图片

    Args:
        results: 跟踪结果
        width: 画面宽度
        height: 画面高度
        num_frames: 帧数（无结果的帧输出空白图）
        out_dir: 输出目录，文件名为 1 起始的 000001.ppm

    Returns:
        List[Path]: 写出的文件路径
    """
    target_dir = Path(out_dir)
    target_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for frame in range(num_frames):
        path = target_dir / f"{frame + 1:06d}.ppm"
        render_frame(results, frame, width, height).save(path, format="PPM")
        paths.append(path)
    logger.info("渲染完成", frames=num_frames, out_dir=str(target_dir), tracks=len(results))
    return paths
