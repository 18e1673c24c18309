import os
import logging
from pathlib import Path
from typing import Sequence

from jinja2 import Environment, FileSystemLoader, StrictUndefined, TemplateError

from src import __version__

logger = logging.getLogger(__name__)

TEMPLATE_DIR = os.path.dirname(__file__)


def apply_template(template: str, **kwargs) -> str:
    """
    渲染 report 目录下的 markdown 模板

    Args:
        template: 模板文件名（可省略 .md 扩展名）
        **kwargs: 传递给模板的变量

    Returns:
        渲染后的文本

    Raises:
        jinja2.TemplateNotFound: 模板文件不存在
        TemplateError: 模板渲染出错（包括缺少变量）
    """
    env = Environment(
        loader=FileSystemLoader(TEMPLATE_DIR),
        autoescape=False,
        trim_blocks=True,
        lstrip_blocks=True,
        undefined=StrictUndefined,
    )
    env.filters["num"] = _format_number
    template_name = os.path.basename(template) if template.endswith(".md") else f"{template}.md"
    logger.debug(f"加载模板: {template_name}")
    try:
        return env.get_template(template_name).render(**kwargs)
    except TemplateError as e:
        logger.error(f"模板渲染错误: {e}")
        raise


def _format_number(value) -> str:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return str(value)
    if isinstance(value, int):
        return str(value)
    return f"{value:.6g}"


def render_run_summary(config, summary: dict, files: Sequence[str | Path], wall_time_s: float) -> str:
    """运行摘要：协议、引擎、主要结果与输出文件列表"""
    return apply_template(
        "run_summary",
        protocol=config.protocol,
        engine=config.engine,
        seed=config.seed,
        name=config.run_name,
        version=__version__,
        summary=summary,
        files=[Path(f).name for f in files],
        wall_time_s=wall_time_s,
    )
