"""命令行入口：layersim run / cache build|list|purge。

退出码：0 成功，2 配置错误，3 规模超限，4 拟合失败，其他错误 1。
"""
import logging
import sys

import click
import yaml
from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from src import __version__
from src.cli.experiments import build_system, run_experiment
from src.config.config import get_config_section
from src.config.experiment import load_experiment
from src.engine.basis import enumerate_basis
from src.engine.cache import cache_key, list_entries, load_or_build, purge
from src.errors import CapacityError, ConfigurationError, FitError, LayerSimError
from src.hamiltonian.builders import build_secular_hamiltonian

logger = logging.getLogger(__name__)
console = Console(stderr=True)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_FIT = 4

CACHE_COLUMNS = ("file", "bytes", "basis_hash", "hamiltonian_hash", "code_version")


def setup_logging(verbose: bool = False):
    level = "DEBUG" if verbose else (get_config_section(["logging", "level"]) or "INFO")
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=verbose, show_path=verbose)],
        force=True,
    )


def _validation_lines(error: ValidationError) -> list[str]:
    lines = []
    for item in error.errors():
        path = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"{path}: {item['msg']}")
    return lines


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, (ConfigurationError, ValidationError, yaml.YAMLError)):
        return EXIT_CONFIG
    if isinstance(error, CapacityError):
        return EXIT_CAPACITY
    if isinstance(error, FitError):
        return EXIT_FIT
    return EXIT_FAILURE


def report_error(error: BaseException) -> int:
    code = exit_code_for(error)
    if isinstance(error, ValidationError):
        console.print(f"[bold red]实验文件校验失败[/] ({error.error_count()} 处):")
        for line in _validation_lines(error):
            console.print(f"  {line}")
    elif isinstance(error, CapacityError):
        console.print(f"[bold red]规模超限[/]: {error}")
        console.print(
            f"  计算得到 {error.size:,}，上限 {error.limit:,}。"
            "可以减少核数、关闭 truncation.nv_triplets，或调大 engine.max_basis_size / oracle.max_dense_spins"
        )
    elif isinstance(error, FitError):
        console.print(f"[bold red]拟合失败[/]: {error} (最佳残差 {error.best_residual:.4g})")
    else:
        console.print(f"[bold red]{type(error).__name__}[/]: {error}")
    return code


@click.group()
@click.version_option(__version__, prog_name="layersim")
@click.option("-v", "--verbose", is_flag=True, help="输出 DEBUG 级日志")
@click.pass_context
def cli(ctx, verbose):
    """¹³C 层与 NV 中心的自旋动力学模拟"""
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose
    setup_logging(verbose)


@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.option("-o", "--output", "output_dir", type=click.Path(file_okay=False), default=None,
              help="输出目录，默认取实验文件中的 output.directory")
@click.option("--no-progress", is_flag=True, help="不显示进度条")
@click.pass_context
def run(ctx, config_path, output_dir, no_progress):
    """运行一个实验描述文件"""
    try:
        record = run_experiment(config_path, output_dir, progress=not no_progress)
    except (LayerSimError, ValidationError, yaml.YAMLError) as e:
        if ctx.obj.get("verbose"):
            logger.exception("运行失败")
        ctx.exit(report_error(e))
    console.print(f"[green]完成[/] {record.config.protocol}，清单 {record.manifest_path}")


@cli.group()
def cache():
    """管理作用表缓存"""


@cache.command("build")
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.pass_context
def cache_build(ctx, config_path):
    """为实验文件中的体系预先构建作用表（可中断后续建）"""
    try:
        config, _ = load_experiment(config_path)
        system = build_system(config)
        rule = system.build_options["rule"]
        basis = enumerate_basis(system.layout.n_nuclei, rule)
        hamiltonian = build_secular_hamiltonian(system.layout, system.couplings, system.options)
        table = load_or_build(hamiltonian, basis, directory=system.build_options["cache_dir"], progress=True)
    except (LayerSimError, ValidationError, yaml.YAMLError) as e:
        ctx.exit(report_error(e))
    key = cache_key(table.basis_hash, table.hamiltonian_hash, table.layout)
    console.print(f"[green]作用表就绪[/] {key}: 基大小 {table.size:,}，非零元 {table.nnz:,}")


@cache.command("list")
@click.option("--directory", type=click.Path(file_okay=False), default=None)
def cache_list(directory):
    """列出缓存条目"""
    entries = list_entries(directory)
    if not entries:
        console.print("缓存为空")
        return
    table = Table(title="作用表缓存")
    for column in CACHE_COLUMNS:
        table.add_column(column)
    for entry in entries:
        table.add_row(*(str(entry.get(column, "")) for column in CACHE_COLUMNS))
    Console().print(table)


@cache.command("purge")
@click.option("--directory", type=click.Path(file_okay=False), default=None)
@click.option("--yes", is_flag=True, help="不再确认")
def cache_purge(directory, yes):
    """删除全部缓存文件"""
    if not yes:
        click.confirm("删除全部作用表缓存？", abort=True)
    removed = purge(directory)
    console.print(f"已删除 {removed} 个缓存文件")


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="layersim", standalone_mode=True)
    except SystemExit as e:
        return e.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
