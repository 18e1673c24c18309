"""结果文件：带版本头的 CSV、orjson 报告与运行清单，全部原子写入。"""
import csv
import io
import logging
import math
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import orjson

from src import __version__
from src.engine.cache import atomic_write
from src.errors import ConfigurationError
from src.sequences.trace import TimeTrace

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS


def csv_header(kind: str) -> str:
    return f"# layersim-{kind} v{FORMAT_VERSION}"


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "nan" if math.isnan(value) else repr(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def format_csv(kind: str, rows: Sequence[Mapping]) -> str:
    """rows 是字典列表，列顺序取第一行的键顺序"""
    if not rows:
        raise ConfigurationError(f"no rows to write for {kind}")
    fieldnames = list(rows[0].keys())
    buffer = io.StringIO()
    buffer.write(csv_header(kind) + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(fieldnames)
    for row in rows:
        writer.writerow([_cell(row.get(name)) for name in fieldnames])
    return buffer.getvalue()


def columns_to_rows(columns: Mapping[str, Iterable]) -> list[dict]:
    arrays = {name: np.asarray(values) for name, values in columns.items()}
    lengths = {len(a) for a in arrays.values()}
    if len(lengths) != 1:
        raise ConfigurationError(f"columns have different lengths: {sorted(lengths)}")
    n = lengths.pop()
    return [{name: a[i] for name, a in arrays.items()} for i in range(n)]


def write_csv(path: str | Path, kind: str, rows: Sequence[Mapping]) -> Path:
    path = Path(path)
    atomic_write(path, format_csv(kind, rows).encode("utf-8"))
    logger.info(f"已写入 {path} ({len(rows)} 行)")
    return path


def read_csv(path: str | Path) -> tuple[str, list[dict]]:
    """读回 write_csv 的输出，返回 (kind, 行)；数值列转成 float"""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# layersim-"):
        raise ConfigurationError(f"{path} is not a layersim result file")
    kind = lines[0][len("# layersim-"):].rsplit(" v", 1)[0]
    rows = []
    for row in csv.DictReader(lines[1:]):
        parsed = {}
        for key, value in row.items():
            try:
                parsed[key] = float(value)
            except ValueError:
                parsed[key] = value
        rows.append(parsed)
    return kind, rows


def write_json(path: str | Path, data) -> Path:
    path = Path(path)
    atomic_write(path, orjson.dumps(data, option=JSON_OPTIONS))
    logger.info(f"已写入 {path}")
    return path


def dump_trajectory(traces: TimeTrace | Sequence[TimeTrace], path: str | Path) -> Path:
    """逐点轨迹 CSV：坐标轴、观测值与 run_id，多次运行按顺序拼接"""
    if isinstance(traces, TimeTrace):
        traces = [traces]
    rows = []
    for run_id, trace in enumerate(traces):
        rows.extend(dict(row, run_id=run_id) for row in columns_to_rows(trace.columns()))
    return write_csv(path, "trajectory", rows)


def build_manifest(
        config: Mapping,
        outputs: Sequence[str | Path],
        wall_time_s: float,
        cache_hashes: Optional[Sequence[str]] = None,
        extra: Optional[Mapping] = None,
) -> dict:
    return {
        "format": csv_header("manifest")[2:],
        "code_version": __version__,
        "python": platform.python_version(),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "wall_time_s": wall_time_s,
        "config": dict(config),
        "outputs": [Path(p).name for p in outputs],
        "cache_hashes": list(cache_hashes or []),
        **(dict(extra) if extra else {}),
    }


def write_manifest(directory: str | Path, name: str, manifest: Mapping) -> Path:
    return write_json(Path(directory) / f"{name}.manifest.json", manifest)
