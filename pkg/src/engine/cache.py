"""作用表磁盘缓存。

文件格式 `<key>.lstab`：第一行是 JSON 头（格式版本、基哈希、哈密顿量哈希、
代码版本、形状、非零元个数、负载哈希），之后是 zstd 压缩的 numpy 负载。
"""
import io
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np
import orjson
import xxhash
import zstandard
from tqdm import tqdm

from src import __version__
from src.config.config import cache_directory, get_config_section
from src.engine.action import ActionTable, action_rows, finish_table
from src.engine.basis import TruncatedBasis
from src.errors import CacheIntegrityError
from src.hamiltonian.terms import HamiltonianTerms

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
SUFFIX = ".lstab"


def cache_key(basis_hash: str, hamiltonian_hash: str, layout: str) -> str:
    return xxhash.xxh3_64_hexdigest(f"{basis_hash}:{hamiltonian_hash}:{layout}:{__version__}")


def atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _pack(header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    payload = zstandard.ZstdCompressor(level=3).compress(buffer.getvalue())
    header = dict(header, payload_hash=xxhash.xxh3_128_hexdigest(payload))
    return orjson.dumps(header) + b"\n" + payload


def _unpack(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise CacheIntegrityError(f"{path.name}: missing header")
    try:
        header = orjson.loads(raw[:newline])
    except orjson.JSONDecodeError as e:
        raise CacheIntegrityError(f"{path.name}: unreadable header ({e})") from e
    payload = raw[newline + 1:]
    if xxhash.xxh3_128_hexdigest(payload) != header.get("payload_hash"):
        raise CacheIntegrityError(f"{path.name}: payload hash mismatch")
    try:
        data = zstandard.ZstdDecompressor().decompress(payload)
        with np.load(io.BytesIO(data)) as npz:
            arrays = {name: npz[name] for name in npz.files}
    except (zstandard.ZstdError, ValueError, OSError) as e:
        raise CacheIntegrityError(f"{path.name}: corrupt payload ({e})") from e
    return header, arrays


def _header(basis: TruncatedBasis, hamiltonian: HamiltonianTerms, layout: str, **extra) -> dict:
    return {
        "format": FORMAT_VERSION,
        "basis_hash": basis.content_hash,
        "hamiltonian_hash": hamiltonian.content_hash(),
        "layout": layout,
        "code_version": __version__,
        "shape": [len(basis), len(basis)],
        **extra,
    }


def _check_header(header: dict, expected: dict, name: str):
    # 分块文件的 expected 还带 chunk 与 rows，逐项比对
    for field in expected:
        if header.get(field) != expected.get(field):
            raise CacheIntegrityError(
                f"{name}: {field} mismatch (cached {header.get(field)!r}, expected {expected.get(field)!r})"
            )


def save_table(table: ActionTable, basis: TruncatedBasis, hamiltonian: HamiltonianTerms,
               directory: Optional[str | Path] = None) -> Path:
    directory = Path(directory or cache_directory())
    key = cache_key(table.basis_hash, table.hamiltonian_hash, table.layout)
    source, target, coef = table.triples()
    header = _header(basis, hamiltonian, table.layout, nnz=int(table.nnz),
                     dropped_fraction=table.dropped_fraction)
    path = directory / f"{key}{SUFFIX}"
    atomic_write(path, _pack(header, {"source": source, "target": target, "coef": coef}))
    logger.info(f"作用表已缓存: {path}")
    return path


def load_table(path: str | Path, basis: TruncatedBasis, hamiltonian: HamiltonianTerms,
               layout: str) -> ActionTable:
    """读取并校验缓存文件

    Raises:
        CacheIntegrityError: 文件损坏或哈希不匹配
    """
    path = Path(path)
    header, arrays = _unpack(path)
    _check_header(header, _header(basis, hamiltonian, layout), path.name)
    if len(arrays.get("coef", ())) != header.get("nnz"):
        raise CacheIntegrityError(f"{path.name}: nnz mismatch")
    table = finish_table(
        arrays["target"].tolist(), arrays["source"].tolist(), arrays["coef"].tolist(),
        1.0 - header.get("dropped_fraction", 0.0), header.get("dropped_fraction", 0.0),
        hamiltonian, basis, layout,
    )
    return table


def load_or_build(
        hamiltonian: HamiltonianTerms,
        basis: TruncatedBasis,
        directory: Optional[str | Path] = None,
        layout: Optional[str] = None,
        chunk_size: Optional[int] = None,
        progress: bool = False,
        use_cache: bool = True,
) -> ActionTable:
    """先查缓存，未命中或校验失败时分块构建；已完成的分块落盘，中断后可续建"""
    layout = layout or get_config_section(["engine", "table_layout"]) or "target"
    chunk_size = chunk_size or int(get_config_section(["engine", "chunk_size"]) or 20_000)
    directory = Path(directory or cache_directory())
    key = cache_key(basis.content_hash, hamiltonian.content_hash(), layout)
    path = directory / f"{key}{SUFFIX}"

    if use_cache and path.exists():
        try:
            table = load_table(path, basis, hamiltonian, layout)
            logger.info(f"作用表缓存命中: {path.name}")
            return table
        except CacheIntegrityError as e:
            logger.warning(f"缓存校验失败，重新构建: {e}")
            path.unlink(missing_ok=True)

    size = len(basis)
    n_chunks = math.ceil(size / chunk_size)
    rows, cols, values = [], [], []
    kept = dropped = 0.0
    for chunk in _chunk_iter(n_chunks, progress):
        part = directory / f"{key}.part{chunk}{SUFFIX}"
        start = chunk * chunk_size
        stop = min(size, start + chunk_size)
        expected = _header(basis, hamiltonian, layout, chunk=chunk, rows=[start, stop])
        arrays = None
        if use_cache and part.exists():
            try:
                header, arrays = _unpack(part)
                _check_header(header, expected, part.name)
                logger.debug(f"跳过已完成分块 {chunk}")
            except CacheIntegrityError as e:
                logger.warning(f"分块损坏，重新计算: {e}")
                arrays = None
        if arrays is None:
            r, c, v, k, d = action_rows(hamiltonian, basis, range(start, stop))
            arrays = {
                "target": np.asarray(r, dtype=np.int64),
                "source": np.asarray(c, dtype=np.int64),
                "coef": np.asarray(v, dtype=float),
                "weights": np.array([k, d]),
            }
            if use_cache:
                atomic_write(part, _pack(expected, arrays))
        rows.extend(arrays["target"].tolist())
        cols.extend(arrays["source"].tolist())
        values.extend(arrays["coef"].tolist())
        kept += float(arrays["weights"][0])
        dropped += float(arrays["weights"][1])

    table = finish_table(rows, cols, values, kept, dropped, hamiltonian, basis, layout)
    if use_cache:
        save_table(table, basis, hamiltonian, directory)
        # 换过分块大小时残留的旧分块一并清理
        for stale in directory.glob(f"{key}.part*{SUFFIX}"):
            stale.unlink(missing_ok=True)
    return table


def _chunk_iter(n_chunks: int, progress: bool):
    return tqdm(range(n_chunks), desc="action table", disable=not progress, unit="chunk")


def list_entries(directory: Optional[str | Path] = None) -> list[dict]:
    """列出缓存条目（只读头部，不解压负载）"""
    directory = Path(directory or cache_directory())
    if not directory.exists():
        return []
    entries = []
    for path in sorted(directory.glob(f"*{SUFFIX}")):
        with open(path, "rb") as f:
            line = f.readline()
        try:
            header = orjson.loads(line)
        except orjson.JSONDecodeError:
            header = {"error": "unreadable header"}
        entries.append({"file": path.name, "bytes": path.stat().st_size, **header})
    return entries


def purge(directory: Optional[str | Path] = None) -> int:
    directory = Path(directory or cache_directory())
    if not directory.exists():
        return 0
    removed = 0
    for path in directory.glob(f"*{SUFFIX}"):
        path.unlink()
        removed += 1
    logger.info(f"已删除 {removed} 个缓存文件")
    return removed
