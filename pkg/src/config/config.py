import os
import logging

import yaml

logger = logging.getLogger(__name__)

__local_config = None

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# 未写入 config.yaml 时使用的默认值
DEFAULTS = {
    "engine": {
        "taylor_order": 4,
        "stability_bound": 0.1,
        "max_basis_size": 2_000_000,
        "table_layout": "target",
        "chunk_size": 20_000,
    },
    "oracle": {"max_dense_spins": 12},
    "cache": {"directory": "$LAYERSIM_CACHE_DIR"},
    "workers": 1,
    "logging": {"level": "INFO"},
}


def _merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(reload: bool = False):
    global __local_config
    if __local_config is None or reload:
        # 先看环境变量，再在当前目录查找，最后在项目根目录查找
        config_paths = [
            os.getenv("LAYERSIM_CONFIG", ""),
            "config.yaml",
            os.path.join(PROJECT_ROOT, "config.yaml"),
        ]
        config_file = None

        for path in config_paths:
            if path and os.path.exists(path):
                config_file = path
                break

        if config_file is None:
            logger.warning("未找到 config.yaml，使用内置默认配置")
            __local_config = _merge(DEFAULTS, {})
            return __local_config

        # 明确使用UTF-8编码打开文件，避免在Windows上使用默认的gbk编码
        with open(config_file, "r", encoding="utf-8") as f:
            __local_config = _merge(DEFAULTS, yaml.safe_load(f) or {})
    return __local_config


def resolve_env(value):
    """把形如 `$NAME` 的字符串替换成环境变量的值，未设置时返回 None"""
    if isinstance(value, str) and value.startswith("$"):
        return os.getenv(value[1:])
    return value


def get_config_section(key: str | list[str]) -> dict | None:
    section = load_config()
    path = []
    if isinstance(key, str):
        path.append(key)
    else:
        path.extend(key)
    for key in path:
        if section is None or not isinstance(section, dict) or key not in section:
            return None
        section = section[key]
    return resolve_env(section)


def cache_directory() -> str:
    directory = get_config_section(["cache", "directory"])
    if not directory:
        directory = os.path.join(os.path.expanduser("~"), ".cache", "layersim")
    return os.path.expanduser(directory)


def worker_count() -> int:
    env_workers = os.getenv("LAYERSIM_WORKERS")
    if env_workers:
        return max(1, int(env_workers))
    return max(1, int(get_config_section("workers") or 1))
