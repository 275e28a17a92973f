"""
Configuration for grsir runs.

Each setting is resolved in precedence order:
  1) CLI flag
  2) Env var         (GRSIR_THREADS for the worker count)
  3) config.yaml     (path from --config, else GRSIR_CONFIG, else config/config.yaml)
  4) built-in DEFAULTS below
"""
from __future__ import annotations

import copy
import os
import pathlib
from typing import Any, Dict, Optional

import yaml

from errors import InvalidConfig

REPO_ROOT = pathlib.Path(__file__).resolve().parent.parent
CONFIG_PATH_DEFAULT = REPO_ROOT / "config" / "config.yaml"

DEFAULTS: Dict[str, Any] = {
    "slices": 10,
    "link_bins": None,
    "tau_grid": {"log_min": -5.0, "log_max": 25.0, "count": 150, "base": "e"},
    "prior": {"name": "ridge", "tau": 1.0, "cutoff_d": None},
    "experiment": {
        "model": 1,
        "n": 100,
        "p": 50,
        "theta": 2.0,
        "theta_grid": [round(0.1 * i, 10) for i in range(31)],
        "noise_sd": 0.03,
        "replicates": 100,
        "seed": 0,
        "d": 20,
        "d_grid": [],
        "methods": ["sir", "ridge", "pca-sir", "tikhonov", "pca-ridge", "pca-tikhonov"],
    },
    "threads": 0,
}


def _merge(base: Dict[str, Any], over: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def config_path(cli_path: Optional[pathlib.Path]) -> pathlib.Path:
    if cli_path:
        return pathlib.Path(cli_path)
    env = os.getenv("GRSIR_CONFIG", "").strip()
    if env:
        return pathlib.Path(env)
    return CONFIG_PATH_DEFAULT


def read_config(path: Optional[pathlib.Path]) -> Dict[str, Any]:
    """DEFAULTS overlaid with the YAML file; an absent default file just means defaults."""
    path = pathlib.Path(path) if path else CONFIG_PATH_DEFAULT
    if not path.exists():
        if path == CONFIG_PATH_DEFAULT:
            return copy.deepcopy(DEFAULTS)
        raise InvalidConfig(f"--config: file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise InvalidConfig(f"--config: {path} is not valid YAML ({e})") from None
    if not isinstance(data, dict):
        raise InvalidConfig(f"--config: {path} must hold a mapping at the top level")
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise InvalidConfig(f"--config: unknown keys {unknown} in {path}")
    return _merge(DEFAULTS, data)


def resolve(cli_value: Any, config_value: Any, env_name: Optional[str] = None, cast=None) -> Any:
    # 1) CLI wins
    if cli_value is not None:
        return cli_value
    # 2) ENV
    if env_name:
        raw = os.getenv(env_name, "").strip()
        if raw:
            try:
                return cast(raw) if cast else raw
            except ValueError:
                raise InvalidConfig(f"{env_name}={raw!r} is not a valid value") from None
    # 3) config.yaml (already merged over DEFAULTS)
    return config_value


def resolve_threads(cli_threads: Optional[int], config: Dict[str, Any]) -> int:
    """Worker count; 0 or less means min(cpu_count, 4)."""
    threads = int(resolve(cli_threads, config.get("threads", 0), "GRSIR_THREADS", int))
    if threads <= 0:
        threads = min(os.cpu_count() or 1, 4)
    return threads


def parse_list(text: Optional[str], cast=float):
    """'0,0.5,1' -> (0.0, 0.5, 1.0); None stays None."""
    if text is None:
        return None
    try:
        return tuple(cast(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise InvalidConfig(f"cannot parse list {text!r}") from None
