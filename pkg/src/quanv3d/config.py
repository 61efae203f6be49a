"""Training configuration: defaults, validation, flat config files.

Config files are plain ``key = value`` text, one setting per line, ``#``
comments allowed.  Keys are the :class:`TrainConfig` field names; tuple
fields take comma-separated values (``kernel_sizes = 2,3,4``) and
``grid_dims`` additionally accepts a single number meaning a cubic grid.
Precedence everywhere in the package: built-in defaults, then the config
file, then explicit flags.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, Tuple, Union

__all__ = [
    "ConfigError",
    "ALLOWED_FILTER_COUNTS",
    "ALLOWED_KERNEL_SIZES",
    "TrainConfig",
    "load_config_file",
    "apply_overrides",
    "format_config",
]

ALLOWED_FILTER_COUNTS = (1, 2, 4, 6, 8)
ALLOWED_KERNEL_SIZES = (2, 3, 4)


class ConfigError(ValueError):
    """An invalid or inconsistent training configuration."""


@dataclass(frozen=True)
class TrainConfig:
    num_filters: int = 2
    kernel_sizes: Tuple[int, ...] = (2,)
    rf_lambda: float = 0.1
    learning_rate: float = 0.001
    batch_size: int = 8
    eval_batch_size: int = 128
    epochs: int = 30
    grid_dims: Tuple[int, int, int] = (32, 32, 32)
    threshold: int = 1
    stride: int = 2
    num_qubits: int = 4
    hidden_units: int = 128
    seed: int = 0
    threads: int = 1

    def normalized(self) -> "TrainConfig":
        """Validate and expand shorthand; raises :class:`ConfigError`.

        A single kernel size fans out to every filter, so
        ``kernel_sizes=(2,)`` with four filters means ``(2, 2, 2, 2)``.
        """
        cfg = self
        if cfg.num_filters not in ALLOWED_FILTER_COUNTS:
            raise ConfigError(
                f"num_filters must be one of {ALLOWED_FILTER_COUNTS}, "
                f"got {cfg.num_filters}"
            )
        ks = tuple(int(k) for k in cfg.kernel_sizes)
        if len(ks) == 1:
            ks = ks * cfg.num_filters
        if len(ks) != cfg.num_filters:
            raise ConfigError(
                f"{cfg.num_filters} filters need {cfg.num_filters} kernel sizes "
                f"(or one shared), got {len(ks)}"
            )
        for k in ks:
            if k not in ALLOWED_KERNEL_SIZES:
                raise ConfigError(
                    f"kernel size must be one of {ALLOWED_KERNEL_SIZES}, got {k}"
                )
        cfg = replace(cfg, kernel_sizes=ks)
        gd = cfg.grid_dims
        if isinstance(gd, int):
            gd = (gd, gd, gd)
        gd = tuple(int(d) for d in gd)
        if len(gd) == 1:
            gd = gd * 3
        if len(gd) != 3 or any(d < 1 for d in gd):
            raise ConfigError(f"grid_dims must be three positive integers, got {cfg.grid_dims}")
        cfg = replace(cfg, grid_dims=gd)
        if cfg.rf_lambda < 0:
            raise ConfigError(f"rf_lambda must be >= 0, got {cfg.rf_lambda}")
        if cfg.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {cfg.learning_rate}")
        if cfg.batch_size < 1 or cfg.eval_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if cfg.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {cfg.epochs}")
        if cfg.threshold < 1:
            raise ConfigError(f"threshold must be >= 1, got {cfg.threshold}")
        if cfg.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {cfg.stride}")
        if not 1 <= cfg.num_qubits <= 8:
            raise ConfigError(f"num_qubits must be in 1..8, got {cfg.num_qubits}")
        if cfg.hidden_units < 1:
            raise ConfigError(f"hidden_units must be >= 1, got {cfg.hidden_units}")
        if cfg.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {cfg.threads}")
        if any(d < max(ks) for d in gd):
            raise ConfigError(
                f"grid dims {gd} smaller than the largest kernel {max(ks)}"
            )
        return cfg

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        data = json.loads(text)
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        coerced = dict(data)
        for key in ("kernel_sizes", "grid_dims"):
            if key in coerced and not isinstance(coerced[key], int):
                coerced[key] = tuple(int(v) for v in coerced[key])
        return cls(**coerced)


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in ("kernel_sizes", "grid_dims"):
        return tuple(int(p) for p in raw.split(","))
    if key in ("rf_lambda", "learning_rate"):
        return float(raw)
    return int(raw)


def load_config_file(path: Union[str, Path]) -> Dict:
    """Read ``key = value`` overrides (not yet validated as a whole)."""
    path = Path(path)
    known = {f.name for f in fields(TrainConfig)}
    out: Dict = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, raw = body.partition("=")
        key = key.strip()
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown setting {key!r}")
        try:
            out[key] = _parse_value(key, raw)
        except ValueError:
            raise ConfigError(
                f"{path}:{lineno}: bad value {raw.strip()!r} for {key}"
            ) from None
    return out


def apply_overrides(base: TrainConfig, overrides: Dict) -> TrainConfig:
    """Layer a dict of overrides onto a config (unknown keys rejected)."""
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return replace(base, **overrides)


def format_config(cfg: TrainConfig) -> str:
    """The effective-config banner: every field, one line each, sorted."""
    data = asdict(cfg)
    lines = ["# effective-config"]
    for key in sorted(data):
        value = data[key]
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"# {key} = {value}")
    return "\n".join(lines)
