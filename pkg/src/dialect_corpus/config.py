"""Pipeline configuration.

Precedence, highest first: explicit overrides (CLI flags), environment
variables named ``DIALECT_CORPUS_<KEY>``, a TOML config file, built-in
defaults. The config file holds flat ``key = value`` pairs using the field
names of :class:`PipelineConfig`; a ``[section]`` header is accepted and
ignored so related keys can be grouped.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .records import Domain

ENV_PREFIX = "DIALECT_CORPUS_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # voice activity detection
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    vad_margin_db: float = 6.0
    noise_percentile: float = 10.0
    hangover_ms: float = 200.0
    merge_gap_s: float = 1.0
    # clip lengths
    min_s: float = 5.0
    max_s: float = 25.0
    # quality gate
    snr_floor_db: float = 5.0
    quality_floor: float = 2.5
    # speaker clustering (cosine distance)
    cluster_threshold: float = 0.3
    # pause classes for punctuation
    pause_short_s: float = 0.25
    pause_long_s: float = 0.5
    # confidence tiers
    strong_lo: float = 0.9
    weak_lo: float = 0.6
    # hypothesis fusion; order doubles as vote tie-break priority
    asr_systems: tuple[str, ...] = ("asr1", "asr2", "asr3")
    llm_prompt_file: str = ""
    default_domain: str = Domain.SHORT_VIDEO.value
    # backends and execution
    seed: int = 0
    timeout_ms: int = 30000
    retries: int = 1
    jobs: int = field(default_factory=lambda: os.cpu_count() or 1)

    def __post_init__(self) -> None:
        if not 0 < self.hop_ms <= self.frame_ms:
            raise ConfigError("need frame_ms >= hop_ms > 0")
        if not 0 < self.min_s < self.max_s:
            raise ConfigError("need 0 < min_s < max_s")
        if not 0 < self.pause_short_s < self.pause_long_s:
            raise ConfigError("need 0 < pause_short_s < pause_long_s")
        if not 0 <= self.weak_lo < self.strong_lo <= 1:
            raise ConfigError("need 0 <= weak_lo < strong_lo <= 1")
        if not 0 < self.cluster_threshold:
            raise ConfigError("cluster_threshold must be positive")
        if not 0 <= self.noise_percentile <= 100:
            raise ConfigError("noise_percentile must lie in [0, 100]")
        if not self.asr_systems:
            raise ConfigError("asr_systems must name at least one system")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.retries < 0 or self.timeout_ms <= 0:
            raise ConfigError("need retries >= 0 and timeout_ms > 0")
        try:
            Domain(self.default_domain)
        except ValueError:
            raise ConfigError(f"unknown default_domain {self.default_domain!r}") from None

    @property
    def frame_s(self) -> float:
        return self.frame_ms / 1000.0

    @property
    def hop_s(self) -> float:
        return self.hop_ms / 1000.0

    def digest(self) -> str:
        """Hash of every setting that can change stage output (``jobs`` excluded)."""
        data = asdict(self)
        data.pop("jobs")
        blob = json.dumps(data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_FIELD_TYPES = {f.name: f for f in fields(PipelineConfig)}


def _coerce(key: str, value: Any) -> Any:
    default = getattr(PipelineConfig, key, None)
    if key == "jobs":
        default = 1
    if key == "asr_systems":
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
            raise ConfigError("asr_systems must be a list of strings")
        return tuple(value)
    try:
        if isinstance(default, bool):
            return value if isinstance(value, bool) else str(value).lower() in {"1", "true", "yes"}
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r}") from None
    return str(value)


def _flatten(data: Mapping[str, Any]) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, dict):
            flat.update(_flatten(value))
        else:
            flat[key] = value
    return flat


def _apply(base: dict[str, Any], updates: Mapping[str, Any], origin: str) -> None:
    for key, value in updates.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{origin}: unknown config key {key!r}")
        base[key] = _coerce(key, value)


def load_config(path: str | Path | None = None, *, env: Mapping[str, str] | None = None,
                overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    values: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        _apply(values, _flatten(data), str(path))
    env = os.environ if env is None else env
    from_env = {
        key[len(ENV_PREFIX):].lower(): value
        for key, value in env.items()
        if key.startswith(ENV_PREFIX) and key[len(ENV_PREFIX):].lower() in _FIELD_TYPES
    }
    _apply(values, from_env, "environment")
    if overrides:
        _apply(values, {k: v for k, v in overrides.items() if v is not None}, "command line")
    return replace(PipelineConfig(), **values)
