"""Service configuration: defaults < config file < ``WES_*`` environment < flags."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .encoder import DEFAULT_DIM, DEFAULT_SEED, REFERENCE_NAME, EncoderSpec
from .errors import ConfigError

ENV_PREFIX = "WES_"


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    max_patches_per_request: int = 5000
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    encoder_name: str = REFERENCE_NAME
    encoder_dim: int = DEFAULT_DIM
    encoder_seed: int = DEFAULT_SEED
    fetch_timeout_ms: int = 30_000
    fetch_retries: int = 2
    fetch_token: str = ""
    cache_frames: int = 64
    request_deadline_s: float = 300.0
    auth_token: str = ""

    def __post_init__(self):
        if not 0 <= self.port < 65536:
            raise ConfigError(f"port {self.port} out of range")
        for name in ("max_patches_per_request", "workers", "encoder_dim", "fetch_timeout_ms"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{key_for(name)} must be >= 1")
        if self.cache_frames < 0 or self.fetch_retries < 0:
            raise ConfigError("cache.frames and fetch.retries must be >= 0")
        if self.request_deadline_s <= 0:
            raise ConfigError("request.deadline_s must be positive")

    @property
    def encoder_spec(self) -> EncoderSpec:
        return EncoderSpec(self.encoder_name, self.encoder_dim, self.encoder_seed)


FIELDS = {f.name: f for f in dataclasses.fields(ServiceConfig)}
# config-file keys use dots for the first underscore of grouped settings
_GROUPED = ("encoder_", "fetch_", "cache_", "request_", "auth_")


def key_for(field_name: str) -> str:
    """``encoder_dim`` -> ``encoder.dim``; ungrouped names are unchanged."""
    for prefix in _GROUPED:
        if field_name.startswith(prefix):
            return prefix[:-1] + "." + field_name[len(prefix) :]
    return field_name


def env_for(field_name: str) -> str:
    return ENV_PREFIX + field_name.upper()


def flag_for(field_name: str) -> str:
    return "--" + field_name.replace("_", "-")


KEYS = {key_for(name): name for name in FIELDS}


def _coerce(name: str, raw):
    kind = type(FIELDS[name].default) if FIELDS[name].default is not dataclasses.MISSING else int
    if isinstance(raw, kind) and not (kind is int and isinstance(raw, bool)):
        return raw
    try:
        if kind is int:
            return int(str(raw).strip())
        if kind is float:
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"{key_for(name)}: cannot parse {raw!r} as {kind.__name__}") from None


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines (TOML-like: full-line ``#`` comments, optional quotes, ``[section]`` headers)."""
    values, section = {}, ""
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key = key.strip()
        if section:
            key = f"{section}.{key}"
        value = value.strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def load_config(path=None, env=None, overrides: dict | None = None) -> ServiceConfig:
    """Resolve a full config. ``overrides`` are flag values keyed by field name (None = unset)."""
    env = os.environ if env is None else env
    resolved = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for key, value in parse_config_text(text).items():
            resolved[KEYS[key]] = value
    for name in FIELDS:
        if env_for(name) in env:
            resolved[name] = env[env_for(name)]
    for name, value in (overrides or {}).items():
        if value is not None:
            if name not in FIELDS:
                raise ConfigError(f"unknown setting {name!r}")
            resolved[name] = value
    return ServiceConfig(**{name: _coerce(name, raw) for name, raw in resolved.items()})
