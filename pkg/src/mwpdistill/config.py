"""Pipeline configuration file (YAML or JSON)."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional

import yaml

from .distiller import DistillSettings, PromptTemplates
from .equation import DEFAULT_PI
from .refine import RefineConfig


class ConfigError(ValueError):
    pass


_SECRET_KEYS = {"api_key", "apikey", "key", "token", "secret", "password"}


@dataclass
class Config:
    endpoint: str = "https://api.openai.com/v1"
    model: str = "gpt-3.5-turbo"
    api_key_env: str = "OPENAI_API_KEY"
    requests_per_minute: float = 60.0
    request_timeout: float = 120.0
    prompts: PromptTemplates = field(default_factory=PromptTemplates)
    tolerance: str = "1/10000"
    pi: float = DEFAULT_PI
    beam_width: int = 5
    max_iterations: int = 5
    max_ops: int = 4
    max_attempts: int = 3
    max_corrections: int = 5
    client_retries: int = 3
    backoff_seconds: float = 1.0
    temperature_fresh: float = 0.7
    temperature_correction: float = 0.0
    batch_size: int = 50
    malformed_threshold: float = 0.01
    field_aliases: Dict[str, List[str]] = field(default_factory=dict)

    @property
    def tolerance_value(self) -> Fraction:
        return Fraction(str(self.tolerance))

    def distill_settings(self) -> DistillSettings:
        return DistillSettings(self.max_attempts, self.max_corrections, self.client_retries,
                               self.backoff_seconds, self.temperature_fresh, self.temperature_correction,
                               self.pi, self.tolerance_value)

    def refine_config(self, seed=0, conciseness=True, concurrency=1) -> RefineConfig:
        return RefineConfig(self.beam_width, self.max_iterations, seed, conciseness, concurrency,
                            self.pi, self.tolerance_value)

    def hash(self) -> str:
        """Digest of everything that changes which pairs get accepted."""
        payload = {
            "prompts": self.prompts.as_dict(),
            "tolerance": str(self.tolerance_value),
            "pi": repr(float(self.pi)),
            "beam_width": self.beam_width,
            "max_ops": self.max_ops,
            "max_attempts": self.max_attempts,
            "max_corrections": self.max_corrections,
        }
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


def config_from_dict(data: Optional[dict]) -> Config:
    data = dict(data or {})
    secrets = _SECRET_KEYS & {k.lower() for k in data}
    if secrets:
        raise ConfigError(f"config files must not hold credentials ({', '.join(sorted(secrets))}); "
                          "set the environment variable named by api_key_env instead")
    known = {f.name for f in fields(Config)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    try:
        prompts = PromptTemplates.from_dict(data.pop("prompts", None))
        cfg = Config(prompts=prompts, **data)
        Fraction(str(cfg.tolerance))
        if cfg.beam_width < 1 or cfg.max_iterations < 0 or cfg.max_ops < 0:
            raise ValueError("beam_width must be >= 1, max_iterations and max_ops >= 0")
        if cfg.max_attempts < 1 or cfg.max_corrections < 0 or cfg.batch_size < 1:
            raise ValueError("max_attempts and batch_size must be >= 1, max_corrections >= 0")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path=None) -> Config:
    if path is None:
        return Config()
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return config_from_dict(data)
