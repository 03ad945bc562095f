"""Application configuration: provider settings, workflow and optimizer knobs,
paths.  YAML on disk; unset optimizer fields fall back to the documented
defaults."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .optimizer import OptimizerConfig
from .workflow import WorkflowConfig


class ConfigError(ValueError):
    pass


@dataclass
class ProviderConfig:
    kind: str = "mock"  # "mock" | "http"
    model_id: str = "primary"
    endpoint: str = ""
    api_key_env: str = "SCAUDIT_API_KEY"
    script_path: Optional[str] = None  # mock script file
    embedding_dim: int = 64


@dataclass
class AppConfig:
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    workflow: WorkflowConfig = field(default_factory=WorkflowConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    kb_index_path: Optional[str] = None
    cache_dir: Optional[str] = None
    output_dir: str = "out"
    rng_seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "provider": {f.name: getattr(self.provider, f.name) for f in fields(ProviderConfig)},
            "workflow": {
                "threshold_confidence": self.workflow.threshold_confidence,
                "prompts": self.workflow.prompts,
                "use_static": self.workflow.use_static,
                "use_rag": self.workflow.use_rag,
                "retrieval_k": self.workflow.retrieval_k,
                "model_id": self.workflow.model_id,
                "max_tokens": self.workflow.max_tokens,
            },
            "optimizer": {f.name: getattr(self.optimizer, f.name) for f in fields(OptimizerConfig)},
            "kb_index_path": self.kb_index_path,
            "cache_dir": self.cache_dir,
            "output_dir": self.output_dir,
            "rng_seed": self.rng_seed,
        }


def _build(cls: type, section: dict[str, Any], name: str) -> Any:
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"{name}: unknown fields {sorted(unknown)}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def config_from_dict(data: dict[str, Any]) -> AppConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    if "provider" not in data:
        raise ConfigError("missing required 'provider' block")
    provider = _build(ProviderConfig, data.get("provider") or {}, "provider")
    if provider.kind not in ("mock", "http"):
        raise ConfigError(f"provider.kind must be 'mock' or 'http', got {provider.kind!r}")
    if provider.kind == "http" and not provider.endpoint:
        raise ConfigError("provider.endpoint required for http providers")
    workflow = _build(WorkflowConfig, data.get("workflow") or {}, "workflow")
    optimizer = _build(OptimizerConfig, data.get("optimizer") or {}, "optimizer")
    return AppConfig(
        provider=provider,
        workflow=workflow,
        optimizer=optimizer,
        kb_index_path=data.get("kb_index_path"),
        cache_dir=data.get("cache_dir"),
        output_dir=data.get("output_dir", "out"),
        rng_seed=int(data.get("rng_seed", 0)),
    )


def load_config(path: str | Path) -> AppConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return config_from_dict(data or {})


def save_config(cfg: AppConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
