"""Service configuration: JSON file, environment overrides, CLI flags."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .engine import EngineConfig, EngineKind


class ConfigError(Exception):
    pass


@dataclass
class ServiceConfig:
    archive_endpoint: str = "http://127.0.0.1:8042"
    master_table_path: str = ""  # empty selects the bundled table
    engine: EngineConfig = field(default_factory=EngineConfig)
    manifest_store_path: str = "manifests.jsonl"
    bind_address: tuple[str, int] = ("127.0.0.1", 8083)
    max_concurrent_jobs: int = 2

    def validate(self) -> None:
        if self.master_table_path and not os.path.isabs(self.master_table_path):
            raise ConfigError("master_table_path must be absolute")
        if self.max_concurrent_jobs < 1:
            raise ConfigError("max_concurrent_jobs must be >= 1")


def parse_bind_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError("bind address must be host:port, got %r" % text)
    return host, int(port)


def _engine_from_dict(doc: dict) -> EngineConfig:
    kwargs: dict = {}
    if "kind" in doc:
        kwargs["kind"] = EngineKind(doc["kind"])
    for key in ("command_template", "timeout", "synthetic_threshold", "target_map"):
        if key in doc:
            kwargs[key] = doc[key]
    return EngineConfig(**kwargs)


def load_config(path: Optional[str] = None,
                env: Optional[Mapping[str, str]] = None,
                overrides: Optional[dict] = None) -> ServiceConfig:
    """Assemble the service configuration.

    Precedence, lowest to highest: defaults, JSON file, environment
    variables (ARCHIVE_ENDPOINT, MASTER_TABLE_PATH, BIND_ADDRESS), explicit
    overrides (CLI flags).
    """
    env = os.environ if env is None else env
    doc: dict = {}
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("cannot read config %s: %s" % (path, exc)) from exc

    cfg = ServiceConfig()
    if "archive_endpoint" in doc:
        cfg.archive_endpoint = str(doc["archive_endpoint"])
    if "master_table_path" in doc:
        cfg.master_table_path = str(doc["master_table_path"])
    if "manifest_store_path" in doc:
        cfg.manifest_store_path = str(doc["manifest_store_path"])
    if "bind_address" in doc:
        cfg.bind_address = parse_bind_address(str(doc["bind_address"]))
    if "max_concurrent_jobs" in doc:
        cfg.max_concurrent_jobs = int(doc["max_concurrent_jobs"])
    if "engine" in doc:
        cfg.engine = _engine_from_dict(doc["engine"])

    if env.get("ARCHIVE_ENDPOINT"):
        cfg.archive_endpoint = env["ARCHIVE_ENDPOINT"]
    if env.get("MASTER_TABLE_PATH"):
        cfg.master_table_path = env["MASTER_TABLE_PATH"]
    if env.get("BIND_ADDRESS"):
        cfg.bind_address = parse_bind_address(env["BIND_ADDRESS"])

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "bind_address" and isinstance(value, str):
            value = parse_bind_address(value)
        setattr(cfg, key, value)

    cfg.validate()
    return cfg
