"""Service configuration: JSON file -> validated AppConfig.

Secrets never live in the file; backends name an environment variable that
holds their token.  Validation errors carry the dotted field path.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import TmdError
from .gateway import (
    BackendKind,
    BackendRegistry,
    OfflineImageEditBackend,
    OfflineTextToImageBackend,
    RemoteImageBackend,
)

__all__ = ["BackendEntry", "AppConfig", "ConfigInvalid", "load_config", "build_registry"]


class ConfigInvalid(TmdError):
    code = "ConfigInvalid"


@dataclass(frozen=True)
class BackendEntry:
    backend_id: str
    kind: BackendKind
    mode: str = "offline"
    base_url: str = ""
    auth_env: str = ""
    max_in_flight: int = 0

    def __post_init__(self):
        if self.mode not in ("offline", "remote"):
            raise ConfigInvalid(f"backend {self.backend_id!r}: mode must be offline|remote")
        if self.mode == "remote" and not self.base_url:
            raise ConfigInvalid(f"backend {self.backend_id!r}: remote mode requires base_url")


def _default_backends() -> tuple[BackendEntry, ...]:
    return (
        BackendEntry(backend_id="offline_t2i", kind=BackendKind.TEXT_TO_IMAGE),
        BackendEntry(backend_id="offline_edit", kind=BackendKind.IMAGE_EDIT),
    )


@dataclass(frozen=True)
class AppConfig:
    """Everything the service needs at startup; see load_config for the
    JSON schema."""

    listen_host: str = "127.0.0.1"
    listen_port: int = 8032
    backends: tuple[BackendEntry, ...] = field(default_factory=_default_backends)
    rate_card_path: str = ""
    library_path: str = ""
    dataset_dir: str = "datasets"
    artifact_dir: str = "artifacts"
    meter_path: str = "artifacts/meters.jsonl"
    target_size: int = 512
    seed_policy: str = "fixed"
    default_seed: int = 0
    max_concurrency: int = 16
    tuner_mode: str = "offline"
    tuner_url: str = ""
    tuner_model: str = ""
    tuner_auth_env: str = ""
    studio_dir: str = ""

    def __post_init__(self):
        if not 0 < self.listen_port < 65536:
            raise ConfigInvalid("listen_port: must be in (0, 65536)")
        kinds = {entry.kind for entry in self.backends}
        for kind in BackendKind:
            if kind not in kinds:
                raise ConfigInvalid(f"backends: no backend bound for kind {kind.value!r}")
        if self.target_size not in (256, 512, 1024):
            raise ConfigInvalid("target_size: must be 256, 512 or 1024")
        if self.seed_policy not in ("fixed", "random"):
            raise ConfigInvalid("seed_policy: must be fixed|random")
        if self.max_concurrency < 1:
            raise ConfigInvalid("max_concurrency: must be >= 1")
        if self.tuner_mode not in ("offline", "remote"):
            raise ConfigInvalid("tuner_mode: must be offline|remote")
        if self.tuner_mode == "remote" and not self.tuner_url:
            raise ConfigInvalid("tuner_url: required when tuner_mode is remote")


_SCALAR_FIELDS = {
    "listen_host": str,
    "listen_port": int,
    "rate_card_path": str,
    "library_path": str,
    "dataset_dir": str,
    "artifact_dir": str,
    "meter_path": str,
    "target_size": int,
    "seed_policy": str,
    "default_seed": int,
    "max_concurrency": int,
    "tuner_mode": str,
    "tuner_url": str,
    "tuner_model": str,
    "tuner_auth_env": str,
    "studio_dir": str,
}


def load_config(path) -> AppConfig:
    """Parse and validate a JSON config file.

    Raises ConfigInvalid with the offending field path; input paths named
    in the file must exist.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid("config root must be a JSON object")

    kwargs: dict = {}
    for name, typ in _SCALAR_FIELDS.items():
        if name in raw:
            value = raw[name]
            if not isinstance(value, typ) or isinstance(value, bool):
                raise ConfigInvalid(f"{name}: expected {typ.__name__}")
            kwargs[name] = value

    if "backends" in raw:
        if not isinstance(raw["backends"], list):
            raise ConfigInvalid("backends: expected a list")
        entries = []
        for i, item in enumerate(raw["backends"]):
            if not isinstance(item, dict):
                raise ConfigInvalid(f"backends[{i}]: expected an object")
            try:
                kind = BackendKind(item.get("kind", ""))
            except ValueError:
                raise ConfigInvalid(
                    f"backends[{i}].kind: must be one of "
                    f"{[k.value for k in BackendKind]}"
                ) from None
            backend_id = item.get("backend_id", "")
            if not isinstance(backend_id, str) or not backend_id:
                raise ConfigInvalid(f"backends[{i}].backend_id: required string")
            entries.append(
                BackendEntry(
                    backend_id=backend_id,
                    kind=kind,
                    mode=item.get("mode", "offline"),
                    base_url=item.get("base_url", ""),
                    auth_env=item.get("auth_env", ""),
                    max_in_flight=int(item.get("max_in_flight", 0)),
                )
            )
        kwargs["backends"] = tuple(entries)

    unknown = set(raw) - set(_SCALAR_FIELDS) - {"backends"}
    if unknown:
        raise ConfigInvalid(f"unknown config fields: {sorted(unknown)}")

    config = AppConfig(**kwargs)
    for name in ("rate_card_path", "library_path"):
        value = getattr(config, name)
        if value and not Path(value).exists():
            raise ConfigInvalid(f"{name}: path does not exist: {value}")
    return config


def build_registry(config: AppConfig) -> BackendRegistry:
    """Instantiate and bind backends per the config; output dirs are
    created here so later stages can assume they exist."""
    Path(config.artifact_dir).mkdir(parents=True, exist_ok=True)
    Path(config.dataset_dir).mkdir(parents=True, exist_ok=True)
    Path(config.meter_path).parent.mkdir(parents=True, exist_ok=True)

    registry = BackendRegistry()
    for entry in config.backends:
        if entry.mode == "offline":
            backend = (
                OfflineTextToImageBackend(entry.backend_id)
                if entry.kind is BackendKind.TEXT_TO_IMAGE
                else OfflineImageEditBackend(entry.backend_id)
            )
        else:
            token = os.environ.get(entry.auth_env, "") if entry.auth_env else ""
            backend = RemoteImageBackend(
                entry.backend_id, entry.base_url, auth_token=token or None
            )
        registry.bind(entry.kind, backend, max_in_flight=entry.max_in_flight)
    return registry
