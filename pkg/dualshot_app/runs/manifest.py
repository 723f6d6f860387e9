"""Run manifests: what a command was asked to do and what it wrote."""
from __future__ import annotations

from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from .hashing import sha256_file

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
PACKAGE_VERSION = "0.3.0"


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, Path):
        return value.as_posix()
    if hasattr(value, "item") and callable(value.item):
        return value.item()
    return value


@dataclass
class RunManifest:
    command: str
    seed: int
    config: Dict[str, Any] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)
    version: str = PACKAGE_VERSION

    def add_artifact(self, path, base: Optional[Path] = None) -> str:
        path = Path(path)
        key = path.relative_to(base).as_posix() if base is not None and path.is_relative_to(base) else path.name
        self.artifacts[key] = sha256_file(path)
        return self.artifacts[key]

    def add_artifacts(self, paths: Iterable, base: Optional[Path] = None) -> None:
        for path in paths:
            self.add_artifact(path, base)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "seed": self.seed,
            "config": _plain(self.config),
            "artifacts": dict(sorted(self.artifacts.items())),
            "version": self.version,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def write(self, directory) -> Path:
        path = Path(directory) / MANIFEST_NAME
        path.write_text(self.to_json(), encoding="utf-8")
        logger.debug("manifest %s: %d artifacts", path, len(self.artifacts))
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data["command"], data["seed"], data.get("config", {}),
                   data.get("artifacts", {}), data.get("version", PACKAGE_VERSION))
