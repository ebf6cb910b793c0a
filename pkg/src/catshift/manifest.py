"""Run manifests: what a command consumed, produced, and how long it took."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .ioutil import sha256_file, write_json


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)  # path -> sha256
    outputs: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    tool_version: str = __version__
    created_utc: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds")
    )

    def add_input(self, path: Path | str) -> None:
        path = Path(path)
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path: Path | str) -> None:
        self.outputs.append(str(path))

    def write(self, path: Path | str) -> Path:
        path = Path(path)
        write_json(
            path,
            {
                "kind": "run_manifest",
                "version": "1",
                "command": self.command,
                "argv": self.argv,
                "config": self.config,
                "inputs": dict(sorted(self.inputs.items())),
                "outputs": sorted(self.outputs),
                "timings": self.timings,
                "tool_version": self.tool_version,
                "created_utc": self.created_utc,
            },
        )
        return path
