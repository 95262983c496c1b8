"""Run manifests: what went in, what came out, and a hash that ignores wall-clock time."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__

TOOL = "hspkit"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_hash: str = ""
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    row_counts: dict[str, int] = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    created_at: str = ""

    def add_input(self, path) -> None:
        self.inputs[Path(path).name] = sha256_file(path)

    def add_output(self, path) -> None:
        self.outputs[Path(path).name] = sha256_file(path)

    def content(self) -> dict:
        return {
            "tool": TOOL,
            "version": __version__,
            "command": self.command,
            "config_hash": self.config_hash,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "row_counts": dict(sorted(self.row_counts.items())),
            "notes": self.notes,
        }

    def manifest_hash(self) -> str:
        blob = json.dumps(self.content(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def write(self, path) -> str:
        if not self.created_at:
            self.created_at = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        doc = {**self.content(), "manifest_hash": self.manifest_hash(), "created_at": self.created_at}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return doc["manifest_hash"]
