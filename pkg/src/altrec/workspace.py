"""Workspace artifact lineage: content fingerprints and staleness checks.

Every pipeline stage records, in the workspace manifest, the SHA-256 of
each file it wrote and of each input it consumed. A consuming stage then
refuses to run if a produced artifact was modified on disk or if any of
its recorded inputs no longer hashes to the value it was built from, so
stale intermediate files are never silently reused.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import MissingArtifactError, StaleArtifactError

MANIFEST_NAME = "manifest.json"


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class Manifest:
    def __init__(self, workspace):
        self.workspace = Path(workspace)
        self.path = self.workspace / MANIFEST_NAME
        self.artifacts: dict[str, dict] = {}

    @classmethod
    def load(cls, workspace) -> "Manifest":
        manifest = cls(workspace)
        if manifest.path.exists():
            with open(manifest.path, encoding="utf-8") as handle:
                payload = json.load(handle)
            manifest.artifacts = payload.get("artifacts", {})
        return manifest

    def save(self) -> None:
        self.workspace.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as handle:
            json.dump({"artifacts": self.artifacts}, handle, indent=2, sort_keys=True)
            handle.write("\n")

    def record(self, name: str, path, inputs: dict[str, Path] | None = None) -> None:
        """Register a freshly written artifact and the inputs it came from."""
        self.artifacts[name] = {
            "sha256": file_sha256(path),
            "inputs": {
                input_name: file_sha256(input_path)
                for input_name, input_path in sorted((inputs or {}).items())
            },
        }

    def require(
        self,
        name: str,
        path,
        producer: str,
        input_paths: dict[str, Path] | None = None,
    ) -> None:
        """Validate an artifact before consuming it.

        Raises MissingArtifactError when the file does not exist, and
        StaleArtifactError when it no longer matches its recorded hash or
        when any recorded input has changed since the artifact was
        produced. Files without a manifest entry (externally supplied
        inputs) are accepted as-is.
        """
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError(
                f"{name} not found at {path}; run `altrec {producer}` first"
            )
        entry = self.artifacts.get(name)
        if entry is None:
            return
        if file_sha256(path) != entry["sha256"]:
            raise StaleArtifactError(
                f"{name} at {path} was modified after it was produced; rerun `altrec {producer}`"
            )
        for input_name, recorded_hash in entry.get("inputs", {}).items():
            input_path = (input_paths or {}).get(input_name)
            if input_path is None or not Path(input_path).exists():
                continue
            if file_sha256(input_path) != recorded_hash:
                raise StaleArtifactError(
                    f"{name} is stale: its input {input_name} changed since "
                    f"`altrec {producer}` ran; rerun `altrec {producer}`"
                )
