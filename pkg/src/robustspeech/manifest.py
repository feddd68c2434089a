"""Dataset manifests: one JSON record per line, UTF-8.

Each entry describes one audio file. Paths are stored relative to the
manifest file so a corpus directory can be moved or rebuilt bit-identically;
they are resolved (and checked) at load time.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional

from .errors import EmptyManifest, ManifestError

ROLES = ("clean", "noisy", "noise")


@dataclass
class ManifestEntry:
    utterance_id: str
    audio_path: str
    duration_seconds: float
    role: str
    transcript: Optional[str] = None
    # pairing fields, present on entries produced by the corpus builder
    clean_path: Optional[str] = None
    snr_db: Optional[float] = None
    noise_id: Optional[str] = None
    seed: Optional[int] = None

    def to_record(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class Manifest:
    entries: list
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, target) -> Path:
        """Absolute path for a relative path or an entry's audio file."""
        rel_path = target.audio_path if isinstance(target, ManifestEntry) else target
        return (self.root / rel_path).resolve()

    def validate(self, check_paths: bool = True) -> None:
        ids = [e.utterance_id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate utterance ids: {dupes[:5]}")
        for e in self.entries:
            if e.role not in ROLES:
                raise ManifestError(f"{e.utterance_id}: unknown role {e.role!r}")
            if not e.duration_seconds > 0:
                raise ManifestError(f"{e.utterance_id}: non-positive duration")
            if check_paths:
                for p in filter(None, (e.audio_path, e.clean_path)):
                    if not self.resolve(p).is_file():
                        raise ManifestError(f"{e.utterance_id}: missing file {p}")


def save_manifest(manifest: Manifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            fh.write(json.dumps(e.to_record(), sort_keys=True) + "\n")
    return path


def load_manifest(path, check_paths: bool = True, allow_empty: bool = False) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                entries.append(ManifestEntry(**record))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ManifestError(f"{path}:{lineno}: bad record ({exc})") from exc
    manifest = Manifest(entries, root=path.parent)
    if not allow_empty and not entries:
        raise EmptyManifest(f"manifest {path} is empty")
    manifest.validate(check_paths=check_paths)
    return manifest


def relative_to_root(path, root) -> str:
    """Path stored in a manifest living at ``root``."""
    return os.path.relpath(Path(path).resolve(), Path(root).resolve())
