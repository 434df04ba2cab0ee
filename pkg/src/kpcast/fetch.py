"""Checksum-aware download of configured URLs into a local directory."""

from __future__ import annotations

import hashlib
import logging
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

from .errors import KpcastError, ParseError

log = logging.getLogger(__name__)

CHECKSUM_FILE = "checksums.txt"


class FetchError(KpcastError):
    """One or more manifest entries could not be fetched."""


@dataclass(frozen=True)
class ManifestEntry:
    url: str
    name: str
    sha256: str | None = None


@dataclass
class FetchResult:
    downloaded: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failed: list[tuple[str, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed


def parse_manifest(path: str | Path) -> list[ManifestEntry]:
    """Lines of: URL DEST-NAME [SHA256]; comments and blanks ignored."""
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise ParseError("expected: URL NAME [SHA256]", line=lineno)
            entries.append(ManifestEntry(parts[0], parts[1], parts[2] if len(parts) == 3 else None))
    return entries


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_recorded(out_dir: Path) -> dict[str, str]:
    path = out_dir / CHECKSUM_FILE
    if not path.exists():
        return {}
    recorded = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            name, _, digest = line.partition("\t")
            recorded[name] = digest
    return recorded


def _save_recorded(out_dir: Path, recorded: dict[str, str]) -> None:
    lines = [f"{name}\t{recorded[name]}" for name in sorted(recorded)]
    (out_dir / CHECKSUM_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _download(url: str, dest: Path) -> None:
    with urllib.request.urlopen(url) as resp, open(dest, "wb") as fh:
        while True:
            chunk = resp.read(1 << 20)
            if not chunk:
                break
            fh.write(chunk)


def fetch(manifest_path: str | Path, out_dir: str | Path) -> FetchResult:
    """Download every manifest entry, recording checksums; files whose
    checksum already matches are skipped. A bad expected checksum triggers
    one re-download before the entry is marked failed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = parse_manifest(manifest_path)
    recorded = _load_recorded(out_dir)
    result = FetchResult()

    for entry in entries:
        dest = out_dir / entry.name
        want = entry.sha256 or recorded.get(entry.name)
        if dest.exists() and want and _sha256(dest) == want:
            result.skipped.append(entry.name)
            continue
        attempts = 2 if entry.sha256 else 1
        last_error = None
        for _ in range(attempts):
            try:
                _download(entry.url, dest)
            except (urllib.error.URLError, OSError) as exc:
                last_error = f"download failed: {exc}"
                continue
            got = _sha256(dest)
            if entry.sha256 and got != entry.sha256:
                last_error = f"checksum mismatch: got {got}, want {entry.sha256}"
                continue
            recorded[entry.name] = got
            result.downloaded.append(entry.name)
            last_error = None
            break
        if last_error:
            result.failed.append((entry.name, last_error))
            log.warning("%s: %s", entry.name, last_error)

    _save_recorded(out_dir, recorded)
    return result
