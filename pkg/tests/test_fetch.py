"""Fetch behavior against a local HTTP server: checksum skipping, retry on
mismatch, and per-file failure reporting."""

import hashlib
import http.server
import threading

import pytest

from kpcast.fetch import fetch, parse_manifest


@pytest.fixture
def http_dir(tmp_path):
    serve_dir = tmp_path / "serve"
    serve_dir.mkdir()
    handler = lambda *a, **kw: http.server.SimpleHTTPRequestHandler(
        *a, directory=str(serve_dir), **kw
    )
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield serve_dir, f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


def sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def test_empty_manifest(tmp_path):
    manifest = tmp_path / "manifest.txt"
    manifest.write_text("# nothing here\n")
    result = fetch(manifest, tmp_path / "out")
    assert result.ok
    assert result.downloaded == [] and result.skipped == []


def test_download_and_skip_cached(tmp_path, http_dir):
    serve_dir, url = http_dir
    payload = b"satellite data\n"
    (serve_dir / "data.txt").write_bytes(payload)
    manifest = tmp_path / "manifest.txt"
    manifest.write_text(f"{url}/data.txt data.txt {sha(payload)}\n")
    out = tmp_path / "out"

    first = fetch(manifest, out)
    assert first.downloaded == ["data.txt"]
    assert (out / "data.txt").read_bytes() == payload
    assert sha(payload) in (out / "checksums.txt").read_text()

    second = fetch(manifest, out)
    assert second.skipped == ["data.txt"]
    assert second.downloaded == []


def test_skip_uses_recorded_checksum_without_expected(tmp_path, http_dir):
    serve_dir, url = http_dir
    (serve_dir / "a.bin").write_bytes(b"abc")
    manifest = tmp_path / "manifest.txt"
    manifest.write_text(f"{url}/a.bin a.bin\n")
    out = tmp_path / "out"
    assert fetch(manifest, out).downloaded == ["a.bin"]
    assert fetch(manifest, out).skipped == ["a.bin"]


def test_bad_checksum_fails_after_retry(tmp_path, http_dir):
    serve_dir, url = http_dir
    (serve_dir / "b.bin").write_bytes(b"real content")
    manifest = tmp_path / "manifest.txt"
    manifest.write_text(f"{url}/b.bin b.bin {'0' * 64}\n")
    result = fetch(manifest, tmp_path / "out")
    assert not result.ok
    assert result.failed[0][0] == "b.bin"
    assert "checksum mismatch" in result.failed[0][1]


def test_unreachable_url_is_per_file_failure(tmp_path, http_dir):
    serve_dir, url = http_dir
    (serve_dir / "ok.txt").write_bytes(b"fine")
    manifest = tmp_path / "manifest.txt"
    manifest.write_text(
        f"{url}/missing.txt missing.txt\n{url}/ok.txt ok.txt\n"
    )
    result = fetch(manifest, tmp_path / "out")
    assert result.downloaded == ["ok.txt"]
    assert len(result.failed) == 1


def test_manifest_parse_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("http://x one two three four\n")
    with pytest.raises(Exception):
        parse_manifest(bad)
