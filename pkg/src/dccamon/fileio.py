"""On-disk formats.

Binary payload files start with one line of JSON (the self-describing header)
followed by little-endian float64 data. Config files are INI-style
``key = value`` text with sections. Directories of artifacts carry a
``manifest.json`` written last, listing the SHA-256 of every file; readers
refuse directories whose manifest is missing or does not match.
"""
import configparser
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .errors import ArtifactError, ConfigError

FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


def _encode(header, payload):
    payload = np.ascontiguousarray(payload, dtype=_LE_F64)
    header = dict(header)
    header.setdefault("version", FORMAT_VERSION)
    header["dtype"] = "<f8"
    header["count"] = int(payload.size)
    line = json.dumps(header, sort_keys=True, separators=(",", ":"))
    if "\n" in line:
        raise ValueError("header must serialise to a single line")
    return line.encode("utf-8") + b"\n" + payload.tobytes()


def write_blob(path, header, payload):
    """Write a header line and a float64 payload; returns the file path."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_encode(header, payload))
    return path


def read_blob(source):
    """Read ``(header, flat float64 array)`` from a path or binary stream."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return read_blob(fh)
    return _read_record(source.readline(), source)


def _read_record(line, source):
    if not line.endswith(b"\n"):
        raise ArtifactError("truncated header")
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"malformed header: {exc}") from None
    count = int(header.get("count", -1))
    if count < 0:
        raise ArtifactError("header lacks a payload count")
    raw = source.read(count * 8)
    if len(raw) != count * 8:
        raise ArtifactError(f"payload truncated: expected {count * 8} bytes, got {len(raw)}")
    return header, np.frombuffer(raw, dtype=_LE_F64).astype(np.float64)


def write_tensor(path, array, **meta):
    array = np.asarray(array, dtype=np.float64)
    header = {"format": "dccamon-tensor", "shape": list(array.shape), **meta}
    return write_blob(path, header, array)


def append_tensor(stream, array, **meta):
    """Write one tensor record to an open binary stream."""
    array = np.asarray(array, dtype=np.float64)
    stream.write(_encode({"format": "dccamon-tensor", "shape": list(array.shape), **meta}, array))


def read_tensor(source):
    header, flat = read_blob(source)
    if header.get("format") != "dccamon-tensor":
        raise ArtifactError(f"not a tensor file (format={header.get('format')!r})")
    return flat.reshape(header["shape"]), header


def iter_tensors(stream):
    """Yield ``(array, header)`` for consecutive tensor records on a binary stream."""
    while True:
        line = stream.readline()
        if not line:
            return
        header, flat = _read_record(line, stream)
        if header.get("format") != "dccamon-tensor":
            raise ArtifactError(f"not a tensor record (format={header.get('format')!r})")
        yield flat.reshape(header["shape"]), header


# ------------------------------------------------------------------ bitmaps


def write_pbm(path, image):
    """Binary portable bitmap (P4); 1 = lit pixel."""
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    packed = np.packbits(image.astype(bool), axis=1)
    with open(path, "wb") as fh:
        fh.write(f"P4\n{w} {h}\n".encode("ascii"))
        fh.write(packed.tobytes())


def read_pbm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 3:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P4":
        raise ArtifactError(f"{path}: not a P4 bitmap")
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1
    row_bytes = (w + 7) // 8
    packed = np.frombuffer(data[pos:pos + h * row_bytes], dtype=np.uint8).reshape(h, row_bytes)
    return np.unpackbits(packed, axis=1)[:, :w]


# ------------------------------------------------------------------ configs


def read_config(path):
    """Parse an INI config into ``{section: {key: raw string}}``.

    Errors carry the file name and line number where possible.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    lines = {}
    with open(path) as fh:
        section = None
        for lineno, text in enumerate(fh, 1):
            stripped = text.strip()
            if stripped.startswith("[") and stripped.endswith("]"):
                section = stripped[1:-1].strip()
            elif "=" in stripped and section is not None and not stripped.startswith(("#", ";")):
                lines[(section, stripped.split("=", 1)[0].strip().lower())] = lineno
    out = {s: dict(parser[s]) for s in parser.sections()}
    out["__lines__"] = lines
    out["__path__"] = str(path)
    return out


def config_hash(obj):
    """Stable short hash of a JSON-serialisable object."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not serialisable: {type(x)}")


def dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ArtifactError(f"missing file {path}") from None
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"corrupt JSON in {path}: {exc}") from None


# ---------------------------------------------------------------- manifests


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory, kind, config_digest, extra=None):
    """Hash every file under ``directory`` and write ``manifest.json`` last."""
    directory = Path(directory)
    files = {}
    for path in sorted(directory.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            files[path.relative_to(directory).as_posix()] = _sha256(path)
    manifest = {"kind": kind, "config_hash": config_digest, "files": files, "version": FORMAT_VERSION}
    if extra:
        manifest.update(extra)
    tmp = directory / "manifest.json.tmp"
    dump_json(tmp, manifest)
    os.replace(tmp, directory / "manifest.json")
    return manifest


def verify_manifest(directory, kind=None, config_digest=None, deep=True):
    """Check a directory against its manifest and return the manifest.

    Raises ``ArtifactError`` on a missing manifest, wrong kind, config hash
    mismatch, or any file whose digest differs.
    """
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.exists():
        raise ArtifactError(f"{directory}: no manifest (artifact missing or partially written)")
    manifest = load_json(path)
    if kind is not None and manifest.get("kind") != kind:
        raise ArtifactError(f"{directory}: expected a {kind} artifact, found {manifest.get('kind')!r}")
    if config_digest is not None and manifest.get("config_hash") != config_digest:
        raise ArtifactError(
            f"{directory}: config hash {manifest.get('config_hash')} does not match {config_digest}"
        )
    if deep:
        for rel, digest in manifest["files"].items():
            f = directory / rel
            if not f.exists():
                raise ArtifactError(f"{directory}: listed file {rel} is missing")
            if _sha256(f) != digest:
                raise ArtifactError(f"{directory}: file {rel} does not match its manifest digest")
    return manifest
