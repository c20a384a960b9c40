"""Binary fingerprint-package files.

Layout (all integers little-endian)::

    magic    8 bytes  b"FPPKG\\0\\0\\1"
    version  u16
    hlen     u32      length of the JSON header that follows
    header   hlen     UTF-8 JSON: mapping, extraction, target grid, tensor shape
    bits     ceil(k/8) target bits, 1 = +1, MSB first
    x0       f8[n*C*H*W]
    r        f8[n*C*H*W]
    digest   32 bytes SHA-256 of every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .fingerprint import ExtractionConfig, FingerprintPackage, MappingConfig, TargetFingerprint

MAGIC = b"FPPKG\x00\x00\x01"
VERSION = 1


class PackageFileError(ValueError):
    pass


def _body(pkg: FingerprintPackage) -> bytes:
    header = {
        "mapping": asdict(pkg.mapping),
        "extraction": asdict(pkg.extraction),
        "target": {"mu": pkg.target.mu, "nu": pkg.target.nu, "provenance": pkg.target.provenance},
        "shape": list(pkg.x0.shape),
        "converged": bool(pkg.converged),
    }
    hb = json.dumps(header, sort_keys=True).encode()
    bits = np.packbits(pkg.target.bits > 0).tobytes()
    x0 = np.ascontiguousarray(pkg.x0, dtype="<f8").tobytes()
    r = np.ascontiguousarray(pkg.r, dtype="<f8").tobytes()
    return MAGIC + struct.pack("<HI", VERSION, len(hb)) + hb + bits + x0 + r


def package_to_bytes(pkg: FingerprintPackage) -> bytes:
    body = _body(pkg)
    return body + hashlib.sha256(body).digest()


def package_digest(pkg: FingerprintPackage) -> str:
    """Hex SHA-256 of the package file; the value a registry records."""
    return hashlib.sha256(package_to_bytes(pkg)).hexdigest()


def _known(cls, raw: dict) -> dict:
    names = {f.name for f in fields(cls)}
    extra = set(raw) - names
    if extra:
        raise PackageFileError(f"package header has unknown {cls.__name__} fields {sorted(extra)}")
    return raw


def package_from_bytes(raw: bytes) -> FingerprintPackage:
    if len(raw) < len(MAGIC) + 6 + 32 or raw[:len(MAGIC)] != MAGIC:
        raise PackageFileError("corrupt package file: bad magic bytes or truncated")
    body, stored = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != stored:
        raise PackageFileError("corrupt package file: digest mismatch")
    version, hlen = struct.unpack_from("<HI", raw, len(MAGIC))
    if version != VERSION:
        raise PackageFileError(f"unsupported package version {version} (expected {VERSION})")
    pos = len(MAGIC) + 6
    try:
        header = json.loads(body[pos:pos + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PackageFileError(f"corrupt package header: {exc}") from None
    pos += hlen
    t = header["target"]
    k = t["mu"] * t["nu"]
    nbytes = (k + 7) // 8
    bits = np.unpackbits(np.frombuffer(body[pos:pos + nbytes], dtype=np.uint8))[:k]
    pos += nbytes
    shape = tuple(header["shape"])
    count = int(np.prod(shape))
    if len(body) - pos != 2 * 8 * count:
        raise PackageFileError("corrupt package file: tensor section has the wrong length")
    x0 = np.frombuffer(body[pos:pos + 8 * count], dtype="<f8").reshape(shape).astype(np.float64)
    r = np.frombuffer(body[pos + 8 * count:], dtype="<f8").reshape(shape).astype(np.float64)
    target = TargetFingerprint(np.where(bits > 0, 1, -1).astype(np.int8), t["mu"], t["nu"], t["provenance"])
    mapping = MappingConfig(**_known(MappingConfig, header["mapping"]))
    extraction = ExtractionConfig(**_known(ExtractionConfig, header["extraction"]))
    return FingerprintPackage(target, mapping, x0, r, extraction, bool(header["converged"]))


def save_package(pkg: FingerprintPackage, path) -> str:
    raw = package_to_bytes(pkg)
    Path(path).write_bytes(raw)
    return hashlib.sha256(raw).hexdigest()


def load_package(path) -> FingerprintPackage:
    return package_from_bytes(Path(path).read_bytes())
