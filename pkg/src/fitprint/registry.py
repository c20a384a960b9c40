"""Append-only registry of fingerprint packages and models.

Directory layout::

    log.ndrec     one record per line, append-only
    artifacts/    content-addressed copies of registered files, named <sha256>
    lock          advisory lock held by the single writer

Each line of ``log.ndrec`` is canonical JSON (sorted keys, no spaces) with
these fields:

    seq             logical sequence number, 1-based, strictly increasing
    record_id       "rec-<seq zero-padded to 8>"
    owner           free-form owner id
    package_digest  hex SHA-256 of the package file
    model_digest    hex SHA-256 of the model file
    wall_time       UTC seconds, informational only
    check           first 16 hex chars of SHA-256 over the record without ``check``

A crash mid-append can only leave a final line that lacks its newline or
fails its check; opening the store drops such a tail. Damage anywhere else is
reported as corruption.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path

LOG_NAME = "log.ndrec"
ENV_VAR = "FITPRINT_REGISTRY"


class RegistryError(RuntimeError):
    pass


@dataclass(frozen=True)
class RegistryRecord:
    seq: int
    record_id: str
    owner: str
    package_digest: str
    model_digest: str
    wall_time: float

    def canonical(self) -> dict:
        return asdict(self)

    def to_line(self) -> str:
        body = self.canonical()
        body["check"] = _check(body)
        return json.dumps(body, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_line(cls, line: str) -> "RegistryRecord":
        body = json.loads(line)
        check = body.pop("check")
        if check != _check(body):
            raise ValueError("record checksum mismatch")
        return cls(**body)


def _check(body: dict) -> str:
    raw = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(raw).hexdigest()[:16]


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def precedence(a: RegistryRecord, b: RegistryRecord) -> str:
    """'a_first' or 'b_first' by sequence number; a record is not ordered against itself."""
    if a.seq == b.seq:
        raise ValueError(f"precedence undefined for a record and itself (seq {a.seq})")
    return "a_first" if a.seq < b.seq else "b_first"


def default_registry_dir() -> Path | None:
    value = os.environ.get(ENV_VAR)
    return Path(value) if value else None


class Registry:
    def __init__(self, root):
        self.root = Path(root)
        self.log_path = self.root / LOG_NAME
        self.artifacts = self.root / "artifacts"
        self.artifacts.mkdir(parents=True, exist_ok=True)
        self.log_path.touch(exist_ok=True)
        self._records: list[RegistryRecord] = []
        self._load()

    # -- loading

    def _load(self) -> None:
        raw = self.log_path.read_bytes()
        records, good_end = [], 0
        lines = raw.split(b"\n")
        complete, tail = lines[:-1], lines[-1]
        for i, line in enumerate(complete):
            try:
                rec = RegistryRecord.from_line(line.decode())
            except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
                if i == len(complete) - 1 and not tail:
                    # A final newline-terminated line that fails its check is a torn write.
                    break
                raise RegistryError(f"{self.log_path}: corrupt record on line {i + 1}: {exc}") from None
            expected = records[-1].seq + 1 if records else 1
            if rec.seq != expected:
                raise RegistryError(f"{self.log_path}: line {i + 1} has seq {rec.seq}, expected {expected}")
            records.append(rec)
            good_end += len(line) + 1
        self._records = records
        self._torn_tail = good_end != len(raw)

    def reload(self) -> None:
        self._load()

    @property
    def records(self) -> list[RegistryRecord]:
        return list(self._records)

    # -- writing

    @contextmanager
    def _writer(self):
        fd = os.open(self.root / "lock", os.O_RDWR | os.O_CREAT, 0o644)
        try:
            fcntl.flock(fd, fcntl.LOCK_EX)
            self._load()
            if self._torn_tail:
                self._truncate_tail()
            yield
        finally:
            fcntl.flock(fd, fcntl.LOCK_UN)
            os.close(fd)

    def _truncate_tail(self) -> None:
        size = sum(len(r.to_line().encode()) for r in self._records)
        with open(self.log_path, "r+b") as fh:
            fh.truncate(size)
            fh.flush()
            os.fsync(fh.fileno())
        self._torn_tail = False

    def _store_artifact(self, path, digest: str) -> None:
        dest = self.artifacts / digest
        if dest.exists():
            return
        tmp = self.artifacts / f".{digest}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(Path(path).read_bytes())
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, dest)

    def _append(self, line: str) -> None:
        with open(self.log_path, "ab") as fh:
            fh.write(line.encode())
            fh.flush()
            os.fsync(fh.fileno())

    def register(self, owner: str, package_path, model_path) -> RegistryRecord:
        from .models import load_model
        from .package_io import load_package

        try:
            load_package(package_path)
            load_model(model_path)
        except Exception as exc:
            raise RegistryError(f"cannot register: {exc}") from None
        pkg_digest, model_digest = sha256_file(package_path), sha256_file(model_path)
        with self._writer():
            if any(r.package_digest == pkg_digest for r in self._records):
                raise RegistryError(f"package {pkg_digest[:12]} already registered")
            seq = self._records[-1].seq + 1 if self._records else 1
            rec = RegistryRecord(seq, f"rec-{seq:08d}", owner, pkg_digest, model_digest,
                                 round(time.time(), 3))
            self._store_artifact(package_path, pkg_digest)
            self._store_artifact(model_path, model_digest)
            self._append(rec.to_line())
            self._records.append(rec)
        return rec

    # -- queries

    def lookup(self, digest: str | None = None, owner: str | None = None) -> list[RegistryRecord]:
        out = self._records
        if digest is not None:
            out = [r for r in out if digest in (r.package_digest, r.model_digest)]
        if owner is not None:
            out = [r for r in out if r.owner == owner]
        return list(out)

    def first_seq(self, digest: str) -> int | None:
        """Earliest sequence number at which ``digest`` appears as a package or model."""
        hits = self.lookup(digest=digest)
        return hits[0].seq if hits else None

    def artifact_path(self, digest: str) -> Path:
        return self.artifacts / digest

    def check_artifact(self, digest: str) -> bool:
        path = self.artifact_path(digest)
        return path.exists() and sha256_file(path) == digest
