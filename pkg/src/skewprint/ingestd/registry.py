"""On-disk session and model registry.

Layout under the root directory::

    sessions/<device_id>/<session_id>.jsonl   one file per session, never rewritten
    models/<model_id>.json                    canonical model artifact JSON
    index.json                                derived; rebuildable by a directory scan

Files are written to a temporary name in the target directory and moved into
place with ``os.replace``, so readers never observe a partial file and a
crash mid-write leaves nothing indexed.
"""
from __future__ import annotations

import json
import os
import re
import tempfile
import threading
from collections import defaultdict
from pathlib import Path
from typing import Any

from ..learners import ModelArtifact
from ..simulator import MeasurementSession
from .codec import CodecError, canonical, session_from_jsonl, session_to_jsonl

HOME_ENV = "SKEWPRINT_HOME"
DEFAULT_HOME = "~/.skewprint"
INDEX_VERSION = 1

# ids become path components
_SAFE_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._:-]{0,127}$")


class RegistryError(ValueError):
    def __init__(self, code: str, message: str = ""):
        super().__init__(message or code)
        self.code = code


def default_root() -> Path:
    return Path(os.environ.get(HOME_ENV) or DEFAULT_HOME).expanduser()


def _check_id(kind: str, value: str) -> str:
    if not isinstance(value, str) or not _SAFE_ID.match(value):
        raise RegistryError("malformed", f"invalid {kind} {value!r}")
    return value


def _fs_name(device_id: str) -> str:
    # ':' is not portable in file names
    return device_id.replace(":", "-")


def atomic_write(path: Path, data: bytes, overwrite: bool = True) -> bool:
    """Write ``data`` to ``path`` via a temp file and rename.

    With ``overwrite=False`` an existing file is left alone and ``False`` is
    returned.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        if not overwrite:
            try:
                # link fails if the target exists, giving create-once semantics
                os.link(tmp, path)
            except FileExistsError:
                return False
            return True
        os.replace(tmp, path)
        return True
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


class Registry:
    def __init__(self, root=None):
        self.root = Path(root) if root is not None else default_root()
        self.sessions_dir = self.root / "sessions"
        self.models_dir = self.root / "models"
        self.index_path = self.root / "index.json"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self.models_dir.mkdir(parents=True, exist_ok=True)
        self._device_locks: defaultdict[str, threading.Lock] = defaultdict(threading.Lock)
        self._locks_guard = threading.Lock()
        self._index_lock = threading.Lock()

    def _device_lock(self, device_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._device_locks[device_id]

    # -- sessions -----------------------------------------------------------

    def session_path(self, device_id: str, session_id: str) -> Path:
        return self.sessions_dir / _fs_name(device_id) / f"{session_id}.jsonl"

    def put_session(self, session: MeasurementSession) -> Path:
        """Store ``session``; resubmitting identical bytes is a no-op.

        A different session under an existing id raises code ``conflict``.
        """
        _check_id("device_id", session.device_id)
        _check_id("session_id", session.session_id)
        data = session_to_jsonl(session)
        path = self.session_path(session.device_id, session.session_id)
        with self._device_lock(session.device_id):
            if not atomic_write(path, data, overwrite=False):
                if path.read_bytes() != data:
                    raise RegistryError("conflict", f"session {session.session_id} already stored")
                return path
        with self._index_lock:
            index = self._read_index()
            index["sessions"][session.session_id] = self._session_entry(path, session)
            self._write_index(index)
        return path

    def get_session(self, session_id: str) -> MeasurementSession:
        entry = self.index()["sessions"].get(session_id)
        if entry is None:
            raise RegistryError("unknown_session", f"unknown session {session_id!r}")
        return session_from_jsonl((self.root / entry["path"]).read_bytes())

    def sessions_for(self, device_id: str) -> list[MeasurementSession]:
        d = self.sessions_dir / _fs_name(device_id)
        return [session_from_jsonl(p.read_bytes()) for p in sorted(d.glob("*.jsonl"))]

    # -- models -------------------------------------------------------------

    def model_path(self, model_id: str) -> Path:
        return self.models_dir / f"{model_id}.json"

    def put_model(self, model: ModelArtifact) -> str:
        data = model.to_json()
        model_id = model.model_id
        atomic_write(self.model_path(model_id), data, overwrite=False)
        with self._index_lock:
            index = self._read_index()
            index["models"][model_id] = self._model_entry(self.model_path(model_id), model)
            self._write_index(index)
        return model_id

    def get_model(self, model_id: str) -> ModelArtifact:
        if not isinstance(model_id, str) or not _SAFE_ID.match(model_id):
            raise RegistryError("unknown_model", f"unknown model {model_id!r}")
        path = self.model_path(model_id)
        if not path.exists():
            raise RegistryError("unknown_model", f"unknown model {model_id!r}")
        return ModelArtifact.load(path)

    def model_ids(self) -> list[str]:
        return sorted(self.index()["models"])

    # -- index --------------------------------------------------------------

    def _session_entry(self, path: Path, session: MeasurementSession) -> dict[str, Any]:
        return {
            "device_id": session.device_id,
            "path": path.relative_to(self.root).as_posix(),
            "n_records": len(session.measurements),
            "collector_kind": session.collector_kind,
        }

    def _model_entry(self, path: Path, model: ModelArtifact) -> dict[str, Any]:
        entry = {
            "path": path.relative_to(self.root).as_posix(),
            "algorithm": model.spec.name,
            "labels": model.labels,
        }
        if "device_id" in model.metadata:
            entry["device_id"] = model.metadata["device_id"]
        return entry

    @staticmethod
    def _empty_index() -> dict[str, Any]:
        return {"version": INDEX_VERSION, "sessions": {}, "models": {}}

    def _read_index(self) -> dict[str, Any]:
        if not self.index_path.exists():
            return self._scan()
        try:
            return json.loads(self.index_path.read_bytes())
        except json.JSONDecodeError:
            return self._scan()

    def _write_index(self, index: dict[str, Any]) -> None:
        atomic_write(self.index_path, canonical(index) + b"\n")

    def index(self) -> dict[str, Any]:
        with self._index_lock:
            return self._read_index()

    def _scan(self) -> dict[str, Any]:
        index = self._empty_index()
        for path in sorted(self.sessions_dir.glob("*/*.jsonl")):
            try:
                session = session_from_jsonl(path.read_bytes())
            except CodecError:
                continue
            index["sessions"][session.session_id] = self._session_entry(path, session)
        for path in sorted(self.models_dir.glob("*.json")):
            try:
                model = ModelArtifact.load(path)
            except (ValueError, KeyError):
                continue
            index["models"][path.stem] = self._model_entry(path, model)
        return index

    def rebuild_index(self) -> dict[str, Any]:
        """Recreate ``index.json`` from the files on disk."""
        with self._index_lock:
            index = self._scan()
            self._write_index(index)
            return index
