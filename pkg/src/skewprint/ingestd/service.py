"""Ingestion and identification service over framed TCP.

Every request frame gets exactly one response frame.  Bad frames and
unknown message types produce an ``error`` response and the connection stays
open; only a connection that stops mid-frame is closed.
"""
from __future__ import annotations

import logging
import socket
import socketserver
import threading
from typing import Any, Mapping

from ..featurizer import FeaturizerError, WindowConfig, featurize_session
from ..identifier import IdentificationError, decide_identity
from ..learners import LearnerError, ModelArtifact
from ..simulator import MeasurementSession, SimulationError
from .codec import (
    MAX_FRAME,
    PROTOCOL_VERSION,
    CodecError,
    WireMessage,
    error_message,
    session_from_jsonl,
    session_from_obj,
    session_to_obj,
    unframe,
    _HEADER,
)
from .registry import Registry, RegistryError

log = logging.getLogger(__name__)


class ServiceError(Exception):
    def __init__(self, code: str, message: str = ""):
        super().__init__(message or code)
        self.code = code


class ModelCache(Mapping[str, ModelArtifact]):
    """Read-only view of registry models, loaded once and then shared."""

    def __init__(self, registry: Registry, preload: Mapping[str, ModelArtifact] | None = None):
        self.registry = registry
        self._models: dict[str, ModelArtifact] = dict(preload or {})
        self._lock = threading.Lock()

    def __getitem__(self, model_id: str) -> ModelArtifact:
        with self._lock:
            model = self._models.get(model_id)
            if model is None:
                try:
                    model = self.registry.get_model(model_id)
                except RegistryError:
                    raise KeyError(model_id) from None
                self._models[model_id] = model
            return model

    def __iter__(self):
        return iter(sorted(set(self._models) | set(self.registry.model_ids())))

    def __len__(self) -> int:
        return len(list(iter(self)))


def _payload_session(payload: Mapping[str, Any]) -> MeasurementSession:
    if "session" in payload:
        return session_from_obj(payload["session"])
    if "session_jsonl" in payload:
        text = payload["session_jsonl"]
        if not isinstance(text, str):
            raise CodecError("malformed", "session_jsonl must be a string")
        return session_from_jsonl(text.encode("utf-8"))
    raise CodecError("malformed", "payload carries no session")


def _check_session(session: MeasurementSession) -> None:
    try:
        session.validate()
    except SimulationError as exc:
        raise CodecError("malformed", str(exc)) from None


def _featurize(session: MeasurementSession, cfg: WindowConfig, k_sigma: float | None):
    try:
        return featurize_session(session, cfg, k_sigma=k_sigma)
    except FeaturizerError as exc:
        if "too short" in str(exc):
            raise ServiceError("session_too_short", str(exc)) from None
        raise ServiceError("malformed", str(exc)) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ServiceError("malformed", f"bad measurement records: {exc!r}") from None


def handle_submit(payload, registry: Registry, window_cfg: WindowConfig, k_sigma) -> WireMessage:
    session = _payload_session(payload)
    _check_session(session)
    vectors = _featurize(session, window_cfg, k_sigma)
    registry.put_session(session)
    return WireMessage("ack", {"session_id": session.session_id, "vectors_stored": len(vectors)})


def handle_identify(payload, registry: Registry, models: Mapping[str, ModelArtifact]) -> WireMessage:
    claim = payload.get("claimed_device_id")
    model_id = payload.get("model_id")
    threshold = payload.get("threshold", 0.5)
    cutoff = payload.get("lof_cutoff", 1.5)
    if not isinstance(claim, str) or not isinstance(model_id, str):
        raise CodecError("malformed", "identify needs claimed_device_id and model_id strings")
    for name, value in (("threshold", threshold), ("lof_cutoff", cutoff)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise CodecError("malformed", f"{name} must be a number")
    if not 0.0 <= threshold <= 1.0:
        raise CodecError("malformed", "threshold must lie in [0, 1]")
    try:
        model = models[model_id]
    except KeyError:
        raise ServiceError("unknown_model", f"unknown model {model_id!r}") from None

    if "session_id" in payload and not ("session" in payload or "session_jsonl" in payload):
        sid = payload["session_id"]
        if not isinstance(sid, str):
            raise CodecError("malformed", "session_id must be a string")
        session = registry.get_session(sid)
    else:
        session = _payload_session(payload)
    _check_session(session)

    cfg = WindowConfig.from_dict(model.metadata["window_cfg"])
    vectors = _featurize(session, cfg, model.metadata.get("k_sigma", 3.0))
    try:
        decision = decide_identity(model, vectors, claim, float(threshold), float(cutoff))
    except IdentificationError as exc:
        code = "unknown_device" if "unknown device" in str(exc) else "malformed"
        raise ServiceError(code, str(exc)) from None
    except LearnerError as exc:
        raise ServiceError("malformed", str(exc)) from None
    out = decision.to_dict()
    out["session_id"] = session.session_id
    out["model_id"] = model_id
    return WireMessage("decision", out)


def handle_request(
    msg: WireMessage,
    registry: Registry,
    loaded_models: Mapping[str, ModelArtifact],
    window_cfg: WindowConfig | None = None,
    k_sigma: float | None = 3.0,
    token: str | None = None,
) -> WireMessage:
    """Dispatch one decoded request; never raises for bad input."""
    try:
        if token is not None and msg.token != token:
            return error_message("unauthorized", "missing or wrong token")
        if msg.protocol_version != PROTOCOL_VERSION:
            return error_message("unsupported_version", f"protocol_version {msg.protocol_version}")
        if msg.type == "submit_session":
            return handle_submit(msg.payload, registry, window_cfg or WindowConfig(), k_sigma)
        if msg.type == "identify":
            return handle_identify(msg.payload, registry, loaded_models)
        return error_message("unknown_type", f"unknown message type {msg.type!r}")
    except (CodecError, ServiceError, RegistryError) as exc:
        return error_message(exc.code, str(exc))
    except Exception as exc:  # keep serving whatever a handler throws
        log.exception("request failed")
        return error_message("internal", f"{type(exc).__name__}: {exc}")


def handle_frame(raw: bytes, registry, loaded_models, **kwargs) -> WireMessage:
    """Decode one frame payload and handle it."""
    try:
        msg = WireMessage.from_payload(raw)
    except CodecError as exc:
        return error_message(exc.code, str(exc))
    return handle_request(msg, registry, loaded_models, **kwargs)


def _recv_exact(sock, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            break
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock) -> bytes | None:
    """Next frame payload, or None on clean EOF; raises CodecError mid-frame."""
    head = _recv_exact(sock, _HEADER.size)
    if not head:
        return None
    if len(head) < _HEADER.size:
        raise CodecError("truncated", "incomplete length prefix")
    (length,) = _HEADER.unpack(head)
    if length > MAX_FRAME:
        raise CodecError("too_large", f"declared length {length} exceeds {MAX_FRAME}")
    payload, _ = unframe(head + _recv_exact(sock, length))
    return payload


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        srv: IngestServer = self.server  # type: ignore[assignment]
        while True:
            try:
                raw = read_frame(self.request)
            except CodecError as exc:
                # peer stopped mid-frame; report and drop the connection
                self._send(error_message(exc.code, str(exc)))
                self._linger()
                return
            if raw is None:
                return
            reply = handle_frame(raw, srv.registry, srv.models, window_cfg=srv.window_cfg,
                                 k_sigma=srv.k_sigma, token=srv.token)
            if not self._send(reply):
                return

    def _linger(self, limit: int = 1 << 20, timeout: float = 0.5) -> None:
        # closing with unread input makes the kernel send RST, which can
        # discard the error reply before the peer reads it
        try:
            self.request.shutdown(socket.SHUT_WR)
            self.request.settimeout(timeout)
            seen = 0
            while seen < limit:
                chunk = self.request.recv(65536)
                if not chunk:
                    break
                seen += len(chunk)
        except OSError:
            pass

    def _send(self, msg: WireMessage) -> bool:
        try:
            self.request.sendall(msg.encode())
            return True
        except OSError:
            return False


class IngestServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, registry: Registry, window_cfg: WindowConfig | None = None,
                 k_sigma: float | None = 3.0, token: str | None = None):
        super().__init__(address, _Handler)
        self.registry = registry
        self.models = ModelCache(registry)
        self.window_cfg = window_cfg or WindowConfig()
        self.k_sigma = k_sigma
        self.token = token


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


class Client:
    """Blocking client holding one connection."""

    def __init__(self, address, token: str | None = None, timeout: float | None = 30.0):
        if isinstance(address, str):
            address = parse_address(address)
        self.sock = socket.create_connection(address, timeout=timeout)
        self.token = token

    def request(self, mtype: str, payload: dict[str, Any]) -> WireMessage:
        self.send_raw(WireMessage(mtype, payload, token=self.token).encode())
        return self.receive()

    def send_raw(self, data: bytes) -> None:
        self.sock.sendall(data)

    def receive(self) -> WireMessage:
        raw = read_frame(self.sock)
        if raw is None:
            raise ConnectionError("server closed the connection")
        return WireMessage.from_payload(raw)

    def submit(self, session: MeasurementSession) -> WireMessage:
        return self.request("submit_session", {"session": session_to_obj(session)})

    def identify(self, claimed_device_id: str, model_id: str, session: MeasurementSession | None = None,
                 session_id: str | None = None, threshold: float = 0.5) -> WireMessage:
        payload: dict[str, Any] = {"claimed_device_id": claimed_device_id, "model_id": model_id,
                                   "threshold": threshold}
        if session is not None:
            payload["session"] = session_to_obj(session)
        else:
            payload["session_id"] = session_id
        return self.request("identify", payload)

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(address, registry: Registry, **kwargs) -> IngestServer:
    """Start a server on a background thread; call ``shutdown()`` to stop."""
    server = IngestServer(address, registry, **kwargs)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server
