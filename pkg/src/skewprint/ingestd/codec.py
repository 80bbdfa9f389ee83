"""Wire codec: length-prefixed canonical JSON frames and session JSON Lines.

Frame layout: 4-byte big-endian unsigned payload length, then the UTF-8
payload.  Sessions travel (and are stored) as JSON Lines: one header object
with the session metadata, then one object per measurement record.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Any

from ..simulator import MeasurementSession, SessionConfig

PROTOCOL_VERSION = 1
MAX_FRAME = 64 * 1024 * 1024
MESSAGE_TYPES = ("submit_session", "identify", "ack", "decision", "error")

# stable error codes carried in error responses
ERROR_CODES = (
    "malformed",
    "truncated",
    "too_large",
    "unknown_type",
    "unsupported_version",
    "unauthorized",
    "unknown_model",
    "unknown_device",
    "unknown_session",
    "session_too_short",
    "conflict",
    "internal",
)

_HEADER = struct.Struct(">I")
_HEADER_KEYS = (
    "device_id", "claimed_model_class", "session_id", "config_echo",
    "collector_kind", "prng", "n_records",
)


class CodecError(ValueError):
    """Decoding failure; ``code`` is one of :data:`ERROR_CODES`."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(message or code)
        self.code = code


def canonical(obj: Any) -> bytes:
    """Stable key order, no insignificant whitespace, UTF-8."""
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def frame(payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME:
        raise CodecError("too_large", f"payload of {len(payload)} bytes exceeds {MAX_FRAME}")
    return _HEADER.pack(len(payload)) + payload


def unframe(data: bytes) -> tuple[bytes, bytes]:
    """Split one frame off ``data``; returns ``(payload, rest)``."""
    if len(data) < _HEADER.size:
        raise CodecError("truncated", "incomplete length prefix")
    (length,) = _HEADER.unpack_from(data)
    if length > MAX_FRAME:
        raise CodecError("too_large", f"declared length {length} exceeds {MAX_FRAME}")
    end = _HEADER.size + length
    if len(data) < end:
        raise CodecError("truncated", f"declared {length} bytes, got {len(data) - _HEADER.size}")
    return data[_HEADER.size:end], data[end:]


def _loads(raw: bytes) -> Any:
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CodecError("malformed", f"invalid JSON: {exc}") from None


# -- sessions ---------------------------------------------------------------

def session_header(session: MeasurementSession) -> dict[str, Any]:
    head = dict(session.extra)
    head.update({
        "device_id": session.device_id,
        "claimed_model_class": session.claimed_model_class,
        "session_id": session.session_id,
        "config_echo": session.config_echo.to_dict(),
        "collector_kind": session.collector_kind,
        "prng": session.prng,
        "n_records": len(session.measurements),
    })
    return head


def session_to_jsonl(session: MeasurementSession) -> bytes:
    lines = [canonical(session_header(session))]
    lines.extend(canonical(rec) for rec in session.measurements)
    return b"\n".join(lines) + b"\n"


def _session_from_parts(head: Any, records: list[Any]) -> MeasurementSession:
    if not isinstance(head, dict):
        raise CodecError("malformed", "session header must be an object")
    missing = [k for k in ("device_id", "claimed_model_class", "session_id", "config_echo") if k not in head]
    if missing:
        raise CodecError("malformed", f"session header missing {missing}")
    n = head.get("n_records")
    if n is not None and n != len(records):
        raise CodecError("truncated", f"header announces {n} records, got {len(records)}")
    if not all(isinstance(r, dict) for r in records):
        raise CodecError("malformed", "measurement records must be objects")
    try:
        cfg = SessionConfig.from_dict(head["config_echo"])
    except (TypeError, ValueError, AttributeError) as exc:
        raise CodecError("malformed", f"bad config_echo: {exc}") from None
    extra = {k: v for k, v in head.items() if k not in _HEADER_KEYS}
    return MeasurementSession(
        device_id=str(head["device_id"]),
        claimed_model_class=str(head["claimed_model_class"]),
        session_id=str(head["session_id"]),
        config_echo=cfg,
        measurements=records,
        collector_kind=str(head.get("collector_kind", "simulated")),
        prng=head.get("prng"),
        extra=extra,
    )


def session_from_jsonl(raw: bytes) -> MeasurementSession:
    lines = [ln for ln in raw.split(b"\n") if ln.strip()]
    if not lines:
        raise CodecError("malformed", "empty session")
    objs = [_loads(ln) for ln in lines]
    return _session_from_parts(objs[0], objs[1:])


def session_to_obj(session: MeasurementSession) -> dict[str, Any]:
    return {"header": session_header(session), "measurements": list(session.measurements)}


def session_from_obj(obj: Any) -> MeasurementSession:
    if not isinstance(obj, dict) or "header" not in obj or not isinstance(obj.get("measurements"), list):
        raise CodecError("malformed", "session object needs header and measurements")
    return _session_from_parts(obj["header"], obj["measurements"])


def encode_session(session: MeasurementSession) -> bytes:
    """One frame whose payload is the session's JSON Lines text."""
    return frame(session_to_jsonl(session))


def decode_session(data: bytes) -> MeasurementSession:
    payload, rest = unframe(data)
    if rest:
        raise CodecError("malformed", f"{len(rest)} trailing bytes after frame")
    return session_from_jsonl(payload)


# -- messages ---------------------------------------------------------------

@dataclass
class WireMessage:
    type: str
    payload: dict[str, Any] = field(default_factory=dict)
    protocol_version: int = PROTOCOL_VERSION
    token: str | None = None

    def to_obj(self) -> dict[str, Any]:
        obj = {"type": self.type, "payload": self.payload, "protocol_version": self.protocol_version}
        if self.token is not None:
            obj["token"] = self.token
        return obj

    def encode(self) -> bytes:
        return frame(canonical(self.to_obj()))

    @classmethod
    def from_payload(cls, raw: bytes) -> "WireMessage":
        obj = _loads(raw)
        if not isinstance(obj, dict):
            raise CodecError("malformed", "message must be a JSON object")
        mtype, payload = obj.get("type"), obj.get("payload", {})
        if not isinstance(mtype, str) or not isinstance(payload, dict):
            raise CodecError("malformed", "message needs string type and object payload")
        version = obj.get("protocol_version", PROTOCOL_VERSION)
        if not isinstance(version, int) or isinstance(version, bool):
            raise CodecError("malformed", "protocol_version must be an integer")
        token = obj.get("token")
        if token is not None and not isinstance(token, str):
            raise CodecError("malformed", "token must be a string")
        return cls(mtype, payload, version, token)

    @classmethod
    def decode(cls, data: bytes) -> "WireMessage":
        payload, rest = unframe(data)
        if rest:
            raise CodecError("malformed", f"{len(rest)} trailing bytes after frame")
        return cls.from_payload(payload)


def error_message(code: str, message: str = "") -> WireMessage:
    if code not in ERROR_CODES:
        code = "internal"
    return WireMessage("error", {"code": code, "message": message})
