"""Wire codec, registry, service, host collector and CLI."""
from .codec import (
    ERROR_CODES,
    PROTOCOL_VERSION,
    CodecError,
    WireMessage,
    decode_session,
    encode_session,
    session_from_jsonl,
    session_to_jsonl,
)
from .collector import CollectorError, collect_session
from .registry import Registry, RegistryError
from .service import Client, IngestServer, handle_request, serve

__all__ = [
    "ERROR_CODES", "PROTOCOL_VERSION", "CodecError", "WireMessage", "decode_session",
    "encode_session", "session_from_jsonl", "session_to_jsonl", "CollectorError",
    "collect_session", "Registry", "RegistryError", "Client", "IngestServer",
    "handle_request", "serve",
]
