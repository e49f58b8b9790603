"""Length-prefixed JSON frames and the lockstep rules between simulator and RIC."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
HEADER = struct.Struct(">I")
MAX_FRAME_BYTES = 64 * 1024 * 1024
MESSAGE_TYPES = ("KPI_BATCH", "HANDOVER", "ACK", "END")


class ProtocolError(RuntimeError):
    """Malformed frame or a message out of the lockstep order."""


class ConnectionLost(ProtocolError):
    pass


@dataclass(frozen=True)
class WireMessage:
    type: str
    iteration: int
    body: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_json(self):
        return {"type": self.type, "iteration": self.iteration,
                "schema_version": self.schema_version, "body": self.body}


def encode_frame(message):
    if message.type not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type {message.type!r}")
    payload = json.dumps(message.to_json(), separators=(",", ":"), sort_keys=True).encode()
    if len(payload) > MAX_FRAME_BYTES:
        raise ProtocolError(f"frame of {len(payload)} bytes exceeds {MAX_FRAME_BYTES}")
    return HEADER.pack(len(payload)) + payload


def _bad(raw, why):
    logger.error("malformed frame (%s): %r", why, raw[:256])
    return ProtocolError(f"malformed frame: {why}; bytes {raw[:64]!r}")


def decode_payload(raw):
    """Parse and validate one frame payload (the bytes after the length prefix)."""
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise _bad(raw, f"not JSON ({exc})") from None
    if not isinstance(doc, dict) or set(doc) != {"type", "iteration", "schema_version", "body"}:
        raise _bad(raw, "envelope must have exactly type, iteration, schema_version, body")
    if doc["type"] not in MESSAGE_TYPES:
        raise _bad(raw, f"unknown type {doc['type']!r}")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise _bad(raw, f"schema_version {doc['schema_version']!r} != {SCHEMA_VERSION}")
    if not isinstance(doc["iteration"], int) or isinstance(doc["iteration"], bool):
        raise _bad(raw, "iteration must be an integer")
    if not isinstance(doc["body"], dict):
        raise _bad(raw, "body must be an object")
    return WireMessage(doc["type"], doc["iteration"], doc["body"], doc["schema_version"])


def decode_frame(data):
    """Decode one complete frame; returns ``(message, remaining_bytes)``."""
    if len(data) < HEADER.size:
        raise _bad(data, "truncated header")
    (n,) = HEADER.unpack_from(data)
    if n > MAX_FRAME_BYTES:
        raise _bad(data, f"declared length {n} exceeds {MAX_FRAME_BYTES}")
    end = HEADER.size + n
    if len(data) < end:
        raise _bad(data, f"truncated payload ({len(data) - HEADER.size} of {n} bytes)")
    return decode_payload(data[HEADER.size:end]), data[end:]


def _recv_exactly(sock, n):
    chunks = bytearray()
    while len(chunks) < n:
        part = sock.recv(n - len(chunks))
        if not part:
            raise ConnectionLost(f"peer closed the connection after {len(chunks)} of {n} bytes")
        chunks += part
    return bytes(chunks)


def read_frame(sock):
    header = _recv_exactly(sock, HEADER.size)
    (n,) = HEADER.unpack(header)
    if n > MAX_FRAME_BYTES:
        raise _bad(header, f"declared length {n} exceeds {MAX_FRAME_BYTES}")
    return decode_payload(_recv_exactly(sock, n))


def send_frame(sock, message):
    try:
        sock.sendall(encode_frame(message))
    except (BrokenPipeError, ConnectionResetError) as exc:
        raise ConnectionLost(str(exc)) from None


class LockstepChecker:
    """Validates the message order seen on one connection.

    Each iteration is a KPI_BATCH (simulator to RIC), zero or more HANDOVERs
    and one ACK (RIC to simulator). END may follow any completed iteration.
    """

    def __init__(self):
        self.iteration = None
        self.awaiting_reply = False
        self.closed = False

    def observe(self, msg):
        if self.closed:
            raise ProtocolError(f"{msg.type} after END")
        if msg.type == "KPI_BATCH":
            if self.awaiting_reply:
                raise ProtocolError(f"KPI_BATCH {msg.iteration} before ACK for {self.iteration}")
            if self.iteration is not None and msg.iteration != self.iteration + 1:
                raise ProtocolError(f"KPI_BATCH {msg.iteration} does not follow {self.iteration}")
            self.iteration = msg.iteration
            self.awaiting_reply = True
        elif msg.type in ("HANDOVER", "ACK"):
            if self.iteration is None:
                raise ProtocolError(f"{msg.type} before any KPI_BATCH")
            if not self.awaiting_reply or msg.iteration != self.iteration:
                raise ProtocolError(f"{msg.type} for iteration {msg.iteration} outside the "
                                    f"exchange of iteration {self.iteration}")
            if msg.type == "ACK":
                self.awaiting_reply = False
        else:
            if self.awaiting_reply:
                raise ProtocolError(f"END while iteration {self.iteration} awaits its ACK")
            self.closed = True
        return msg
