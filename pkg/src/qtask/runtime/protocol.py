"""Coordinator <-> QPU worker messages and their byte framing.

Frame layout (all integers little-endian)::

    u32   body length in bytes (not counting these 4)
    4s    magic b"QTSK"
    u8    protocol version (1)
    u8    verb
    u8    status (0 = ok, 1 = error; always 0 on requests)
    u8    reserved, 0
    u64   correlation id
    u64   session id (one per task)
    ...   payload, UTF-8 JSON object

A task drives one session through LOAD, COMPILE, ESTIMATE_MEM, RUN and FETCH
in that order. SHUTDOWN asks the worker to exit; closing the stream has the
same effect.
"""

from __future__ import annotations

import enum
import itertools
import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

from ..errors import ProtocolError

MAGIC = b"QTSK"
VERSION = 1
_LEN = struct.Struct("<I")
_HEADER = struct.Struct("<4sBBBxQQ")
MAX_FRAME = 64 * 1024 * 1024


class Verb(enum.IntEnum):
    LOAD = 1
    COMPILE = 2
    ESTIMATE_MEM = 3
    RUN = 4
    FETCH = 5
    SHUTDOWN = 6


SEQUENCE = (Verb.LOAD, Verb.COMPILE, Verb.ESTIMATE_MEM, Verb.RUN, Verb.FETCH)

OK, ERROR = 0, 1

_ids = itertools.count(1)


def next_correlation_id() -> int:
    return next(_ids) & 0xFFFF_FFFF_FFFF_FFFF


@dataclass
class WorkerMessage:
    verb: Verb
    session: int = 0
    payload: dict = field(default_factory=dict)
    correlation_id: int = field(default_factory=next_correlation_id)
    status: int = OK

    @property
    def ok(self) -> bool:
        return self.status == OK

    def reply(self, payload: dict | None = None) -> WorkerMessage:
        return WorkerMessage(self.verb, self.session, payload or {}, self.correlation_id, OK)

    def error(self, message: str, **extra) -> WorkerMessage:
        return WorkerMessage(self.verb, self.session, {"error": message, **extra},
                             self.correlation_id, ERROR)


def encode(msg: WorkerMessage) -> bytes:
    payload = json.dumps(msg.payload, separators=(",", ":"), sort_keys=True).encode("utf-8")
    body = _HEADER.pack(MAGIC, VERSION, int(msg.verb), msg.status,
                        msg.correlation_id, msg.session) + payload
    return _LEN.pack(len(body)) + body


def decode(body: bytes) -> WorkerMessage:
    """Decode one frame body (without its length prefix)."""
    if len(body) < _HEADER.size:
        raise ProtocolError(f"frame of {len(body)} bytes is shorter than the header")
    magic, version, verb, status, corr, session = _HEADER.unpack_from(body)
    if magic != MAGIC:
        raise ProtocolError(f"bad frame magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    try:
        verb = Verb(verb)
    except ValueError:
        raise ProtocolError(f"unknown verb {verb}") from None
    try:
        payload = json.loads(body[_HEADER.size:].decode("utf-8")) if len(body) > _HEADER.size else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable payload: {exc}") from None
    return WorkerMessage(verb, session, payload, corr, status)


def _read_exact(stream: BinaryIO, n: int) -> bytes | None:
    chunks, remaining = [], n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            if remaining == n:
                return None
            raise ProtocolError(f"stream closed mid-frame ({n - remaining}/{n} bytes)")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> WorkerMessage | None:
    """Next message from ``stream``, or None on a clean end of stream."""
    prefix = _read_exact(stream, _LEN.size)
    if prefix is None:
        return None
    (length,) = _LEN.unpack(prefix)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame length {length} exceeds {MAX_FRAME}")
    body = _read_exact(stream, length)
    if body is None:
        raise ProtocolError("stream closed after a length prefix")
    return decode(body)


def write_frame(stream: BinaryIO, msg: WorkerMessage) -> None:
    stream.write(encode(msg))
    stream.flush()
