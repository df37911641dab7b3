"""Datagram encoding of telemetry messages.

The wire format is a single ASCII header line followed by raw payload bytes::

    SIREN1<US>jobid<US>stepid<US>pid<US>hash<US>host<US>time<US>layer<US>type<US>seq<US>total<US>payload

where ``<US>`` is the unit-separator byte 0x1F.  The ``1`` after the magic is
the format version; the format is frozen per version.  Header fields are
ASCII and may not contain the separator byte, so no escaping is needed; the
payload is an arbitrary byte sequence (everything after the eleventh
separator).

A message whose content exceeds ``max_payload`` bytes is split into
``ceil(len/max_payload)`` chunks sharing the same header and numbered
``seq``/``total``; every chunk decodes independently of the others.  No
encoded datagram exceeds :data:`MAX_DATAGRAM` bytes.

Decoding is stateless and deliberately minimal: it rejects only a bad
magic/version, a truncated or non-numeric header, and ``seq >= total``.
Message-type and layer tokens are preserved verbatim so that datagrams from
newer senders still decode (forward compatibility).
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = [
    "DEFAULT_MAX_PAYLOAD",
    "MAX_DATAGRAM",
    "VERSION",
    "DatagramChunk",
    "WireDecodeError",
    "WireEncodeError",
    "decode",
    "encode",
]

US = b"\x1f"
MAGIC = b"SIREN"
VERSION = 1
_MAGIC_TOKEN = MAGIC + str(VERSION).encode("ascii")

DEFAULT_MAX_PAYLOAD = 1200
MAX_DATAGRAM = 1400

# magic, jobid, stepid, pid, hash, host, time, layer, type, seq, total
_HEADER_TOKENS = 11


class WireEncodeError(ValueError):
    """A message cannot be represented in the wire format."""


class WireDecodeError(ValueError):
    """A datagram does not parse as the wire format."""


def _check_header_field(name: str, value: str) -> bytes:
    if not isinstance(value, str):
        raise WireEncodeError(f"header field {name} must be a string")
    try:
        raw = value.encode("ascii")
    except UnicodeEncodeError as exc:
        raise WireEncodeError(f"header field {name} is not ASCII: {value!r}") from exc
    if US in raw:
        raise WireEncodeError(
            f"header field {name} contains the unit-separator byte: {value!r}"
        )
    return raw


def _check_int_field(name: str, value: int) -> bytes:
    if not isinstance(value, int) or isinstance(value, bool) or value < 0:
        raise WireEncodeError(f"header field {name} must be a non-negative integer")
    return str(value).encode("ascii")


@dataclass(frozen=True)
class DatagramChunk:
    """One decoded (or to-be-encoded) datagram.

    ``layer`` and ``type`` are plain strings: senders use the closed sets
    defined by the collector, but unknown tokens received off the wire are
    preserved verbatim.
    """

    version: int
    jobid: str
    stepid: str
    pid: int
    hash: str
    host: str
    time: int
    layer: str
    type: str
    seq: int
    total: int
    payload: bytes

    def __post_init__(self) -> None:
        if self.version != VERSION:
            raise WireEncodeError(f"unsupported wire version {self.version!r}")
        if not isinstance(self.payload, (bytes, bytearray)):
            raise WireEncodeError("payload must be a byte sequence")
        if isinstance(self.payload, bytearray):
            object.__setattr__(self, "payload", bytes(self.payload))
        _check_int_field("total", self.total)
        _check_int_field("seq", self.seq)
        if self.total < 1:
            raise WireEncodeError("total must be >= 1")
        if self.seq >= self.total:
            raise WireEncodeError(f"seq {self.seq} out of range for total {self.total}")

    @property
    def message_key(self) -> tuple:
        """Identity of the message this chunk belongs to (all but seq/payload)."""
        return (self.jobid, self.stepid, self.host, self.pid, self.hash,
                self.time, self.layer, self.type)

    def to_bytes(self) -> bytes:
        header = US.join(
            [
                _MAGIC_TOKEN,
                _check_header_field("jobid", self.jobid),
                _check_header_field("stepid", self.stepid),
                _check_int_field("pid", self.pid),
                _check_header_field("hash", self.hash),
                _check_header_field("host", self.host),
                _check_int_field("time", self.time),
                _check_header_field("layer", self.layer),
                _check_header_field("type", self.type),
                _check_int_field("seq", self.seq),
                _check_int_field("total", self.total),
            ]
        ) + US
        datagram = header + self.payload
        if len(datagram) > MAX_DATAGRAM:
            raise WireEncodeError(
                f"encoded datagram is {len(datagram)} bytes, exceeding the "
                f"{MAX_DATAGRAM}-byte limit (header too long?)"
            )
        return datagram


def encode(msg, max_payload: int = DEFAULT_MAX_PAYLOAD) -> list[bytes]:
    """Encode a telemetry message into one datagram per content chunk.

    ``msg`` is any object with a ``header`` carrying ``jobid``, ``stepid``,
    ``pid``, ``hash``, ``host``, ``time``, ``layer`` and ``type`` attributes,
    plus a ``content`` string (the collector's TelemetryMessage).  Content is
    encoded as UTF-8 and split into ``ceil(len/max_payload)`` contiguous
    byte slices; empty content yields exactly one chunk with empty payload.
    """
    if max_payload < 1:
        raise WireEncodeError("max_payload must be >= 1")
    header = msg.header
    content = msg.content
    raw = content.encode("utf-8") if isinstance(content, str) else bytes(content)
    total = max(1, -(-len(raw) // max_payload))
    datagrams = []
    for seq in range(total):
        chunk = DatagramChunk(
            version=VERSION,
            jobid=header.jobid,
            stepid=header.stepid,
            pid=header.pid,
            hash=header.hash,
            host=header.host,
            time=header.time,
            layer=header.layer,
            type=header.type,
            seq=seq,
            total=total,
            payload=raw[seq * max_payload:(seq + 1) * max_payload],
        )
        datagrams.append(chunk.to_bytes())
    return datagrams


def _parse_int(name: str, token: bytes) -> int:
    if not token.isdigit():
        raise WireDecodeError(f"header field {name} is not a number: {token!r}")
    return int(token)


def decode(datagram: bytes) -> DatagramChunk:
    """Parse one datagram; see the module docstring for the error contract."""
    if not isinstance(datagram, (bytes, bytearray)):
        raise WireDecodeError("datagram must be a byte sequence")
    parts = bytes(datagram).split(US, _HEADER_TOKENS)
    if len(parts) != _HEADER_TOKENS + 1:
        raise WireDecodeError(
            f"truncated header: {len(parts) - 1} of {_HEADER_TOKENS} separators"
        )
    if parts[0] != _MAGIC_TOKEN:
        raise WireDecodeError(f"bad magic/version: {parts[0]!r}")
    try:
        jobid = parts[1].decode("ascii")
        stepid = parts[2].decode("ascii")
        hash_ = parts[4].decode("ascii")
        host = parts[5].decode("ascii")
        layer = parts[7].decode("ascii")
        type_ = parts[8].decode("ascii")
    except UnicodeDecodeError as exc:
        raise WireDecodeError(f"non-ASCII header field: {exc}") from None
    pid = _parse_int("pid", parts[3])
    time = _parse_int("time", parts[6])
    seq = _parse_int("seq", parts[9])
    total = _parse_int("total", parts[10])
    if total < 1 or seq >= total:
        raise WireDecodeError(f"seq {seq} out of range for total {total}")
    return DatagramChunk(
        version=VERSION,
        jobid=jobid,
        stepid=stepid,
        pid=pid,
        hash=hash_,
        host=host,
        time=time,
        layer=layer,
        type=type_,
        seq=seq,
        total=total,
        payload=parts[11],
    )
