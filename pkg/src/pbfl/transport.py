"""In-process two-party message channel with accounting and replay capture.

The channel moves opaque byte frames between the two servers. Every send is
recorded (direction, tag, byte length) so tests and reports can assert exact
message counts and byte totals per protocol invocation. Payloads are kept,
which allows exporting an ordered replay file and re-checking that every
frame on the wire deserializes back to the object that produced it.

A send really does round-trip through bytes: the caller hands in frames, the
receiver gets fresh byte strings parsed out of the packed payload. Failure
injection lets error-handling paths be exercised deterministically.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

S1_TO_S2 = "S1->S2"
S2_TO_S1 = "S2->S1"


class TransportError(RuntimeError):
    """Raised when a send fails (only via injected failures in this lab)."""


@dataclass(frozen=True)
class MessageRecord:
    seq: int
    invocation_id: str
    protocol: str
    direction: str
    tag: str
    nbytes: int


def _pack_frames(frames: list[bytes]) -> bytes:
    out = [struct.pack("<I", len(frames))]
    for fr in frames:
        out.append(struct.pack("<Q", len(fr)))
        out.append(fr)
    return b"".join(out)


def _unpack_frames(payload: bytes) -> list[bytes]:
    (count,) = struct.unpack_from("<I", payload, 0)
    off = 4
    frames = []
    for _ in range(count):
        (length,) = struct.unpack_from("<Q", payload, off)
        off += 8
        frames.append(payload[off : off + length])
        off += length
    if off != len(payload):
        raise ValueError("trailing bytes after the last frame")
    return frames


class Transport:
    """Append-only log of framed messages between S1 and S2."""

    def __init__(self, name: str = "s1-s2"):
        self.name = name
        self._records: list[MessageRecord] = []
        self._payloads: list[bytes] = []
        self._armed_failures: list[dict] = []
        self._inv_counter = 0

    # -- sending -------------------------------------------------------------

    def new_invocation(self, protocol: str) -> str:
        self._inv_counter += 1
        return f"{protocol}-{self._inv_counter:05d}"

    def send(
        self,
        invocation_id: str,
        protocol: str,
        direction: str,
        tag: str,
        frames: list[bytes],
    ) -> list[bytes]:
        """Deliver frames to the other endpoint, logging the message.

        Returns the frames as parsed back out of the packed payload, so the
        receiving side only ever works with bytes that crossed the wire.
        """
        if direction not in (S1_TO_S2, S2_TO_S1):
            raise ValueError(f"unknown direction {direction!r}")
        for i, trigger in enumerate(self._armed_failures):
            if self._matches(trigger, invocation_id, protocol, direction, tag):
                del self._armed_failures[i]
                raise TransportError(
                    f"injected failure delivering {tag!r} ({direction}) "
                    f"in {invocation_id}"
                )
        payload = _pack_frames(frames)
        self._records.append(
            MessageRecord(
                seq=len(self._records),
                invocation_id=invocation_id,
                protocol=protocol,
                direction=direction,
                tag=tag,
                nbytes=len(payload),
            )
        )
        self._payloads.append(payload)
        return _unpack_frames(payload)

    def _matches(self, trigger, invocation_id, protocol, direction, tag) -> bool:
        return all(
            trigger[key] is None or trigger[key] == value
            for key, value in (
                ("invocation_id", invocation_id),
                ("protocol", protocol),
                ("direction", direction),
                ("tag", tag),
            )
        )

    def arm_failure(
        self,
        *,
        invocation_id: str | None = None,
        protocol: str | None = None,
        direction: str | None = None,
        tag: str | None = None,
    ) -> None:
        """Make the next send matching all given criteria raise TransportError."""
        self._armed_failures.append(
            {
                "invocation_id": invocation_id,
                "protocol": protocol,
                "direction": direction,
                "tag": tag,
            }
        )

    # -- accounting ----------------------------------------------------------

    @property
    def records(self) -> tuple[MessageRecord, ...]:
        return tuple(self._records)

    def message_count(self, protocol: str | None = None) -> int:
        return sum(1 for r in self._records if protocol in (None, r.protocol))

    def byte_count(self, protocol: str | None = None) -> int:
        return sum(r.nbytes for r in self._records if protocol in (None, r.protocol))

    def round_trip_count(self, protocol: str | None = None) -> int:
        """Completed request/response exchanges (each reply closes one)."""
        return sum(
            1
            for r in self._records
            if r.direction == S2_TO_S1 and protocol in (None, r.protocol)
        )

    def messages_for(self, invocation_id: str) -> tuple[MessageRecord, ...]:
        return tuple(r for r in self._records if r.invocation_id == invocation_id)

    def invocation_ids(self, protocol: str | None = None) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for r in self._records:
            if protocol in (None, r.protocol):
                seen.setdefault(r.invocation_id)
        return tuple(seen)

    # -- export and replay -----------------------------------------------------

    def export_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self._records:
                fh.write(
                    json.dumps(
                        {
                            "invocation_id": r.invocation_id,
                            "protocol": r.protocol,
                            "direction": r.direction,
                            "bytes": r.nbytes,
                            "tag": r.tag,
                        }
                    )
                    + "\n"
                )

    REPLAY_MAGIC = b"PBFLRPLY"

    def write_replay(self, path) -> None:
        """Ordered dump of every message (metadata plus raw payload)."""
        with open(path, "wb") as fh:
            fh.write(self.REPLAY_MAGIC + struct.pack("<H", 1))
            for rec, payload in zip(self._records, self._payloads):
                meta = json.dumps(asdict(rec)).encode("utf-8")
                fh.write(struct.pack("<QQ", len(meta), len(payload)))
                fh.write(meta)
                fh.write(payload)

    @classmethod
    def read_replay(cls, path) -> list[tuple[MessageRecord, list[bytes]]]:
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:8] != cls.REPLAY_MAGIC:
            raise ValueError("not a replay file (bad magic)")
        (version,) = struct.unpack_from("<H", data, 8)
        if version != 1:
            raise ValueError(f"unsupported replay version {version}")
        off = 10
        out = []
        while off < len(data):
            meta_len, payload_len = struct.unpack_from("<QQ", data, off)
            off += 16
            meta = json.loads(data[off : off + meta_len].decode("utf-8"))
            off += meta_len
            payload = data[off : off + payload_len]
            off += payload_len
            out.append((MessageRecord(**meta), _unpack_frames(payload)))
        return out

    def payload_frames(self, seq: int) -> list[bytes]:
        return _unpack_frames(self._payloads[seq])
