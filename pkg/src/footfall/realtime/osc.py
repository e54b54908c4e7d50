"""OSC 1.0 footfall messages over UDP.

A detection encodes as exactly 24 bytes: the "/footfall" address padded
to 12, the ",h" type-tag string padded to 4, and the timestamp as a
big-endian 64-bit integer.
"""

from __future__ import annotations

import socket
import struct

from footfall.realtime.detector import DetectionEvent

OSC_ADDRESS = "/footfall"


def _pad4(b: bytes) -> bytes:
    return b + b"\x00" * (4 - len(b) % 4)  # at least one terminating NUL


def encode_osc(event: DetectionEvent) -> bytes:
    return (_pad4(OSC_ADDRESS.encode("ascii"))
            + _pad4(b",h")
            + struct.pack(">q", int(event.timestamp_ms)))


class OscSender:
    """Fire-and-forget UDP sender for detection events."""

    def __init__(self, host: str, port: int):
        self.dest = (host, port)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    def send(self, event: DetectionEvent) -> None:
        self._sock.sendto(encode_osc(event), self.dest)

    def close(self) -> None:
        self._sock.close()

    def __enter__(self) -> "OscSender":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
