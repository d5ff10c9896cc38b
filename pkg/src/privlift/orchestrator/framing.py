"""Wire framing and message channels.

A frame is ``length (4 bytes, big-endian) || type (1 byte) || payload`` where
``length`` counts payload bytes only.  Channels keep running SHA-256 hashes of
every frame sent and received so the two ends can compare transcripts.
"""

from __future__ import annotations

import enum
import hashlib
import queue
import socket
import struct
import threading

from privlift.errors import ChannelError, FrameError, PeerAbort, ProtocolError, TranscriptMismatch

MAX_FRAME = 64 * 1024 * 1024
HEADER = struct.Struct(">IB")


class MsgType(enum.IntEnum):
    HELLO = 1
    PID_MASKED = 2
    PID_DOUBLE = 3
    PID_SPINE_HASH = 4
    OT_BASE_MSG = 5
    OT_EXT_MATRIX = 6
    OT_EXT_PAYLOAD = 7
    GC_SETUP = 8
    GC_INPUT_LABELS = 9
    GC_TABLES = 10
    OUTPUT_DECODE = 11
    GC_OUTPUT_LABELS = 12
    TRANSCRIPT_HASH = 13
    SHARE_NOTIFY = 14
    AGG_PREFLIGHT = 15
    AGG_STATUS = 16
    RESULT = 17
    ABORT = 18


def encode_frame(mtype: MsgType | int, payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME:
        raise FrameError(f"payload of {len(payload)} bytes exceeds frame limit")
    return HEADER.pack(len(payload), int(mtype)) + payload


def decode_header(header: bytes) -> tuple[int, MsgType]:
    length, t = HEADER.unpack(header)
    if length > MAX_FRAME:
        raise FrameError(f"frame length {length} exceeds limit")
    try:
        mtype = MsgType(t)
    except ValueError:
        raise FrameError(f"unknown message type {t}") from None
    return length, mtype


def decode_frame(frame: bytes) -> tuple[MsgType, bytes]:
    if len(frame) < HEADER.size:
        raise FrameError("truncated header")
    length, mtype = decode_header(frame[: HEADER.size])
    payload = frame[HEADER.size :]
    if len(payload) != length:
        raise FrameError(f"length field {length} but {len(payload)} payload bytes")
    return mtype, bytes(payload)


_CLOSED = object()


class Channel:
    """Duplex message channel.  Subclasses implement ``_put`` and ``_get``."""

    recv_timeout: float | None = 1800.0

    def __init__(self, name: str = ""):
        self.name = name
        self._h_out = hashlib.sha256()
        self._h_in = hashlib.sha256()
        self._send_lock = threading.Lock()
        self.bytes_sent = 0

    def _put(self, frame: bytes) -> None:
        raise NotImplementedError

    def _get(self, timeout: float | None):
        raise NotImplementedError

    def close(self) -> None:
        pass

    def send(self, mtype: MsgType, payload: bytes = b"") -> None:
        frame = encode_frame(mtype, payload)
        with self._send_lock:
            if mtype not in (MsgType.TRANSCRIPT_HASH, MsgType.ABORT):
                self._h_out.update(frame)
            self._put(frame)
            self.bytes_sent += len(frame)

    def recv_any(self) -> tuple[MsgType, bytes]:
        item = self._get(self.recv_timeout)
        if item is _CLOSED:
            raise ChannelError(f"channel {self.name!r} closed by peer")
        mtype, payload = item
        if mtype == MsgType.ABORT:
            raise PeerAbort(payload.decode("utf-8", "replace") or "peer aborted")
        if mtype != MsgType.TRANSCRIPT_HASH:
            self._h_in.update(encode_frame(mtype, payload))
        return mtype, payload

    def recv(self, expected: MsgType) -> bytes:
        mtype, payload = self.recv_any()
        if mtype != expected:
            self.abort(f"unexpected {mtype.name}, wanted {expected.name}")
            raise ProtocolError(f"unexpected message {mtype.name}, wanted {expected.name}")
        return payload

    def send_large(self, mtype: MsgType, data: bytes, chunk: int = 16 * 1024 * 1024) -> None:
        """Send ``data`` as one or more frames of ``mtype``.

        Each frame payload starts with a continuation byte (1 = more follow).
        """
        view = memoryview(data)
        pos = 0
        while True:
            part = view[pos : pos + chunk]
            pos += len(part)
            more = pos < len(data)
            self.send(mtype, (b"\x01" if more else b"\x00") + bytes(part))
            if not more:
                return

    def recv_large(self, mtype: MsgType) -> bytes:
        parts = []
        while True:
            payload = self.recv(mtype)
            if not payload:
                raise FrameError("missing continuation byte")
            parts.append(payload[1:])
            if payload[0] == 0:
                return b"".join(parts)

    def abort(self, reason: str) -> None:
        try:
            self.send(MsgType.ABORT, reason.encode("utf-8")[:4096])
        except Exception:  # noqa: BLE001 - best effort while already failing
            pass

    def transcript(self) -> tuple[bytes, bytes]:
        return self._h_out.digest(), self._h_in.digest()

    def check_transcript(self) -> None:
        """Exchange transcript hashes with the peer and compare."""
        out, inc = self.transcript()
        self.send(MsgType.TRANSCRIPT_HASH, out + inc)
        peer = self.recv(MsgType.TRANSCRIPT_HASH)
        if len(peer) != 64 or peer[:32] != inc or peer[32:] != out:
            raise TranscriptMismatch(f"transcript divergence on channel {self.name!r}")


class PipeChannel(Channel):
    """One end of an in-process duplex pipe.  Frames are encoded bytes."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, name: str = ""):
        super().__init__(name)
        self._inbox = inbox
        self._outbox = outbox

    @classmethod
    def pair(cls, name: str = "") -> tuple[PipeChannel, PipeChannel]:
        a, b = queue.Queue(), queue.Queue()
        return cls(a, b, name), cls(b, a, name)

    def _put(self, frame: bytes) -> None:
        self._outbox.put(frame)

    def _get(self, timeout):
        try:
            frame = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise ChannelError(f"timed out waiting on channel {self.name!r}") from None
        if frame is _CLOSED:
            return _CLOSED
        return decode_frame(frame)

    def close(self) -> None:
        self._outbox.put(_CLOSED)


class TcpChannel(Channel):
    """Framed channel over a connected socket.

    A reader thread drains the socket continuously so that both ends may send
    large messages at the same time without deadlocking on kernel buffers.
    """

    def __init__(self, sock: socket.socket, name: str = ""):
        super().__init__(name)
        self._sock = sock
        self._inbox: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _recv_exact(self, n: int) -> bytes | None:
        buf = bytearray()
        while len(buf) < n:
            chunk = self._sock.recv(min(n - len(buf), 1 << 20))
            if not chunk:
                return None
            buf += chunk
        return bytes(buf)

    def _read_loop(self) -> None:
        try:
            while True:
                header = self._recv_exact(HEADER.size)
                if header is None:
                    break
                try:
                    length, mtype = decode_header(header)
                except FrameError as exc:
                    self._inbox.put(exc)
                    break
                payload = self._recv_exact(length)
                if payload is None:
                    break
                self._inbox.put((mtype, payload))
        except OSError:
            pass
        self._inbox.put(_CLOSED)

    def _put(self, frame: bytes) -> None:
        try:
            self._sock.sendall(frame)
        except OSError as exc:
            raise ChannelError(f"send failed on {self.name!r}: {exc}") from exc

    def _get(self, timeout):
        try:
            item = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise ChannelError(f"timed out waiting on channel {self.name!r}") from None
        if isinstance(item, FrameError):
            self.abort(str(item))
            raise item
        return item

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
