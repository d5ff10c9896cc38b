"""Named channel factories.

Both parties ask their transport for the same channel names (``control``,
``aggregator``, ``worker-<w>``); the transport pairs them up.  Over TCP each
name gets its own port, ``base_port + slot(name)``, and the publisher always
dials.
"""

from __future__ import annotations

import socket
import threading
import time

from privlift.errors import ChannelError
from privlift.orchestrator.framing import Channel, PipeChannel, TcpChannel

ROLES = ("publisher", "advertiser")


def slot(name: str) -> int:
    if name == "control":
        return 0
    if name == "aggregator":
        return 1
    if name.startswith("worker-"):
        return 2 + int(name.split("-", 1)[1])
    raise ValueError(f"unknown channel name {name!r}")


class LocalHub:
    """Pairs in-process pipe channels between two parties in one process."""

    def __init__(self):
        self._pairs: dict[str, tuple[PipeChannel, PipeChannel]] = {}
        self._lock = threading.Lock()

    def channel(self, role: str, name: str) -> Channel:
        with self._lock:
            if name not in self._pairs:
                self._pairs[name] = PipeChannel.pair(name)
            pub, adv = self._pairs[name]
        return pub if role == "publisher" else adv

    def transport(self, role: str) -> LocalTransport:
        return LocalTransport(self, role)


class _Tracking:
    """Remembers opened channels so a failing party can close them all."""

    def _track(self, ch: Channel) -> Channel:
        self.__dict__.setdefault("_opened", []).append(ch)
        return ch

    def close_all(self) -> None:
        for ch in self.__dict__.get("_opened", []):
            try:
                ch.close()
            except Exception:  # noqa: BLE001 - closing is best effort
                pass


class LocalTransport(_Tracking):
    def __init__(self, hub: LocalHub, role: str):
        self.hub = hub
        self.role = role

    def channel(self, name: str) -> Channel:
        return self._track(self.hub.channel(self.role, name))


class TcpTransport(_Tracking):
    """Publisher connects to ``peer_host``; advertiser listens on ``listen_host``."""

    def __init__(
        self,
        role: str,
        base_port: int,
        peer_host: str = "127.0.0.1",
        listen_host: str = "127.0.0.1",
        connect_timeout: float = 60.0,
    ):
        if role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")
        self.role = role
        self.base_port = base_port
        self.peer_host = peer_host
        self.listen_host = listen_host
        self.connect_timeout = connect_timeout

    def channel(self, name: str) -> Channel:
        port = self.base_port + slot(name)
        if self.role == "publisher":
            sock = self._dial(port)
        else:
            sock = self._accept(port)
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return self._track(TcpChannel(sock, name))

    def _dial(self, port: int) -> socket.socket:
        deadline = time.monotonic() + self.connect_timeout
        while True:
            try:
                return socket.create_connection((self.peer_host, port), timeout=5.0)
            except OSError as exc:
                if time.monotonic() > deadline:
                    raise ChannelError(f"cannot reach {self.peer_host}:{port}: {exc}") from exc
                time.sleep(0.05)

    def _accept(self, port: int) -> socket.socket:
        with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as srv:
            srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            srv.bind((self.listen_host, port))
            srv.listen(1)
            srv.settimeout(self.connect_timeout)
            try:
                conn, _ = srv.accept()
            except OSError as exc:
                raise ChannelError(f"no peer connected on port {port}: {exc}") from exc
        conn.settimeout(None)
        return conn
