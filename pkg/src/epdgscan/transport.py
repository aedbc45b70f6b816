"""UDP datagram channels.

Resolver and prober talk to the network only through a ``Transport``, so the
same code runs against real sockets or against the in-process simulator.
"""

from __future__ import annotations

import ipaddress
import select
import socket
import time
from typing import Protocol

Address = tuple[str, int]


class Channel(Protocol):
    def sendto(self, data: bytes, addr: Address) -> None: ...

    def recv(self, timeout: float) -> tuple[bytes, Address] | None: ...

    def close(self) -> None: ...


class Transport(Protocol):
    def open_channel(self, source_port: int | None = None) -> Channel: ...


def _family(host: str) -> int:
    return socket.AF_INET6 if ipaddress.ip_address(host).version == 6 else socket.AF_INET


class UdpChannel:
    """Plain UDP socket(s); one per address family, created on first use."""

    def __init__(self, source_port: int | None = None, bind_host: str | None = None):
        self.source_port = source_port or 0
        self.bind_host = bind_host
        self._socks: dict[int, socket.socket] = {}

    def _sock(self, family: int) -> socket.socket:
        s = self._socks.get(family)
        if s is None:
            s = socket.socket(family, socket.SOCK_DGRAM)
            host = self.bind_host or ("::" if family == socket.AF_INET6 else "0.0.0.0")
            if self.bind_host or self.source_port:
                s.bind((host, self.source_port))
            s.setblocking(False)
            self._socks[family] = s
        return s

    def sendto(self, data: bytes, addr: Address) -> None:
        self._sock(_family(addr[0])).sendto(data, addr)

    def recv(self, timeout: float) -> tuple[bytes, Address] | None:
        deadline = time.monotonic() + timeout
        while True:
            socks = list(self._socks.values())
            remaining = deadline - time.monotonic()
            if not socks:
                time.sleep(max(remaining, 0))
                return None
            if remaining <= 0:
                return None
            ready, _, _ = select.select(socks, [], [], remaining)
            for s in ready:
                try:
                    data, addr = s.recvfrom(65535)
                except (BlockingIOError, ConnectionRefusedError):
                    continue
                return data, (addr[0], addr[1])

    def close(self) -> None:
        for s in self._socks.values():
            s.close()
        self._socks.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class LocalTransport:
    """Real network access from this host."""

    def __init__(self, bind_host: str | None = None):
        self.bind_host = bind_host

    def open_channel(self, source_port: int | None = None) -> UdpChannel:
        return UdpChannel(source_port=source_port, bind_host=self.bind_host)

    def tcp_exchange(self, data: bytes, addr: Address, timeout: float) -> bytes:
        """Length-prefixed DNS-over-TCP exchange."""
        with socket.create_connection(addr, timeout=timeout) as s:
            s.sendall(len(data).to_bytes(2, "big") + data)
            head = _recv_exact(s, 2)
            return _recv_exact(s, int.from_bytes(head, "big"))


def _recv_exact(s: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = s.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed mid-message")
        buf += chunk
    return buf
