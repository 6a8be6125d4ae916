"""Message codec and the two interchangeable transports.

Frame layout (little-endian): magic ``FK``, version byte (1), message-type
byte, u32 payload length, payload. Floats are IEEE-754 binary64. The
loopback transport pushes every message through the same encode/decode path
as the TCP transport, so a federated run produces bit-identical traces in
one process or across processes.

Clients introduce themselves after connecting with an empty Delta frame
(zero-length payload array) carrying their client id; the server answers
with that client's AssignPartition. Only participants of a round receive
its Broadcast.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass

import numpy as np

from .core import RngStream, SamplingScheme, as_vector
from .errors import (
    BadMagic,
    BadType,
    BadVersion,
    ConnectionLost,
    LengthMismatch,
    RoundError,
    Truncated,
)
from .federation import (
    TAG_SELECT,
    TAG_SERVER,
    FedTrace,
    apply_server_round,
    client_blocks,
    client_local_update,
    local_stream_seed,
    partition_system,
    sample_clients,
)
from .solver import LinearSystem

__all__ = [
    "MAGIC",
    "VERSION",
    "AssignPartition",
    "Broadcast",
    "Delta",
    "Shutdown",
    "Endpoint",
    "encode",
    "decode",
    "ClientSession",
    "run_server",
    "run_client",
]

MAGIC = b"FK"
VERSION = 1

MSG_ASSIGN = 1
MSG_BROADCAST = 2
MSG_DELTA = 3
MSG_SHUTDOWN = 4

_HEADER = struct.Struct("<2sBBI")


def _check_uint(value, bits, name):
    value = int(value)
    if not 0 <= value <= (2**bits - 1):
        raise ValueError(f"{name} must fit in {bits} unsigned bits")
    return value


@dataclass(frozen=True, eq=False)
class AssignPartition:
    """Server -> client: the client's rows of the system."""

    client_id: int
    A: np.ndarray
    b: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, AssignPartition)
            and self.client_id == other.client_id
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.b, other.b)
        )


@dataclass(frozen=True, eq=False)
class Broadcast:
    """Server -> client: the round's global iterate plus the local stream seed."""

    round_index: int
    x: np.ndarray
    local_iters: int
    stream_seed: int

    def __eq__(self, other):
        return (
            isinstance(other, Broadcast)
            and self.round_index == other.round_index
            and self.local_iters == other.local_iters
            and self.stream_seed == other.stream_seed
            and np.array_equal(self.x, other.x)
        )


@dataclass(frozen=True, eq=False)
class Delta:
    """Client -> server: the local model change for one round."""

    round_index: int
    client_id: int
    delta: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, Delta)
            and self.round_index == other.round_index
            and self.client_id == other.client_id
            and np.array_equal(self.delta, other.delta)
        )


@dataclass(frozen=True)
class Shutdown:
    """Server -> client: the run is over."""


def _f64_bytes(array):
    return np.ascontiguousarray(array, dtype="<f8").tobytes()


def encode(msg):
    """Serialize a message into one frame."""
    if isinstance(msg, AssignPartition):
        A = np.asarray(msg.A, dtype=np.float64)
        b = np.asarray(msg.b, dtype=np.float64)
        rows, cols = A.shape
        if b.shape != (rows,):
            raise ValueError("b must have one entry per row of A")
        payload = struct.pack(
            "<III",
            _check_uint(msg.client_id, 32, "client_id"),
            _check_uint(rows, 32, "rows"),
            _check_uint(cols, 32, "cols"),
        ) + _f64_bytes(A) + _f64_bytes(b)
        msg_type = MSG_ASSIGN
    elif isinstance(msg, Broadcast):
        x = np.asarray(msg.x, dtype=np.float64)
        payload = (
            struct.pack(
                "<II",
                _check_uint(msg.round_index, 32, "round"),
                _check_uint(x.size, 32, "n"),
            )
            + _f64_bytes(x)
            + struct.pack(
                "<IQ",
                _check_uint(msg.local_iters, 32, "local_iters"),
                _check_uint(msg.stream_seed, 64, "stream_seed"),
            )
        )
        msg_type = MSG_BROADCAST
    elif isinstance(msg, Delta):
        delta = np.asarray(msg.delta, dtype=np.float64)
        payload = struct.pack(
            "<III",
            _check_uint(msg.round_index, 32, "round"),
            _check_uint(msg.client_id, 32, "client_id"),
            _check_uint(delta.size, 32, "n"),
        ) + _f64_bytes(delta)
        msg_type = MSG_DELTA
    elif isinstance(msg, Shutdown):
        payload = b""
        msg_type = MSG_SHUTDOWN
    else:
        raise TypeError(f"not a transport message: {type(msg).__name__}")
    return _HEADER.pack(MAGIC, VERSION, msg_type, len(payload)) + payload


class _PayloadReader:
    """Sequential field reader that never runs past the declared payload."""

    def __init__(self, payload, base_offset):
        self._payload = payload
        self._base = base_offset
        self._pos = 0

    def _take(self, nbytes):
        if self._pos + nbytes > len(self._payload):
            raise LengthMismatch(
                "payload field overruns declared length", self._base + self._pos
            )
        out = self._payload[self._pos:self._pos + nbytes]
        self._pos += nbytes
        return out

    def u32(self):
        return struct.unpack("<I", self._take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self._take(8))[0]

    def f64_array(self, count):
        raw = self._take(8 * count)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    def finish(self):
        if self._pos != len(self._payload):
            raise LengthMismatch("trailing bytes in payload", self._base + self._pos)


def decode(data):
    """Parse one frame; the exact inverse of :func:`encode`.

    Raises a typed CodecError naming the offending byte offset; never reads
    past the declared frame.
    """
    buf = bytes(data)
    if len(buf) < _HEADER.size:
        raise Truncated("incomplete frame header", len(buf))
    magic, version, msg_type, payload_len = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}", 2)
    if msg_type not in (MSG_ASSIGN, MSG_BROADCAST, MSG_DELTA, MSG_SHUTDOWN):
        raise BadType(f"unknown message type {msg_type}", 3)
    if len(buf) < _HEADER.size + payload_len:
        raise Truncated("payload shorter than declared", len(buf))
    if len(buf) > _HEADER.size + payload_len:
        raise LengthMismatch("bytes beyond declared frame", _HEADER.size + payload_len)

    reader = _PayloadReader(buf[_HEADER.size:], _HEADER.size)
    if msg_type == MSG_ASSIGN:
        client_id = reader.u32()
        rows = reader.u32()
        cols = reader.u32()
        a_flat = reader.f64_array(rows * cols)
        b = reader.f64_array(rows)
        reader.finish()
        return AssignPartition(client_id, a_flat.reshape(rows, cols), b)
    if msg_type == MSG_BROADCAST:
        round_index = reader.u32()
        n = reader.u32()
        x = reader.f64_array(n)
        local_iters = reader.u32()
        stream_seed = reader.u64()
        reader.finish()
        return Broadcast(round_index, x, local_iters, stream_seed)
    if msg_type == MSG_DELTA:
        round_index = reader.u32()
        client_id = reader.u32()
        n = reader.u32()
        delta = reader.f64_array(n)
        reader.finish()
        return Delta(round_index, client_id, delta)
    reader.finish()
    return Shutdown()


@dataclass(frozen=True)
class Endpoint:
    """Where a run lives: in-process loopback or a TCP address."""

    role: str
    transport: str
    host: str = "127.0.0.1"
    port: int = 0

    @classmethod
    def loopback(cls):
        return cls(role="server", transport="loopback")

    @classmethod
    def server(cls, host="127.0.0.1", port=0):
        return cls(role="server", transport="socket", host=host, port=port)

    @classmethod
    def client(cls, host="127.0.0.1", port=0):
        return cls(role="client", transport="socket", host=host, port=port)


class ClientSession:
    """Client-side protocol state machine, transport independent."""

    def __init__(self, client_id, scheme=SamplingScheme.squared_row_norm()):
        self.client_id = int(client_id)
        self.scheme = scheme
        self.block = None
        self.done = False

    def handle(self, msg):
        """Process one server message, returning reply messages."""
        if isinstance(msg, AssignPartition):
            if msg.client_id != self.client_id:
                raise RoundError(
                    f"partition for client {msg.client_id} delivered to {self.client_id}",
                    client_id=self.client_id,
                )
            self.block = LinearSystem(msg.A, msg.b)
            return []
        if isinstance(msg, Broadcast):
            if self.block is None:
                raise RoundError(
                    f"client {self.client_id} has no partition", client_id=self.client_id
                )
            rng = RngStream(msg.stream_seed)
            delta = client_local_update(
                self.block, msg.x, msg.local_iters, self.scheme, rng
            )
            return [Delta(msg.round_index, self.client_id, delta)]
        if isinstance(msg, Shutdown):
            self.done = True
            return []
        raise RoundError(
            f"client {self.client_id} received unexpected {type(msg).__name__}",
            client_id=self.client_id,
        )


class _LoopbackConnection:
    """In-process client that still round-trips every message through bytes."""

    def __init__(self, client_id, scheme):
        self.client_id = client_id
        self._session = ClientSession(client_id, scheme)
        self._inbox = []

    def send(self, msg):
        delivered = decode(encode(msg))
        for reply in self._session.handle(delivered):
            self._inbox.append(decode(encode(reply)))

    def recv(self):
        if not self._inbox:
            raise RoundError(
                f"client {self.client_id} sent no reply", client_id=self.client_id
            )
        return self._inbox.pop(0)

    def close(self):
        pass


def _recv_exact(sock, nbytes):
    buf = bytearray()
    while len(buf) < nbytes:
        chunk = sock.recv(nbytes - len(buf))
        if not chunk:
            if buf:
                raise Truncated("connection closed mid-frame", len(buf))
            return None
        buf.extend(chunk)
    return bytes(buf)


def read_frame(sock):
    """Read one frame from a socket; None on clean end-of-stream."""
    header = _recv_exact(sock, _HEADER.size)
    if header is None:
        return None
    _, _, _, payload_len = _HEADER.unpack(header)
    payload = b""
    if payload_len:
        payload = _recv_exact(sock, payload_len)
        if payload is None:
            raise Truncated("connection closed before payload", _HEADER.size)
    return decode(header + payload)


def write_frame(sock, msg):
    sock.sendall(encode(msg))


class _SocketConnection:
    def __init__(self, sock, client_id):
        self.client_id = client_id
        self._sock = sock

    def send(self, msg):
        try:
            write_frame(self._sock, msg)
        except OSError as exc:
            raise ConnectionLost(
                f"client {self.client_id} connection lost: {exc}",
                client_id=self.client_id,
            ) from exc

    def recv(self):
        try:
            msg = read_frame(self._sock)
        except socket.timeout as exc:
            raise RoundError(
                f"client {self.client_id} timed out", client_id=self.client_id
            ) from exc
        except (OSError, Truncated) as exc:
            raise ConnectionLost(
                f"client {self.client_id} connection lost: {exc}",
                client_id=self.client_id,
            ) from exc
        if msg is None:
            raise ConnectionLost(
                f"client {self.client_id} closed its connection",
                client_id=self.client_id,
            )
        return msg

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


def _accept_clients(endpoint, clients, timeout):
    listener = socket.create_server((endpoint.host, endpoint.port), reuse_port=False)
    listener.settimeout(timeout)
    conns = {}
    try:
        while len(conns) < clients:
            try:
                sock, _ = listener.accept()
            except socket.timeout:
                raise RoundError(
                    f"timed out waiting for clients ({len(conns)}/{clients} joined)"
                )
            sock.settimeout(timeout)
            hello = read_frame(sock)
            if not isinstance(hello, Delta) or hello.delta.size != 0:
                sock.close()
                raise RoundError("malformed client hello")
            cid = hello.client_id
            if cid >= clients or cid in conns:
                sock.close()
                raise RoundError(f"bad or duplicate client id {cid}", client_id=cid)
            conns[cid] = _SocketConnection(sock, cid)
    finally:
        listener.close()
    return conns


def run_server(endpoint, system, config, x0=None, x_ref=None, timeout=30.0):
    """Drive a full federated run over the endpoint's transport.

    Returns ``(x_final, FedTrace)``; for equal master seeds the trace is
    bit-identical across loopback and sockets, and to :func:`fed_run`.
    """
    if endpoint.role != "server":
        raise ValueError("run_server needs a server endpoint")
    partition = partition_system(system, config.clients)
    blocks = client_blocks(system, partition)
    x = np.zeros(system.cols) if x0 is None else as_vector(x0, name="x0").copy()
    if x_ref is not None:
        x_ref = as_vector(x_ref, name="x_ref")

    if endpoint.transport == "loopback":
        conns = {
            cid: _LoopbackConnection(cid, config.local_scheme)
            for cid in range(config.clients)
        }
    elif endpoint.transport == "socket":
        conns = _accept_clients(endpoint, config.clients, timeout)
    else:
        raise ValueError(f"unknown transport {endpoint.transport!r}")

    trace = FedTrace()

    def log(round_index, participant_ids, dropped):
        error = None if x_ref is None else float(np.linalg.norm(x - x_ref))
        trace.append(round_index, error, system.residual_norm(x), participant_ids, dropped)

    try:
        for cid, block in enumerate(blocks):
            conns[cid].send(AssignPartition(cid, block.A, block.b))

        log(0, (), 0)
        seed = config.master_seed
        for t in range(config.rounds):
            select_stream = RngStream(seed, (t, TAG_SELECT))
            server_stream = RngStream(seed, (t, TAG_SERVER))
            participants = sample_clients(config.clients, config.participants, select_stream)
            for cid in participants:
                conns[cid].send(
                    Broadcast(t, x, config.local_iters, local_stream_seed(seed, t, cid))
                )
            deltas = []
            for cid in participants:
                msg = conns[cid].recv()
                if not isinstance(msg, Delta):
                    raise RoundError(
                        f"client {cid} replied with {type(msg).__name__}", client_id=cid
                    )
                if msg.round_index != t:
                    raise RoundError(
                        f"client {cid} sent a stale round {msg.round_index} delta",
                        client_id=cid,
                    )
                if msg.client_id != cid:
                    raise RoundError(
                        f"delta labelled {msg.client_id} arrived on connection {cid}",
                        client_id=cid,
                    )
                deltas.append((cid, msg.delta))
            x, kept = apply_server_round(deltas, x, config, server_stream)
            log(t + 1, participants, len(deltas) - len(kept))
            if config.residual_tol is not None and trace.residuals[-1] <= config.residual_tol:
                trace.stopped_early = True
                break
    finally:
        for conn in conns.values():
            try:
                conn.send(Shutdown())
            except (RoundError, OSError):
                pass
            conn.close()
    return x, trace


def run_client(endpoint, client_id, scheme=SamplingScheme.squared_row_norm(), timeout=30.0):
    """Join a socket-transport run as one client and serve until Shutdown."""
    if endpoint.transport != "socket":
        raise ValueError("run_client only applies to the socket transport")
    session = ClientSession(client_id, scheme)
    sock = socket.create_connection((endpoint.host, endpoint.port), timeout=timeout)
    sock.settimeout(timeout)
    try:
        # hello: an empty delta carrying our id
        write_frame(sock, Delta(0, session.client_id, np.zeros(0)))
        while not session.done:
            msg = read_frame(sock)
            if msg is None:
                raise ConnectionLost(
                    f"server closed connection to client {session.client_id}",
                    client_id=session.client_id,
                )
            for reply in session.handle(msg):
                write_frame(sock, reply)
    finally:
        sock.close()
