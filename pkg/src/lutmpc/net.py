"""Two-party transport with framing, round counting and byte accounting.

Wire format of one frame::

    length   u32 big-endian   = len(payload) + 3
    msg_type u8
    session  u16 big-endian
    payload  length - 3 bytes
    crc32    u32 big-endian   over all preceding bytes of the frame

Ring words inside payloads are little-endian u64; curve points are 33-byte
compressed SEC1 encodings.

An ``exchange`` sends one frame and then blocks on the peer's frame. Both
parties do this at the same time, so one exchange is one round.
"""

import queue
import socket
import struct
import threading
import time
import zlib
from contextlib import contextmanager
from dataclasses import dataclass, fields
from enum import IntEnum

import numpy as np

from .errors import ConnectionFailed, FrameCorrupt, PeerTimeout

HEADER = struct.Struct(">IBH")
TRAILER = struct.Struct(">I")
MAX_PAYLOAD = 1 << 30
FRAME_OVERHEAD = 3


class MsgType(IntEnum):
    OPEN = 1
    BEAVER = 2
    MATMUL = 3
    LOOKUP = 4
    CONVERT = 5
    EC_FIRST = 6
    EC_SECOND = 7
    CONTROL = 8


@dataclass(frozen=True)
class Frame:
    msg_type: int
    session_id: int
    payload: bytes

    @property
    def length(self):
        return len(self.payload) + FRAME_OVERHEAD

    def encode(self):
        if len(self.payload) > MAX_PAYLOAD:
            raise FrameCorrupt("payload too large")
        head = HEADER.pack(self.length, int(self.msg_type), self.session_id)
        body = head + self.payload
        return body + TRAILER.pack(zlib.crc32(body))


def decode_frame(buf):
    """Decode exactly one frame from ``buf``.

    Raises:
        FrameCorrupt: on any inconsistency, including trailing bytes.
    """
    buf = bytes(buf)
    if len(buf) < HEADER.size + TRAILER.size:
        raise FrameCorrupt("short frame")
    length, msg_type, sid = HEADER.unpack_from(buf)
    if length < FRAME_OVERHEAD or length - FRAME_OVERHEAD > MAX_PAYLOAD:
        raise FrameCorrupt(f"bad length field {length}")
    end = 4 + length
    if len(buf) != end + TRAILER.size:
        raise FrameCorrupt("length field does not match buffer")
    (crc,) = TRAILER.unpack_from(buf, end)
    if crc != zlib.crc32(buf[:end]):
        raise FrameCorrupt("checksum mismatch")
    if msg_type not in MsgType._value2member_map_:
        raise FrameCorrupt(f"unknown message type {msg_type}")
    return Frame(msg_type, sid, buf[HEADER.size:end])


@dataclass
class SessionStats:
    """Per-session counters.

    ``payload_*`` counts protocol payload only, ``bytes_*`` adds the 3-byte
    type/session header, ``wire_*`` is everything put on the socket.
    """

    rounds: int = 0
    frames_sent: int = 0
    payload_sent: int = 0
    payload_recv: int = 0
    bytes_sent: int = 0
    bytes_recv: int = 0
    wire_sent: int = 0
    wire_recv: int = 0
    wall_time: float = 0.0

    def copy(self):
        return SessionStats(**{f.name: getattr(self, f.name) for f in fields(self)})

    def __sub__(self, other):
        return SessionStats(
            **{f.name: getattr(self, f.name) - getattr(other, f.name) for f in fields(self)})

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


class SocketChannel:
    """Byte stream over a connected socket."""

    def __init__(self, sock, timeout=60.0):
        self.sock = sock
        self.sock.settimeout(timeout)

    def send(self, data):
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise PeerTimeout(f"send failed: {exc}") from exc

    def recv_exact(self, n):
        chunks = bytearray()
        while len(chunks) < n:
            try:
                part = self.sock.recv(min(n - len(chunks), 1 << 20))
            except socket.timeout as exc:
                raise PeerTimeout("peer did not respond in time") from exc
            except OSError as exc:
                raise PeerTimeout(f"receive failed: {exc}") from exc
            if not part:
                if chunks:
                    raise FrameCorrupt("stream ended inside a frame")
                raise PeerTimeout("peer closed the connection")
            chunks += part
        return bytes(chunks)

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class MemoryChannel:
    """Scripted channel for tests: replies come from a fixed byte string."""

    def __init__(self, incoming=b""):
        self.incoming = bytearray(incoming)
        self.sent = bytearray()

    def feed(self, data):
        self.incoming += data

    def send(self, data):
        self.sent += data

    def recv_exact(self, n):
        if len(self.incoming) < n:
            if self.incoming:
                self.incoming.clear()
                raise FrameCorrupt("stream ended inside a frame")
            raise PeerTimeout("no more scripted input")
        out = bytes(self.incoming[:n])
        del self.incoming[:n]
        return out

    def close(self):
        pass


class Session:
    """One ordered duplex channel between the two parties.

    Outgoing frames go through a writer thread so that both parties can
    send large payloads at the same time without filling socket buffers.
    """

    def __init__(self, channel, party, session_id=0, threaded=True):
        self.channel = channel
        self.party = party
        self.session_id = session_id
        self.stats = SessionStats()
        self.latency = 0.0
        self.bandwidth = None
        self._err = None
        self._queue = None
        if threaded:
            self._queue = queue.Queue()
            self._writer = threading.Thread(target=self._write_loop, daemon=True)
            self._writer.start()

    def _delay(self, nbytes):
        d = self.latency
        if self.bandwidth:
            d += nbytes / self.bandwidth
        return d

    def _write_loop(self):
        while True:
            item = self._queue.get()
            if item is None:
                return
            try:
                d = self._delay(len(item))
                if d > 0:
                    time.sleep(d)
                self.channel.send(item)
            except Exception as exc:  # surfaced on the next exchange
                self._err = exc
                return

    def _send(self, data):
        if self._err is not None:
            raise self._err
        if self._queue is None:
            d = self._delay(len(data))
            if d > 0:
                time.sleep(d)
            self.channel.send(data)
        else:
            self._queue.put(data)

    def _recv_frame(self):
        head = self.channel.recv_exact(4)
        (length,) = struct.unpack(">I", head)
        if length < FRAME_OVERHEAD or length - FRAME_OVERHEAD > MAX_PAYLOAD:
            raise FrameCorrupt(f"bad length field {length}")
        rest = self.channel.recv_exact(length + TRAILER.size)
        return decode_frame(head + rest)

    def exchange(self, payload, msg_type):
        """Send ``payload`` and return the peer's payload of the same type."""
        t0 = time.perf_counter()
        frame = Frame(int(msg_type), self.session_id, bytes(payload))
        data = frame.encode()
        self._send(data)
        got = self._recv_frame()
        if got.msg_type != int(msg_type):
            raise FrameCorrupt(f"expected message type {int(msg_type)}, got {got.msg_type}")
        if got.session_id != self.session_id:
            raise FrameCorrupt(f"session id {got.session_id} != {self.session_id}")
        st = self.stats
        st.rounds += 1
        st.frames_sent += 1
        st.payload_sent += len(frame.payload)
        st.payload_recv += len(got.payload)
        st.bytes_sent += frame.length
        st.bytes_recv += got.length
        st.wire_sent += len(data)
        st.wire_recv += got.length + 4 + TRAILER.size
        st.wall_time += time.perf_counter() - t0
        return got.payload

    def exchange_words(self, words, msg_type):
        """Exchange a uint64 array; the peer must send the same shape."""
        arr = np.ascontiguousarray(words, dtype=np.uint64)
        raw = self.exchange(arr.astype("<u8", copy=False).tobytes(), msg_type)
        if len(raw) != arr.nbytes:
            raise FrameCorrupt(f"expected {arr.nbytes} payload bytes, got {len(raw)}")
        return np.frombuffer(raw, dtype="<u8").astype(np.uint64).reshape(arr.shape)

    def exchange_blobs(self, blobs, size, msg_type):
        """Exchange a list of fixed-size byte strings (e.g. curve points)."""
        raw = self.exchange(b"".join(blobs), msg_type)
        if len(raw) != size * len(blobs):
            raise FrameCorrupt(f"expected {size * len(blobs)} payload bytes, got {len(raw)}")
        return [raw[i:i + size] for i in range(0, len(raw), size)]

    @contextmanager
    def measure(self):
        """Yield a stats object filled with the delta of the enclosed block."""
        before = self.stats.copy()
        out = SessionStats()
        try:
            yield out
        finally:
            delta = self.stats - before
            for f in fields(delta):
                setattr(out, f.name, getattr(delta, f.name))

    def close(self):
        if self._queue is not None:
            self._queue.put(None)
            self._writer.join(timeout=5)
        self.channel.close()


class NullSession:
    """Stand-in used for dry runs: the peer always answers with zeros."""

    def __init__(self, party=0):
        self.party = party
        self.stats = SessionStats()

    def exchange(self, payload, msg_type):
        self.stats.rounds += 1
        self.stats.payload_sent += len(payload)
        return bytes(len(payload))

    def exchange_words(self, words, msg_type):
        arr = np.asarray(words, dtype=np.uint64)
        self.exchange(b"\0" * arr.nbytes, msg_type)
        return np.zeros(arr.shape, dtype=np.uint64)

    def exchange_blobs(self, blobs, size, msg_type):
        raise NotImplementedError("dry runs do not exercise curve exchanges")

    def close(self):
        pass


def with_netem(session, latency_ms=0.0, bandwidth_mbps=None):
    """Add synthetic one-way latency and bandwidth to outgoing frames.

    Byte and round counters are not affected.
    """
    session.latency = latency_ms / 1000.0
    session.bandwidth = bandwidth_mbps * 1e6 if bandwidth_mbps else None
    return session


def loopback_pair(timeout=60.0, session_id=0):
    """Two connected sessions over an in-process socket pair."""
    a, b = socket.socketpair()
    return (Session(SocketChannel(a, timeout), 0, session_id),
            Session(SocketChannel(b, timeout), 1, session_id))


def run_parties(fn0, fn1, sessions=None, timeout=60.0):
    """Run ``fn0(session0)`` and ``fn1(session1)`` in two threads.

    Returns both results. If either side raises, the other side's session
    is closed so it fails fast, and the first original error is re-raised.
    """
    s0, s1 = sessions if sessions is not None else loopback_pair(timeout)
    results = [None, None]
    errors = [None, None]

    def work(i, fn, sess, other):
        try:
            results[i] = fn(sess)
        except BaseException as exc:
            errors[i] = (time.perf_counter(), exc)
            try:
                other.channel.close()
                sess.channel.close()
            except Exception:
                pass

    t0 = threading.Thread(target=work, args=(0, fn0, s0, s1))
    t1 = threading.Thread(target=work, args=(1, fn1, s1, s0))
    t0.start()
    t1.start()
    t0.join()
    t1.join()
    if sessions is None:
        s0.close()
        s1.close()
    errs = [e for e in errors if e is not None]
    if errs:
        errs.sort(key=lambda e: e[0])
        raise errs[0][1]
    return results[0], results[1]


def tcp_listen(host, port, party, timeout=60.0, session_id=0):
    """Accept one peer connection and return a session."""
    try:
        srv = socket.create_server((host, port))
        srv.settimeout(timeout)
        conn, _ = srv.accept()
        srv.close()
    except OSError as exc:
        raise ConnectionFailed(f"listen on {host}:{port} failed: {exc}") from exc
    conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return Session(SocketChannel(conn, timeout), party, session_id)


def tcp_connect(host, port, party, timeout=60.0, retries=50, session_id=0):
    """Connect to a listening peer, retrying while it starts up."""
    last = None
    for _ in range(retries):
        try:
            conn = socket.create_connection((host, port), timeout=timeout)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return Session(SocketChannel(conn, timeout), party, session_id)
        except OSError as exc:
            last = exc
            time.sleep(0.1)
    raise ConnectionFailed(f"connect to {host}:{port} failed: {last}")


def parse_endpoint(text):
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ConnectionFailed(f"bad endpoint {text!r}, expected host:port")
    return host, int(port)
