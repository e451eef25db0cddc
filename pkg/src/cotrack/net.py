"""Framed binary wire protocol, streaming decoder, session logic, pose hub.

Frame layout (all little-endian): [u32 total_size][u32 msg_type][payload],
total_size counting the 8 prefix bytes.  Message types:

  6  rigid-body frame:  [u32 frame_number][u64 timestamp_us][u16 count]
                        then per body [u16 id][3 x f32 pos mm][4 x f32 quat wxyz]
  7  shared pose:       [u16 user_id][u32 frame_number] + 3 poses
                        (head, left hand, right hand), each [3 x f32 pos m][4 x f32 quat]
  8  poll request:      [u16 user_id]
  9  poll reply:        [u16 count] + count shared-pose payloads
  10 register user:     [u16 user_id]
  11 error:             [u16 code] + utf-8 text

Rigid-body positions are millimeters in the RH Z-up mocap frame; body
float payloads round-trip bit-exact (NaN patterns included).  An
untracked body is a placeholder: every one of its 7 floats is NaN.
Shared poses are app-level and use meters.
"""

import logging
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import MalformedFrameError, PortBindError, UnregisteredUserError
from .geom import Pose, quat_normalize

log = logging.getLogger(__name__)

FRAME_PREFIX = struct.Struct("<II")
RIGID_META = struct.Struct("<IQH")
SHARED_META = struct.Struct("<HI")
POSE_BYTES = 28

MSG_RIGID_BODIES = 6
MSG_SHARED_POSE = 7
MSG_POLL = 8
MSG_POLL_REPLY = 9
MSG_REGISTER = 10
MSG_ERROR = 11

MAX_FRAME_BYTES = 16384
MAX_BODIES = 64
MM_PER_M = 1000.0

DEFAULT_MOCAP_PORT = 22222
DEFAULT_HUB_PORT = 22333

ERR_UNREGISTERED = 1
ERR_MALFORMED = 2


@dataclass(eq=False)
class BodyEntry:
    """One rigid body in a mocap frame, in wire units (f32, mm)."""

    body_id: int
    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype="<f4").reshape(3)
        self.rotation = np.asarray(self.rotation, dtype="<f4").reshape(4)

    def __eq__(self, other):
        if not isinstance(other, BodyEntry):
            return NotImplemented
        return (
            self.body_id == other.body_id
            and self.position.tobytes() == other.position.tobytes()
            and self.rotation.tobytes() == other.rotation.tobytes()
        )

    @classmethod
    def placeholder(cls, body_id: int) -> "BodyEntry":
        nan3 = np.full(3, np.nan, dtype="<f4")
        nan4 = np.full(4, np.nan, dtype="<f4")
        return cls(body_id, nan3, nan4)

    @classmethod
    def from_pose(cls, body_id: int, pose: Pose) -> "BodyEntry":
        return cls(body_id, (pose.t * MM_PER_M).astype("<f4"), pose.q.astype("<f4"))

    def to_pose(self) -> Pose:
        if not (np.isfinite(self.position).all() and np.isfinite(self.rotation).all()):
            raise ValueError("placeholder or corrupt body has no pose")
        return Pose(
            quat_normalize(self.rotation.astype(float)),
            self.position.astype(float) / MM_PER_M,
        )


def is_placeholder(body: BodyEntry) -> bool:
    """True iff every position and rotation component is NaN."""
    return bool(np.isnan(body.position).all() and np.isnan(body.rotation).all())


def is_corrupt(body: BodyEntry) -> bool:
    """Some but not all components NaN: neither a pose nor the sentinel."""
    n = int(np.isnan(body.position).sum() + np.isnan(body.rotation).sum())
    return 0 < n < 7


@dataclass(eq=False)
class RigidBodyPacket:
    frame_number: int
    timestamp_us: int
    bodies: list[BodyEntry] = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, RigidBodyPacket):
            return NotImplemented
        return (
            self.frame_number == other.frame_number
            and self.timestamp_us == other.timestamp_us
            and self.bodies == other.bodies
        )


def _frame(msg_type: int, payload: bytes) -> bytes:
    total = FRAME_PREFIX.size + len(payload)
    if total > MAX_FRAME_BYTES:
        raise MalformedFrameError(f"frame of {total} bytes exceeds {MAX_FRAME_BYTES}")
    return FRAME_PREFIX.pack(total, msg_type) + payload


def encode_packet(p: RigidBodyPacket) -> bytes:
    if len(p.bodies) > MAX_BODIES:
        raise MalformedFrameError(f"{len(p.bodies)} bodies exceeds the {MAX_BODIES} limit")
    parts = [RIGID_META.pack(p.frame_number, p.timestamp_us, len(p.bodies))]
    for b in p.bodies:
        parts.append(struct.pack("<H", b.body_id))
        parts.append(b.position.tobytes())
        parts.append(b.rotation.tobytes())
    return _frame(MSG_RIGID_BODIES, b"".join(parts))


def _parse_rigid(payload: bytes) -> RigidBodyPacket:
    if len(payload) < RIGID_META.size:
        raise MalformedFrameError("rigid-body frame shorter than its fixed header")
    frame_number, timestamp_us, count = RIGID_META.unpack_from(payload)
    if count > MAX_BODIES:
        raise MalformedFrameError(f"{count} bodies exceeds the {MAX_BODIES} limit")
    body_size = 2 + 7 * 4
    if len(payload) != RIGID_META.size + count * body_size:
        raise MalformedFrameError("size field inconsistent with body count")
    bodies = []
    for i in range(count):
        off = RIGID_META.size + i * body_size
        (body_id,) = struct.unpack_from("<H", payload, off)
        pos = np.frombuffer(payload, dtype="<f4", count=3, offset=off + 2).copy()
        rot = np.frombuffer(payload, dtype="<f4", count=4, offset=off + 14).copy()
        bodies.append(BodyEntry(body_id, pos, rot))
    return RigidBodyPacket(frame_number, timestamp_us, bodies)


@dataclass(frozen=True, eq=False)
class SharedPoseMessage:
    """Poses one user shares with the others: head and both hands."""

    user_id: int
    frame_number: int
    head: Pose
    left_hand: Pose
    right_hand: Pose

    def encode(self) -> bytes:
        return _frame(MSG_SHARED_POSE, self._payload())

    def _payload(self) -> bytes:
        parts = [SHARED_META.pack(self.user_id, self.frame_number)]
        for pose in (self.head, self.left_hand, self.right_hand):
            parts.append(np.concatenate([pose.t, pose.q]).astype("<f4").tobytes())
        return b"".join(parts)


def _parse_shared_payload(payload: bytes, offset: int = 0) -> SharedPoseMessage:
    if len(payload) - offset < SHARED_META.size + 3 * POSE_BYTES:
        raise MalformedFrameError("shared-pose payload truncated")
    user_id, frame_number = SHARED_META.unpack_from(payload, offset)
    poses = []
    for i in range(3):
        off = offset + SHARED_META.size + i * POSE_BYTES
        vals = np.frombuffer(payload, dtype="<f4", count=7, offset=off).astype(float)
        poses.append(Pose(quat_normalize(vals[3:]), vals[:3]))
    return SharedPoseMessage(user_id, frame_number, *poses)


def _parse_shared(payload: bytes) -> SharedPoseMessage:
    if len(payload) != SHARED_META.size + 3 * POSE_BYTES:
        raise MalformedFrameError("shared-pose frame has wrong size")
    return _parse_shared_payload(payload)


@dataclass(frozen=True)
class PollRequest:
    user_id: int

    def encode(self) -> bytes:
        return _frame(MSG_POLL, struct.pack("<H", self.user_id))


@dataclass(frozen=True)
class RegisterUser:
    user_id: int

    def encode(self) -> bytes:
        return _frame(MSG_REGISTER, struct.pack("<H", self.user_id))


@dataclass(frozen=True, eq=False)
class PollReply:
    messages: tuple

    def encode(self) -> bytes:
        parts = [struct.pack("<H", len(self.messages))]
        parts.extend(m._payload() for m in self.messages)
        return _frame(MSG_POLL_REPLY, b"".join(parts))


def _parse_poll_reply(payload: bytes) -> PollReply:
    if len(payload) < 2:
        raise MalformedFrameError("poll reply truncated")
    (count,) = struct.unpack_from("<H", payload)
    entry = SHARED_META.size + 3 * POSE_BYTES
    if len(payload) != 2 + count * entry:
        raise MalformedFrameError("poll reply size inconsistent with count")
    msgs = tuple(_parse_shared_payload(payload, 2 + i * entry) for i in range(count))
    return PollReply(msgs)


@dataclass(frozen=True)
class ErrorFrame:
    code: int
    message: str = ""

    def encode(self) -> bytes:
        return _frame(MSG_ERROR, struct.pack("<H", self.code) + self.message.encode())


def _parse_simple_uid(payload, cls):
    if len(payload) != 2:
        raise MalformedFrameError(f"{cls.__name__} frame has wrong size")
    return cls(struct.unpack("<H", payload)[0])


def _parse_error(payload: bytes) -> ErrorFrame:
    if len(payload) < 2:
        raise MalformedFrameError("error frame truncated")
    return ErrorFrame(struct.unpack_from("<H", payload)[0], payload[2:].decode(errors="replace"))


_PARSERS = {
    MSG_RIGID_BODIES: _parse_rigid,
    MSG_SHARED_POSE: _parse_shared,
    MSG_POLL: lambda p: _parse_simple_uid(p, PollRequest),
    MSG_POLL_REPLY: _parse_poll_reply,
    MSG_REGISTER: lambda p: _parse_simple_uid(p, RegisterUser),
    MSG_ERROR: _parse_error,
}


class PacketDecoder:
    """Incremental frame decoder for one byte stream.

    feed() consumes any chunking of the stream and yields each complete
    message exactly once; partial frames wait in the reassembly buffer.
    Unknown message types are skipped with a warning and counted.
    """

    def __init__(self):
        self._buf = bytearray()
        self.skipped = 0

    def feed(self, data: bytes) -> list:
        self._buf += data
        out = []
        while True:
            if len(self._buf) < FRAME_PREFIX.size:
                return out
            total, msg_type = FRAME_PREFIX.unpack_from(self._buf)
            if total < FRAME_PREFIX.size or total > MAX_FRAME_BYTES:
                raise MalformedFrameError(f"frame size field {total} out of bounds")
            if len(self._buf) < total:
                return out
            payload = bytes(self._buf[FRAME_PREFIX.size : total])
            del self._buf[:total]
            parser = _PARSERS.get(msg_type)
            if parser is None:
                self.skipped += 1
                log.warning("skipping unknown frame type %d (%d bytes)", msg_type, total)
                continue
            out.append(parser(payload))

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


def split_stream(data: bytes) -> list:
    """Split a capture into raw frame byte strings without parsing payloads."""
    frames = []
    off = 0
    while off < len(data):
        if len(data) - off < FRAME_PREFIX.size:
            raise MalformedFrameError("trailing bytes shorter than a frame prefix")
        total, _ = FRAME_PREFIX.unpack_from(data, off)
        if total < FRAME_PREFIX.size or total > MAX_FRAME_BYTES:
            raise MalformedFrameError(f"frame size field {total} out of bounds")
        if off + total > len(data):
            raise MalformedFrameError("truncated final frame")
        frames.append(data[off : off + total])
        off += total
    return frames


def decode_packet(data: bytes) -> RigidBodyPacket:
    """Decode exactly one complete rigid-body frame."""
    dec = PacketDecoder()
    msgs = dec.feed(data)
    if not msgs or dec.pending_bytes:
        raise MalformedFrameError("data is not exactly one complete frame")
    if len(msgs) != 1 or not isinstance(msgs[0], RigidBodyPacket):
        raise MalformedFrameError("expected a single rigid-body frame")
    return msgs[0]


@dataclass(frozen=True)
class SessionState:
    """Mocap ingest state for one client session.

    Starts awaiting_data; the first frame whose tracked body carries a
    real (non-placeholder) pose switches the session to tracking, and
    that frame is the first delivered downstream.  The transition is
    one-way.  During tracking, placeholder or corrupt entries leave the
    last stored pose untouched and age it via the staleness counter.
    """

    tracked_body_id: int
    phase: str = "awaiting_data"
    poses: dict = field(default_factory=dict)
    staleness: dict = field(default_factory=dict)

    @property
    def tracking(self) -> bool:
        return self.phase == "tracking"


def session_step(state: SessionState, packet: RigidBodyPacket) -> SessionState:
    if state.phase == "awaiting_data":
        tracked = next((b for b in packet.bodies if b.body_id == state.tracked_body_id), None)
        if tracked is None or is_placeholder(tracked) or is_corrupt(tracked):
            return state
        phase = "tracking"
    else:
        phase = "tracking"
    poses = dict(state.poses)
    staleness = dict(state.staleness)
    for b in packet.bodies:
        if is_placeholder(b) or is_corrupt(b):
            staleness[b.body_id] = staleness.get(b.body_id, 0) + 1
        else:
            poses[b.body_id] = b
            staleness[b.body_id] = 0
    return SessionState(state.tracked_body_id, phase, poses, staleness)


class PoseHub:
    """Latest-wins pose exchange between registered users.

    publish keeps, per user, the message with the highest frame_number
    seen so far (equal or lower numbers are dropped); poll returns the
    stored message of every other registered user.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._registered = set()
        self._latest = {}

    def register(self, user_id: int):
        with self._lock:
            self._registered.add(user_id)

    def publish(self, msg: SharedPoseMessage):
        with self._lock:
            if msg.user_id not in self._registered:
                raise UnregisteredUserError(f"user {msg.user_id} is not registered")
            cur = self._latest.get(msg.user_id)
            if cur is None or msg.frame_number > cur.frame_number:
                self._latest[msg.user_id] = msg

    def poll(self, user_id: int) -> list:
        with self._lock:
            if user_id not in self._registered:
                raise UnregisteredUserError(f"user {user_id} is not registered")
            return [m for u, m in sorted(self._latest.items()) if u != user_id]


def hub_publish(hub: PoseHub, msg: SharedPoseMessage):
    hub.publish(msg)


def hub_poll(hub: PoseHub, user_id: int) -> list:
    return hub.poll(user_id)


def _create_listener(host: str, port: int) -> socket.socket:
    try:
        return socket.create_server((host, port))
    except OSError as e:
        raise PortBindError(f"cannot bind {host}:{port}: {e}") from e


class MocapStreamServer:
    """Broadcasts a sequence of pre-encoded frames to every connected client.

    With wait_for_client (default) the pump starts once the first client
    connects, so that client sees the sequence from the top.  rate paces
    frames; rate=None sends as fast as the sockets accept.
    """

    def __init__(self, host: str, port: int, frames, rate: float | None = None,
                 wait_for_client: bool = True):
        self._frames = list(frames)
        self._rate = rate
        self._wait = wait_for_client
        self._listener = _create_listener(host, port)
        self.port = self._listener.getsockname()[1]
        self._clients = []
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._threads = []
        self.frames_sent = 0

    def start(self):
        for fn in (self._accept_loop, self._pump):
            t = threading.Thread(target=fn, daemon=True)
            t.start()
            self._threads.append(t)

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            with self._lock:
                self._clients.append(conn)

    def _have_client(self) -> bool:
        with self._lock:
            return bool(self._clients)

    def _pump(self):
        if self._wait:
            while not self._have_client() and not self._stop.is_set():
                time.sleep(0.001)
        period = 1.0 / self._rate if self._rate else 0.0
        next_t = time.monotonic()
        for frame in self._frames:
            if self._stop.is_set():
                return
            if period:
                next_t += period
                delay = next_t - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            with self._lock:
                clients = list(self._clients)
            for c in clients:
                try:
                    c.sendall(frame)
                except OSError:
                    with self._lock:
                        if c in self._clients:
                            self._clients.remove(c)
                    c.close()
            self.frames_sent += 1
        # closing after the last frame is the end-of-stream signal;
        # without it a client cannot tell "done" from "stalled"
        with self._lock:
            clients = list(self._clients)
            self._clients.clear()
        for c in clients:
            c.close()

    def done(self) -> bool:
        return self.frames_sent >= len(self._frames)

    def stop(self):
        self._stop.set()
        self._listener.close()
        with self._lock:
            clients = list(self._clients)
            self._clients.clear()
        for c in clients:
            c.close()
        for t in self._threads:
            t.join(timeout=2.0)


class _HubHandler(socketserver.BaseRequestHandler):
    def handle(self):
        decoder = PacketDecoder()
        hub = self.server.hub
        while True:
            try:
                data = self.request.recv(4096)
            except OSError:
                return
            if not data:
                return
            try:
                msgs = decoder.feed(data)
            except MalformedFrameError as e:
                self.request.sendall(ErrorFrame(ERR_MALFORMED, str(e)).encode())
                return
            for msg in msgs:
                reply = self._dispatch(hub, msg)
                if reply is not None:
                    self.request.sendall(reply)

    def _dispatch(self, hub, msg):
        try:
            if isinstance(msg, RegisterUser):
                hub.register(msg.user_id)
                return None
            if isinstance(msg, SharedPoseMessage):
                hub.publish(msg)
                return None
            if isinstance(msg, PollRequest):
                return PollReply(tuple(hub.poll(msg.user_id))).encode()
        except UnregisteredUserError as e:
            return ErrorFrame(ERR_UNREGISTERED, str(e)).encode()
        return ErrorFrame(ERR_MALFORMED, f"unexpected {type(msg).__name__}").encode()


class _HubTCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class HubServer:
    """TCP front end for a PoseHub (one connection per user session)."""

    def __init__(self, host: str, port: int, hub: PoseHub | None = None):
        self.hub = hub if hub is not None else PoseHub()
        try:
            self._srv = _HubTCPServer((host, port), _HubHandler)
        except OSError as e:
            raise PortBindError(f"cannot bind {host}:{port}: {e}") from e
        self._srv.hub = self.hub
        self.port = self._srv.server_address[1]
        self._thread = None

    def start(self):
        self._thread = threading.Thread(target=self._srv.serve_forever, daemon=True)
        self._thread.start()

    def stop(self):
        self._srv.shutdown()
        self._srv.server_close()
        if self._thread is not None:
            self._thread.join(timeout=2.0)


class HubClient:
    """Blocking client for the hub protocol."""

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._decoder = PacketDecoder()
        self._inbox = []

    def register(self, user_id: int):
        self._sock.sendall(RegisterUser(user_id).encode())

    def publish(self, msg: SharedPoseMessage):
        self._sock.sendall(msg.encode())

    def poll(self, user_id: int) -> list:
        self._sock.sendall(PollRequest(user_id).encode())
        msg = self._next_message()
        if isinstance(msg, ErrorFrame):
            if msg.code == ERR_UNREGISTERED:
                raise UnregisteredUserError(msg.message)
            raise MalformedFrameError(msg.message)
        if not isinstance(msg, PollReply):
            raise MalformedFrameError(f"unexpected reply {type(msg).__name__}")
        return list(msg.messages)

    def _next_message(self):
        while not self._inbox:
            data = self._sock.recv(4096)
            if not data:
                raise ConnectionError("hub closed the connection")
            self._inbox.extend(self._decoder.feed(data))
        return self._inbox.pop(0)

    def close(self):
        self._sock.close()
