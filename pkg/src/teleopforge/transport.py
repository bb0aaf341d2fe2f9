"""Wire format and command flow control for all platform channels.

Every message is framed as

    4-byte big-endian length (type byte + payload) | 1-byte type | payload

Numeric payload fields are big-endian, floats IEEE-754 binary64, flags one
byte. JOIN / SESSION / HELLO / DEMO_DONE / ERROR payloads are UTF-8 JSON
bodies inside the binary frame; the control-rate messages (POSE_CMD,
STATE_FRAME, HAPTIC_EVENT) are fixed binary layouts. Encoding is canonical:
equal messages produce identical bytes. Frames ride inside WebSocket binary
messages (one frame per message) or directly on a TCP byte stream.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

MAX_PAYLOAD = 64 * 1024


class MsgType(IntEnum):
    HELLO = 1
    JOIN = 2
    SESSION = 3
    POSE_CMD = 4
    STATE_FRAME = 5
    HAPTIC_EVENT = 6
    RESET = 7
    DEMO_DONE = 8
    HEARTBEAT = 9
    ERROR = 10


class EncodeError(ValueError):
    pass


class DecodeError(ValueError):
    pass


@dataclass
class PoseCommand:
    seq: int
    client_timestamp: int  # milliseconds
    position: np.ndarray  # 3-vector, meters
    orientation: np.ndarray  # unit quaternion, w x y z
    gripper: bool
    engaged: bool  # clutch

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.orientation = np.asarray(self.orientation, dtype=float)
        n = float(np.linalg.norm(self.orientation))
        if abs(n - 1.0) > 1e-6:
            raise EncodeError(f"quaternion norm {n} not within 1e-6 of 1")

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "client_timestamp": self.client_timestamp,
            "pos": self.position.tolist(),
            "quat": self.orientation.tolist(),
            "gripper": self.gripper,
            "engaged": self.engaged,
        }

    @staticmethod
    def from_dict(d: dict) -> "PoseCommand":
        return PoseCommand(
            seq=int(d["seq"]),
            client_timestamp=int(d["client_timestamp"]),
            position=np.asarray(d["pos"], dtype=float),
            orientation=np.asarray(d["quat"], dtype=float),
            gripper=bool(d["gripper"]),
            engaged=bool(d["engaged"]),
        )


@dataclass
class ObjectFrame:
    id: str
    position: np.ndarray
    quaternion: np.ndarray
    attached: bool


@dataclass
class StateFrame:
    tick: int
    server_timestamp: int  # milliseconds
    echoed_client_timestamp: int  # of last applied PoseCommand, 0 if none
    q: np.ndarray
    ee_position: np.ndarray
    ee_quaternion: np.ndarray
    objects: list[ObjectFrame]
    task_done: bool
    reward_to_date: float


@dataclass
class HapticEvent:
    tick: int
    kind: str  # attach | detach | clamp | table_contact
    object_id: str = ""


_HAPTIC_CODES = {"attach": 1, "detach": 2, "clamp": 3, "table_contact": 4}
_HAPTIC_KINDS = {v: k for k, v in _HAPTIC_CODES.items()}


@dataclass
class Message:
    type: MsgType
    # Exactly one of the typed bodies below is set, matching .type; JSON-body
    # message types carry their payload in .body.
    body: dict = field(default_factory=dict)
    pose: PoseCommand | None = None
    frame: StateFrame | None = None
    haptic: HapticEvent | None = None

    @staticmethod
    def hello(token: str, role: str = "operator") -> "Message":
        return Message(MsgType.HELLO, body={"token": token, "role": role})

    @staticmethod
    def join(user: str, task: str) -> "Message":
        return Message(MsgType.JOIN, body={"type": "join", "user": user, "task": task})

    @staticmethod
    def session(session_id: str, endpoint: str, token: str) -> "Message":
        return Message(
            MsgType.SESSION,
            body={"type": "session", "session_id": session_id, "endpoint": endpoint, "token": token},
        )

    @staticmethod
    def pose_cmd(cmd: PoseCommand) -> "Message":
        return Message(MsgType.POSE_CMD, pose=cmd)

    @staticmethod
    def state_frame(frame: StateFrame) -> "Message":
        return Message(MsgType.STATE_FRAME, frame=frame)

    @staticmethod
    def haptic(ev: HapticEvent) -> "Message":
        return Message(MsgType.HAPTIC_EVENT, haptic=ev)

    @staticmethod
    def reset() -> "Message":
        return Message(MsgType.RESET)

    @staticmethod
    def demo_done(path: str, success: bool, completion_time: float, ticks: int) -> "Message":
        return Message(
            MsgType.DEMO_DONE,
            body={"path": path, "success": success, "completion_time": completion_time, "ticks": ticks},
        )

    @staticmethod
    def heartbeat() -> "Message":
        return Message(MsgType.HEARTBEAT)

    @staticmethod
    def error(code: str, message: str) -> "Message":
        return Message(MsgType.ERROR, body={"code": code, "message": message})


_JSON_TYPES = {MsgType.HELLO, MsgType.JOIN, MsgType.SESSION, MsgType.DEMO_DONE, MsgType.ERROR}
_EMPTY_TYPES = {MsgType.RESET, MsgType.HEARTBEAT}


def _encode_pose(cmd: PoseCommand) -> bytes:
    return struct.pack(
        ">QQ3d4dBB",
        cmd.seq,
        cmd.client_timestamp,
        *cmd.position,
        *cmd.orientation,
        1 if cmd.gripper else 0,
        1 if cmd.engaged else 0,
    )


def _decode_pose(payload: bytes) -> PoseCommand:
    if len(payload) != 74:
        raise DecodeError(f"POSE_CMD payload must be 74 bytes, got {len(payload)}")
    vals = struct.unpack(">QQ3d4dBB", payload)
    return PoseCommand(
        seq=vals[0],
        client_timestamp=vals[1],
        position=np.array(vals[2:5]),
        orientation=np.array(vals[5:9]),
        gripper=bool(vals[9]),
        engaged=bool(vals[10]),
    )


def _encode_frame(f: StateFrame) -> bytes:
    parts = [struct.pack(">QQqB", f.tick, f.server_timestamp, f.echoed_client_timestamp, len(f.q))]
    parts.append(struct.pack(f">{len(f.q)}d", *f.q))
    parts.append(struct.pack(">3d4d", *f.ee_position, *f.ee_quaternion))
    parts.append(struct.pack(">B", len(f.objects)))
    for o in f.objects:
        oid = o.id.encode()
        if len(oid) > 255:
            raise EncodeError("object id too long")
        parts.append(struct.pack(">B", len(oid)))
        parts.append(oid)
        parts.append(struct.pack(">3d4dB", *o.position, *o.quaternion, 1 if o.attached else 0))
    parts.append(struct.pack(">Bd", 1 if f.task_done else 0, f.reward_to_date))
    return b"".join(parts)


def _decode_frame(payload: bytes) -> StateFrame:
    try:
        off = 0
        tick, ts, echoed, nq = struct.unpack_from(">QQqB", payload, off)
        off += 25
        q = np.array(struct.unpack_from(f">{nq}d", payload, off))
        off += 8 * nq
        vals = struct.unpack_from(">3d4d", payload, off)
        off += 56
        (nobj,) = struct.unpack_from(">B", payload, off)
        off += 1
        objects = []
        for _ in range(nobj):
            (idlen,) = struct.unpack_from(">B", payload, off)
            off += 1
            oid = payload[off : off + idlen].decode()
            if len(payload[off : off + idlen]) != idlen:
                raise DecodeError("truncated object id")
            off += idlen
            ov = struct.unpack_from(">3d4dB", payload, off)
            off += 57
            objects.append(ObjectFrame(oid, np.array(ov[0:3]), np.array(ov[3:7]), bool(ov[7])))
        done, reward = struct.unpack_from(">Bd", payload, off)
        off += 9
        if off != len(payload):
            raise DecodeError("trailing bytes in STATE_FRAME")
        return StateFrame(tick, ts, echoed, q, np.array(vals[0:3]), np.array(vals[3:7]), objects, bool(done), reward)
    except struct.error as e:
        raise DecodeError(f"malformed STATE_FRAME: {e}") from e


def _encode_haptic(ev: HapticEvent) -> bytes:
    if ev.kind not in _HAPTIC_CODES:
        raise EncodeError(f"unknown haptic kind {ev.kind!r}")
    oid = ev.object_id.encode()
    return struct.pack(">QBB", ev.tick, _HAPTIC_CODES[ev.kind], len(oid)) + oid


def _decode_haptic(payload: bytes) -> HapticEvent:
    try:
        tick, code, idlen = struct.unpack_from(">QBB", payload, 0)
    except struct.error as e:
        raise DecodeError(f"malformed HAPTIC_EVENT: {e}") from e
    if code not in _HAPTIC_KINDS:
        raise DecodeError(f"unknown haptic code {code}")
    oid = payload[10 : 10 + idlen]
    if len(oid) != idlen or len(payload) != 10 + idlen:
        raise DecodeError("malformed HAPTIC_EVENT length")
    return HapticEvent(tick, _HAPTIC_KINDS[code], oid.decode())


def encode(msg: Message) -> bytes:
    """Frame a message as length | type | payload."""
    t = msg.type
    if t in _JSON_TYPES:
        payload = json.dumps(msg.body, sort_keys=True, separators=(",", ":")).encode()
    elif t in _EMPTY_TYPES:
        payload = b""
    elif t == MsgType.POSE_CMD:
        payload = _encode_pose(msg.pose)
    elif t == MsgType.STATE_FRAME:
        payload = _encode_frame(msg.frame)
    elif t == MsgType.HAPTIC_EVENT:
        payload = _encode_haptic(msg.haptic)
    else:
        raise EncodeError(f"unknown message type {t}")
    if len(payload) > MAX_PAYLOAD:
        raise EncodeError(f"payload {len(payload)} exceeds {MAX_PAYLOAD}")
    return struct.pack(">IB", len(payload) + 1, int(t)) + payload


def decode(buf: bytes) -> Message:
    """Decode exactly one frame; rejects truncation, trailing bytes, unknown types."""
    msg, used = decode_prefix(buf)
    if used != len(buf):
        raise DecodeError(f"{len(buf) - used} trailing bytes after frame")
    return msg


def decode_prefix(buf: bytes) -> tuple[Message, int]:
    """Decode one frame from the head of buf, returning (message, bytes used)."""
    if len(buf) < 5:
        raise DecodeError("frame shorter than header")
    (length,) = struct.unpack_from(">I", buf, 0)
    if length < 1 or length - 1 > MAX_PAYLOAD:
        raise DecodeError(f"bad frame length {length}")
    if len(buf) < 4 + length:
        raise DecodeError(f"declared length {length} exceeds available {len(buf) - 4}")
    type_byte = buf[4]
    try:
        t = MsgType(type_byte)
    except ValueError:
        raise DecodeError(f"unknown type code {type_byte}") from None
    payload = bytes(buf[5 : 4 + length])
    if t in _JSON_TYPES:
        try:
            body = json.loads(payload.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DecodeError(f"bad JSON body: {e}") from e
        if not isinstance(body, dict):
            raise DecodeError("JSON body must be an object")
        msg = Message(t, body=body)
    elif t in _EMPTY_TYPES:
        if payload:
            raise DecodeError(f"{t.name} payload must be empty")
        msg = Message(t)
    elif t == MsgType.POSE_CMD:
        msg = Message(t, pose=_decode_pose(payload))
    elif t == MsgType.STATE_FRAME:
        msg = Message(t, frame=_decode_frame(payload))
    else:
        msg = Message(t, haptic=_decode_haptic(payload))
    return msg, 4 + length


class StreamDecoder:
    """Incremental frame decoder for a raw byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf.extend(data)
        out = []
        while True:
            if len(self._buf) < 5:
                break
            (length,) = struct.unpack_from(">I", self._buf, 0)
            if length < 1 or length - 1 > MAX_PAYLOAD:
                raise DecodeError(f"bad frame length {length}")
            if len(self._buf) < 4 + length:
                break
            frame = bytes(self._buf[: 4 + length])
            del self._buf[: 4 + length]
            out.append(decode(frame))
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


class LatestWins:
    """Single-slot newest-command cell with stale-drop accounting.

    Producers offer() commands as they arrive; the control loop take()s the
    newest at each tick. Commands with seq at or below the highest seen are
    dropped and counted. Memory use is one command regardless of input rate.
    """

    def __init__(self):
        self._current: PoseCommand | None = None
        self._highest_seq = -1
        self.dropped = 0
        self.accepted = 0

    def offer(self, cmd: PoseCommand) -> bool:
        if cmd.seq <= self._highest_seq:
            self.dropped += 1
            return False
        self._highest_seq = cmd.seq
        self._current = cmd
        self.accepted += 1
        return True

    def take(self) -> PoseCommand | None:
        return self._current
