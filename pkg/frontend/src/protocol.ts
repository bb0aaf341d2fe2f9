/**
 * Wire protocol codec for the teleoperation channels.
 *
 * Frame layout: u32 big-endian length (type byte + payload) | u8 type | payload.
 * Numeric fields are big-endian, floats IEEE-754 binary64, flags one byte.
 * JOIN/SESSION/HELLO/DEMO_DONE/ERROR bodies are UTF-8 JSON inside the frame.
 * One frame per WebSocket binary message.
 */

export enum MsgType {
  HELLO = 1,
  JOIN = 2,
  SESSION = 3,
  POSE_CMD = 4,
  STATE_FRAME = 5,
  HAPTIC_EVENT = 6,
  RESET = 7,
  DEMO_DONE = 8,
  HEARTBEAT = 9,
  ERROR = 10,
}

export const MAX_PAYLOAD = 64 * 1024;

export interface PoseCommand {
  seq: number;
  clientTimestamp: number; // ms
  position: [number, number, number];
  orientation: [number, number, number, number]; // w x y z
  gripper: boolean;
  engaged: boolean;
}

export interface ObjectFrame {
  id: string;
  position: [number, number, number];
  quaternion: [number, number, number, number];
  attached: boolean;
}

export interface StateFrame {
  tick: number;
  serverTimestamp: number;
  echoedClientTimestamp: number;
  q: number[];
  eePosition: [number, number, number];
  eeQuaternion: [number, number, number, number];
  objects: ObjectFrame[];
  taskDone: boolean;
  rewardToDate: number;
}

export type HapticKind = "attach" | "detach" | "clamp" | "table_contact";

export interface HapticEvent {
  tick: number;
  kind: HapticKind;
  objectId: string;
}

export type Message =
  | { type: MsgType.HELLO; body: Record<string, unknown> }
  | { type: MsgType.JOIN; body: Record<string, unknown> }
  | { type: MsgType.SESSION; body: Record<string, unknown> }
  | { type: MsgType.POSE_CMD; pose: PoseCommand }
  | { type: MsgType.STATE_FRAME; frame: StateFrame }
  | { type: MsgType.HAPTIC_EVENT; haptic: HapticEvent }
  | { type: MsgType.RESET }
  | { type: MsgType.DEMO_DONE; body: Record<string, unknown> }
  | { type: MsgType.HEARTBEAT }
  | { type: MsgType.ERROR; body: Record<string, unknown> };

const HAPTIC_CODES: Record<HapticKind, number> = {
  attach: 1,
  detach: 2,
  clamp: 3,
  table_contact: 4,
};
const HAPTIC_KINDS: Record<number, HapticKind> = {
  1: "attach",
  2: "detach",
  3: "clamp",
  4: "table_contact",
};

export class DecodeError extends Error {}

class Writer {
  private buf: number[] = [];

  u8(v: number) {
    this.buf.push(v & 0xff);
  }

  u64(v: number) {
    // values stay far below 2^53 (ticks, ms timestamps)
    this.u32(Math.floor(v / 0x100000000));
    this.u32(v % 0x100000000);
  }

  u32(v: number) {
    this.buf.push((v >>> 24) & 0xff, (v >>> 16) & 0xff, (v >>> 8) & 0xff, v & 0xff);
  }

  f64(v: number) {
    const scratch = new DataView(new ArrayBuffer(8));
    scratch.setFloat64(0, v, false);
    for (let i = 0; i < 8; i++) this.buf.push(scratch.getUint8(i));
  }

  bytes(data: Uint8Array) {
    for (const b of data) this.buf.push(b);
  }

  done(): Uint8Array {
    return Uint8Array.from(this.buf);
  }
}

class Reader {
  private view: DataView;
  public offset = 0;

  constructor(private data: Uint8Array) {
    this.view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  }

  private need(n: number) {
    if (this.offset + n > this.data.length) {
      throw new DecodeError(`truncated payload at offset ${this.offset}`);
    }
  }

  u8(): number {
    this.need(1);
    return this.view.getUint8(this.offset++);
  }

  u64(): number {
    this.need(8);
    const v = this.view.getBigUint64(this.offset, false);
    this.offset += 8;
    if (v > BigInt(Number.MAX_SAFE_INTEGER)) throw new DecodeError("u64 exceeds 2^53");
    return Number(v);
  }

  i64(): number {
    this.need(8);
    const v = this.view.getBigInt64(this.offset, false);
    this.offset += 8;
    return Number(v);
  }

  f64(): number {
    this.need(8);
    const v = this.view.getFloat64(this.offset, false);
    this.offset += 8;
    return v;
  }

  str(n: number): string {
    this.need(n);
    const s = new TextDecoder().decode(this.data.subarray(this.offset, this.offset + n));
    this.offset += n;
    return s;
  }

  get remaining(): number {
    return this.data.length - this.offset;
  }
}

function frame(type: MsgType, payload: Uint8Array): Uint8Array {
  if (payload.length > MAX_PAYLOAD) throw new Error(`payload ${payload.length} exceeds limit`);
  const out = new Uint8Array(5 + payload.length);
  const view = new DataView(out.buffer);
  view.setUint32(0, payload.length + 1, false);
  out[4] = type;
  out.set(payload, 5);
  return out;
}

function jsonPayload(body: Record<string, unknown>): Uint8Array {
  // canonical: sorted keys, no spaces (matches the server encoder)
  const sorted = (obj: unknown): unknown => {
    if (Array.isArray(obj)) return obj.map(sorted);
    if (obj && typeof obj === "object") {
      const out: Record<string, unknown> = {};
      for (const k of Object.keys(obj).sort()) out[k] = sorted((obj as Record<string, unknown>)[k]);
      return out;
    }
    return obj;
  };
  return new TextEncoder().encode(JSON.stringify(sorted(body)));
}

export function encode(msg: Message): Uint8Array {
  switch (msg.type) {
    case MsgType.HELLO:
    case MsgType.JOIN:
    case MsgType.SESSION:
    case MsgType.DEMO_DONE:
    case MsgType.ERROR:
      return frame(msg.type, jsonPayload(msg.body));
    case MsgType.RESET:
    case MsgType.HEARTBEAT:
      return frame(msg.type, new Uint8Array(0));
    case MsgType.POSE_CMD: {
      const w = new Writer();
      const p = msg.pose;
      w.u64(p.seq);
      w.u64(p.clientTimestamp);
      for (const v of p.position) w.f64(v);
      for (const v of p.orientation) w.f64(v);
      w.u8(p.gripper ? 1 : 0);
      w.u8(p.engaged ? 1 : 0);
      return frame(msg.type, w.done());
    }
    case MsgType.STATE_FRAME: {
      const w = new Writer();
      const f = msg.frame;
      w.u64(f.tick);
      w.u64(f.serverTimestamp);
      w.u64(f.echoedClientTimestamp);
      w.u8(f.q.length);
      for (const v of f.q) w.f64(v);
      for (const v of f.eePosition) w.f64(v);
      for (const v of f.eeQuaternion) w.f64(v);
      w.u8(f.objects.length);
      for (const o of f.objects) {
        const id = new TextEncoder().encode(o.id);
        w.u8(id.length);
        w.bytes(id);
        for (const v of o.position) w.f64(v);
        for (const v of o.quaternion) w.f64(v);
        w.u8(o.attached ? 1 : 0);
      }
      w.u8(f.taskDone ? 1 : 0);
      w.f64(f.rewardToDate);
      return frame(msg.type, w.done());
    }
    case MsgType.HAPTIC_EVENT: {
      const w = new Writer();
      w.u64(msg.haptic.tick);
      w.u8(HAPTIC_CODES[msg.haptic.kind]);
      const id = new TextEncoder().encode(msg.haptic.objectId);
      w.u8(id.length);
      w.bytes(id);
      return frame(msg.type, w.done());
    }
  }
}

export function decode(data: Uint8Array): Message {
  if (data.length < 5) throw new DecodeError("frame shorter than header");
  const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  const length = view.getUint32(0, false);
  if (length < 1 || length - 1 > MAX_PAYLOAD) throw new DecodeError(`bad frame length ${length}`);
  if (data.length !== 4 + length) {
    throw new DecodeError(`declared length ${length} but have ${data.length - 4}`);
  }
  const type = data[4] as MsgType;
  const payload = data.subarray(5);
  switch (type) {
    case MsgType.HELLO:
    case MsgType.JOIN:
    case MsgType.SESSION:
    case MsgType.DEMO_DONE:
    case MsgType.ERROR: {
      let body: unknown;
      try {
        body = JSON.parse(new TextDecoder().decode(payload));
      } catch (e) {
        throw new DecodeError(`bad JSON body: ${e}`);
      }
      if (typeof body !== "object" || body === null || Array.isArray(body)) {
        throw new DecodeError("JSON body must be an object");
      }
      return { type, body: body as Record<string, unknown> } as Message;
    }
    case MsgType.RESET:
    case MsgType.HEARTBEAT:
      if (payload.length !== 0) throw new DecodeError("payload must be empty");
      return { type } as Message;
    case MsgType.POSE_CMD: {
      if (payload.length !== 74) throw new DecodeError("POSE_CMD payload must be 74 bytes");
      const r = new Reader(payload);
      return {
        type,
        pose: {
          seq: r.u64(),
          clientTimestamp: r.u64(),
          position: [r.f64(), r.f64(), r.f64()],
          orientation: [r.f64(), r.f64(), r.f64(), r.f64()],
          gripper: r.u8() !== 0,
          engaged: r.u8() !== 0,
        },
      };
    }
    case MsgType.STATE_FRAME: {
      const r = new Reader(payload);
      const tick = r.u64();
      const serverTimestamp = r.u64();
      const echoedClientTimestamp = r.i64();
      const nq = r.u8();
      const q: number[] = [];
      for (let i = 0; i < nq; i++) q.push(r.f64());
      const eePosition: [number, number, number] = [r.f64(), r.f64(), r.f64()];
      const eeQuaternion: [number, number, number, number] = [r.f64(), r.f64(), r.f64(), r.f64()];
      const nObj = r.u8();
      const objects: ObjectFrame[] = [];
      for (let i = 0; i < nObj; i++) {
        const idLen = r.u8();
        const id = r.str(idLen);
        objects.push({
          id,
          position: [r.f64(), r.f64(), r.f64()],
          quaternion: [r.f64(), r.f64(), r.f64(), r.f64()],
          attached: r.u8() !== 0,
        });
      }
      const taskDone = r.u8() !== 0;
      const rewardToDate = r.f64();
      if (r.remaining !== 0) throw new DecodeError("trailing bytes in STATE_FRAME");
      return {
        type,
        frame: {
          tick,
          serverTimestamp,
          echoedClientTimestamp,
          q,
          eePosition,
          eeQuaternion,
          objects,
          taskDone,
          rewardToDate,
        },
      };
    }
    case MsgType.HAPTIC_EVENT: {
      const r = new Reader(payload);
      const tick = r.u64();
      const code = r.u8();
      const kind = HAPTIC_KINDS[code];
      if (!kind) throw new DecodeError(`unknown haptic code ${code}`);
      const idLen = r.u8();
      const objectId = r.str(idLen);
      if (r.remaining !== 0) throw new DecodeError("trailing bytes in HAPTIC_EVENT");
      return { type, haptic: { tick, kind, objectId } };
    }
    default:
      throw new DecodeError(`unknown type code ${type}`);
  }
}

export function hello(token: string): Message {
  return { type: MsgType.HELLO, body: { token, role: "operator" } };
}

export function join(user: string, task: string): Message {
  return { type: MsgType.JOIN, body: { type: "join", user, task } };
}

export function heartbeat(): Message {
  return { type: MsgType.HEARTBEAT };
}

export function poseCmd(pose: PoseCommand): Message {
  return { type: MsgType.POSE_CMD, pose };
}
