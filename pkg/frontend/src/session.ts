/**
 * Session lifecycle: JOIN through the coordinator, open the teleop channel
 * with the bearer token, keep 5 s heartbeats flowing, surface failures as
 * explicit states (no silent retry loops).
 */

import { decode, encode, heartbeat, hello, join, Message, MsgType } from "./protocol.js";

export type SessionStatus =
  | { state: "connecting" }
  | { state: "live"; sessionId: string; endpoint: string }
  | { state: "failed"; reason: string }
  | { state: "disconnected"; reason: string };

export interface SessionHandlers {
  onStatus: (s: SessionStatus) => void;
  onMessage: (m: Message) => void;
}

export class TeleopConnection {
  private coordWs: WebSocket | null = null;
  private teleopWs: WebSocket | null = null;
  private heartbeatTimer: number | null = null;
  private closedByUs = false;

  constructor(
    private coordinatorUrl: string,
    private user: string,
    private task: string,
    private handlers: SessionHandlers
  ) {}

  connect(): void {
    this.closedByUs = false;
    this.handlers.onStatus({ state: "connecting" });
    const ws = new WebSocket(this.coordinatorUrl);
    ws.binaryType = "arraybuffer";
    this.coordWs = ws;
    ws.onerror = () => this.fail(`coordinator unreachable at ${this.coordinatorUrl}`);
    ws.onopen = () => ws.send(encode(join(this.user, this.task)));
    ws.onmessage = (ev: MessageEvent) => {
      const msg = decode(new Uint8Array(ev.data as ArrayBuffer));
      if (msg.type === MsgType.SESSION) {
        const endpoint = String(msg.body["endpoint"]);
        const token = String(msg.body["token"]);
        const sessionId = String(msg.body["session_id"]);
        this.openTeleop(endpoint, token, sessionId);
      } else if (msg.type === MsgType.ERROR) {
        this.fail(`join rejected: ${msg.body["code"]}: ${msg.body["message"]}`);
      }
    };
    ws.onclose = () => {
      if (!this.closedByUs && this.teleopWs === null) {
        this.fail("coordinator connection closed before session was created");
      }
    };
  }

  private openTeleop(endpoint: string, token: string, sessionId: string): void {
    const ws = new WebSocket(`ws://${endpoint}`);
    ws.binaryType = "arraybuffer";
    this.teleopWs = ws;
    ws.onerror = () => this.fail(`teleop endpoint unreachable at ${endpoint}`);
    ws.onopen = () => {
      ws.send(encode(hello(token)));
      this.handlers.onStatus({ state: "live", sessionId, endpoint });
      this.heartbeatTimer = setInterval(() => {
        if (this.coordWs && this.coordWs.readyState === WebSocket.OPEN) {
          this.coordWs.send(encode(heartbeat()));
        }
      }, 5000) as unknown as number;
    };
    ws.onmessage = (ev: MessageEvent) => {
      const msg = decode(new Uint8Array(ev.data as ArrayBuffer));
      if (msg.type === MsgType.ERROR) {
        this.fail(`${msg.body["code"]}: ${msg.body["message"]}`);
        return;
      }
      this.handlers.onMessage(msg);
    };
    ws.onclose = () => {
      if (!this.closedByUs) {
        this.handlers.onStatus({ state: "disconnected", reason: "server closed the session" });
        this.stopHeartbeats();
      }
    };
  }

  send(msg: Message): void {
    if (this.teleopWs && this.teleopWs.readyState === WebSocket.OPEN) {
      this.teleopWs.send(encode(msg));
    }
  }

  private fail(reason: string): void {
    this.stopHeartbeats();
    this.handlers.onStatus({ state: "failed", reason });
  }

  private stopHeartbeats(): void {
    if (this.heartbeatTimer !== null) {
      clearInterval(this.heartbeatTimer);
      this.heartbeatTimer = null;
    }
  }

  close(): void {
    this.closedByUs = true;
    this.stopHeartbeats();
    this.teleopWs?.close();
    this.coordWs?.close();
  }
}
