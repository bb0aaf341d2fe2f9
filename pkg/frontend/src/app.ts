/**
 * Operator console: joins a session, renders the scene, streams commands.
 *
 * Query parameters: ?coordinator=host:port&user=name&task=lifting
 * Controls: hold Space to engage the clutch, move the mouse (wheel = height),
 * G toggles the gripper, R aborts the episode.
 */

import { DEFAULT_BINDING, InputMapper } from "./input.js";
import { decode, Message, MsgType, poseCmd } from "./protocol.js";
import {
  drawView,
  FpsCounter,
  FrameCell,
  HapticIndicator,
  SIDE_VIEW,
  TOP_VIEW,
} from "./scene.js";
import { TeleopConnection } from "./session.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function main(): void {
  const params = new URLSearchParams(window.location.search);
  const coordinator = params.get("coordinator") ?? "127.0.0.1:8750";
  const user = params.get("user") ?? "browser";
  const task = params.get("task") ?? "lifting";

  const topCanvas = el<HTMLCanvasElement>("top-view");
  const sideCanvas = el<HTMLCanvasElement>("side-view");
  const banner = el<HTMLDivElement>("banner");
  const statsLine = el<HTMLDivElement>("stats");
  const eventLog = el<HTMLUListElement>("event-log");
  const indicator = el<HTMLDivElement>("haptic-indicator");
  const rejoinBtn = el<HTMLButtonElement>("rejoin");

  const cell = new FrameCell();
  const haptics = new HapticIndicator();
  const mapper = new InputMapper(DEFAULT_BINDING);
  const fps = new FpsCounter();
  let demosDone = 0;
  let live = false;

  const connection = new TeleopConnection(`ws://${coordinator}`, user, task, {
    onStatus: (status) => {
      live = status.state === "live";
      rejoinBtn.style.display = status.state === "disconnected" || status.state === "failed" ? "inline" : "none";
      if (status.state === "live") {
        banner.textContent = `session ${status.sessionId.slice(0, 8)} @ ${status.endpoint} — task: ${task}`;
        banner.className = "ok";
      } else if (status.state === "failed") {
        banner.textContent = status.reason.includes("auth")
          ? "authentication failed"
          : `error: ${status.reason}`;
        banner.className = "error";
      } else if (status.state === "disconnected") {
        banner.textContent = `disconnected: ${status.reason}`;
        banner.className = "error";
      } else {
        banner.textContent = "connecting…";
        banner.className = "";
      }
    },
    onMessage: (msg: Message) => {
      if (msg.type === MsgType.STATE_FRAME) {
        cell.offer(msg.frame);
      } else if (msg.type === MsgType.HAPTIC_EVENT) {
        haptics.offer(msg.haptic, performance.now());
        if (navigator.vibrate) navigator.vibrate(40);
        const li = document.createElement("li");
        li.textContent = `tick ${msg.haptic.tick}: ${msg.haptic.kind} ${msg.haptic.objectId}`;
        eventLog.prepend(li);
        while (eventLog.children.length > 50) eventLog.lastChild?.remove();
      } else if (msg.type === MsgType.DEMO_DONE) {
        demosDone += 1;
        const li = document.createElement("li");
        li.textContent = `demonstration stored (${msg.body["completion_time"]}s) — scene reset`;
        li.className = "demo-done";
        eventLog.prepend(li);
      }
    },
  });
  connection.connect();
  rejoinBtn.onclick = () => connection.connect();

  // input capture: pointer lock keeps relative mouse deltas flowing
  topCanvas.addEventListener("click", () => topCanvas.requestPointerLock());
  window.addEventListener("mousemove", (ev) => {
    mapper.feed({ kind: "mousemove", dx: ev.movementX, dy: ev.movementY });
  });
  window.addEventListener(
    "wheel",
    (ev) => {
      mapper.feed({ kind: "wheel", lines: Math.sign(ev.deltaY) });
      ev.preventDefault();
    },
    { passive: false }
  );
  window.addEventListener("keydown", (ev) => {
    if (ev.code === "Space") ev.preventDefault();
    if (ev.code === "KeyR" && live) connection.send({ type: MsgType.RESET });
    mapper.feed({ kind: "keydown", code: ev.code });
  });
  window.addEventListener("keyup", (ev) => mapper.feed({ kind: "keyup", code: ev.code }));

  // command loop, decoupled from rendering
  setInterval(() => {
    if (!live) return;
    const cmd = mapper.commandDue(Date.now());
    if (cmd) connection.send(poseCmd(cmd));
  }, 1000 / 120);

  const topCtx = topCanvas.getContext("2d")!;
  const sideCtx = sideCanvas.getContext("2d")!;

  function render(now: number): void {
    const frame = cell.newest();
    if (frame) {
      drawView(topCtx, frame, TOP_VIEW, "xy", topCanvas.width, topCanvas.height);
      drawView(sideCtx, frame, SIDE_VIEW, "xz", sideCanvas.width, sideCanvas.height);
    }
    const flash = haptics.activeAt(now);
    indicator.textContent = flash ? flash : "idle";
    indicator.className = flash ? `flash-${flash}` : "";
    const rate = fps.tick(now);
    statsLine.textContent =
      `render ${rate} fps | frames ${cell.framesReceived} (stale ${cell.staleDropped}) | ` +
      `uplink ≥${cell.minDelayMs ?? "–"} ms | ` +
      `${mapper.isEngaged ? "ENGAGED" : "clutch open (hold Space)"} | ` +
      `gripper ${mapper.gripperClosed ? "closed" : "open"} | demos ${demosDone}` +
      (frame?.taskDone ? " | TASK DONE" : "");
    requestAnimationFrame(render);
  }
  requestAnimationFrame(render);
}

window.addEventListener("load", main);
