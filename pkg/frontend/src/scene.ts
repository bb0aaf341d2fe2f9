/**
 * Scene state and rendering: newest-frame-wins cell, connection stats, and
 * 2-D orthographic projections (top view x/y, side view x/z) onto canvases.
 */

import { HapticEvent, StateFrame } from "./protocol.js";

/** Keeps only the highest-tick frame; stale arrivals are counted and dropped. */
export class FrameCell {
  private frame: StateFrame | null = null;
  framesReceived = 0;
  staleDropped = 0;
  minDelayMs: number | null = null;

  offer(frame: StateFrame): boolean {
    this.framesReceived += 1;
    if (this.frame !== null && frame.tick <= this.frame.tick) {
      this.staleDropped += 1;
      return false;
    }
    if (frame.echoedClientTimestamp > 0) {
      const delay = frame.serverTimestamp - frame.echoedClientTimestamp;
      if (this.minDelayMs === null || delay < this.minDelayMs) this.minDelayMs = delay;
    }
    this.frame = frame;
    return true;
  }

  newest(): StateFrame | null {
    return this.frame;
  }
}

/** Coalesces haptic bursts into one indicator flash and a complete log. */
export class HapticIndicator {
  log: HapticEvent[] = [];
  activeUntil = 0;
  lastKind: string | null = null;

  constructor(private flashMs = 350, private maxLog = 200) {}

  offer(ev: HapticEvent, nowMs: number): void {
    this.log.push(ev);
    if (this.log.length > this.maxLog) this.log.shift();
    this.activeUntil = nowMs + this.flashMs;
    this.lastKind = ev.kind;
  }

  activeAt(nowMs: number): string | null {
    return nowMs < this.activeUntil ? this.lastKind : null;
  }
}

export interface ViewBox {
  // world-coordinate window of a view, meters
  hMin: number;
  hMax: number;
  vMin: number;
  vMax: number;
}

export const TOP_VIEW: ViewBox = { hMin: -0.2, hMax: 0.8, vMin: -0.5, vMax: 0.5 }; // x right, y up
export const SIDE_VIEW: ViewBox = { hMin: -0.2, hMax: 0.8, vMin: -0.05, vMax: 0.7 }; // x right, z up

export function worldToCanvas(
  h: number,
  v: number,
  box: ViewBox,
  width: number,
  height: number
): [number, number] {
  const px = ((h - box.hMin) / (box.hMax - box.hMin)) * width;
  const py = height - ((v - box.vMin) / (box.vMax - box.vMin)) * height;
  return [px, py];
}

const OBJECT_COLORS: Record<string, string> = {
  cube: "#e3554f",
  milk: "#f0f0e8",
  can: "#4f8fe3",
  round_nut: "#c9a227",
  square_nut: "#7d5bb8",
};

export function drawView(
  ctx: CanvasRenderingContext2D,
  frame: StateFrame,
  box: ViewBox,
  axes: "xy" | "xz",
  width: number,
  height: number
): void {
  const pick = (p: [number, number, number]): [number, number] =>
    axes === "xy" ? [p[0], p[1]] : [p[0], p[2]];
  const toPx = (p: [number, number, number]) => {
    const [h, v] = pick(p);
    return worldToCanvas(h, v, box, width, height);
  };

  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#10151c";
  ctx.fillRect(0, 0, width, height);

  if (axes === "xz") {
    // table plane
    const [, tableY] = worldToCanvas(0, 0, box, width, height);
    ctx.strokeStyle = "#3c4654";
    ctx.beginPath();
    ctx.moveTo(0, tableY);
    ctx.lineTo(width, tableY);
    ctx.stroke();
  }

  // stylized arm: base to tool
  const base = toPx([0, 0, 0]);
  const tool = toPx(frame.eePosition);
  ctx.strokeStyle = "#9fb4cc";
  ctx.lineWidth = 3;
  ctx.beginPath();
  ctx.moveTo(base[0], base[1]);
  ctx.lineTo(tool[0], tool[1]);
  ctx.stroke();
  ctx.lineWidth = 1;

  for (const obj of frame.objects) {
    const [px, py] = toPx(obj.position);
    ctx.fillStyle = OBJECT_COLORS[obj.id] ?? "#cccccc";
    ctx.beginPath();
    ctx.arc(px, py, 7, 0, Math.PI * 2);
    ctx.fill();
    if (obj.attached) {
      ctx.strokeStyle = "#8ef58a";
      ctx.beginPath();
      ctx.arc(px, py, 10, 0, Math.PI * 2);
      ctx.stroke();
    }
  }

  // tool marker on top of everything
  ctx.fillStyle = "#8ef58a";
  ctx.beginPath();
  ctx.arc(tool[0], tool[1], 4, 0, Math.PI * 2);
  ctx.fill();
}

export class FpsCounter {
  private stamps: number[] = [];

  tick(nowMs: number): number {
    this.stamps.push(nowMs);
    const cutoff = nowMs - 1000;
    while (this.stamps.length && this.stamps[0] < cutoff) this.stamps.shift();
    return this.stamps.length;
  }
}
