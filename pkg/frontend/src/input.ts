/**
 * Operator input: mouse-clutch control mapped to 6-DoF pose commands.
 *
 * Hold the engage key (Space) to clutch in; mouse motion then steers the
 * tool target: cursor dx -> +x, cursor dy -> -y (screen up pushes away),
 * wheel -> z. G toggles the gripper. While disengaged the arm holds its
 * target and we emit 5 Hz keep-alive commands so the server still sees a
 * live operator.
 */

import { PoseCommand } from "./protocol.js";

export type ControlMode = "mouse" | "keyboard";

export interface BindingConfig {
  mode: ControlMode;
  engageKey: string; // KeyboardEvent.code
  gripperKey: string;
  sensitivity: number; // meters per pixel
  wheelSensitivity: number; // meters per wheel line
  keyStep: number; // meters per keypress in keyboard mode
}

export const DEFAULT_BINDING: BindingConfig = {
  mode: "mouse",
  engageKey: "Space",
  gripperKey: "KeyG",
  sensitivity: 0.001,
  wheelSensitivity: 0.01,
  keyStep: 0.01,
};

export const COMMAND_HZ = 60;
export const KEEPALIVE_HZ = 5;

export interface InputEventLike {
  kind: "mousemove" | "wheel" | "keydown" | "keyup";
  dx?: number; // pixels
  dy?: number;
  lines?: number; // wheel increments
  code?: string;
}

/** Pure command generator: feed input events + a clock, get PoseCommands. */
export class InputMapper {
  private engaged = false;
  private gripper = false;
  private position: [number, number, number] = [0, 0, 0];
  private seq = 0;
  private lastSent = -Infinity;
  private keysDown = new Set<string>();

  constructor(private binding: BindingConfig = DEFAULT_BINDING) {}

  get isEngaged(): boolean {
    return this.engaged;
  }

  get gripperClosed(): boolean {
    return this.gripper;
  }

  get controllerPosition(): [number, number, number] {
    return [...this.position];
  }

  feed(ev: InputEventLike): void {
    switch (ev.kind) {
      case "keydown":
        if (ev.code === this.binding.engageKey) {
          this.engaged = true;
        } else if (ev.code === this.binding.gripperKey && !this.keysDown.has(ev.code)) {
          this.gripper = !this.gripper; // edge-triggered toggle
        } else if (this.binding.mode === "keyboard" && this.engaged) {
          this.applyKeyStep(ev.code ?? "");
        }
        if (ev.code) this.keysDown.add(ev.code);
        break;
      case "keyup":
        if (ev.code === this.binding.engageKey) this.engaged = false;
        if (ev.code) this.keysDown.delete(ev.code);
        break;
      case "mousemove":
        if (this.binding.mode === "mouse" && this.engaged) {
          this.position[0] += (ev.dx ?? 0) * this.binding.sensitivity;
          this.position[1] += -(ev.dy ?? 0) * this.binding.sensitivity;
        }
        break;
      case "wheel":
        if (this.binding.mode === "mouse" && this.engaged) {
          this.position[2] += -(ev.lines ?? 0) * this.binding.wheelSensitivity;
        }
        break;
    }
  }

  private applyKeyStep(code: string): void {
    const s = this.binding.keyStep;
    const steps: Record<string, [number, number, number]> = {
      KeyW: [s, 0, 0],
      KeyS: [-s, 0, 0],
      KeyA: [0, s, 0],
      KeyD: [0, -s, 0],
      KeyR: [0, 0, s],
      KeyF: [0, 0, -s],
    };
    const d = steps[code];
    if (d) {
      this.position[0] += d[0];
      this.position[1] += d[1];
      this.position[2] += d[2];
    }
  }

  /**
   * Command due at `nowMs`, or null if the rate limiter says wait.
   * Engaged: COMMAND_HZ. Disengaged: KEEPALIVE_HZ with engaged=false.
   */
  commandDue(nowMs: number): PoseCommand | null {
    const period = this.engaged ? 1000 / COMMAND_HZ : 1000 / KEEPALIVE_HZ;
    if (nowMs - this.lastSent < period) return null;
    this.lastSent = nowMs;
    this.seq += 1;
    return {
      seq: this.seq,
      clientTimestamp: Math.round(nowMs),
      position: [...this.position],
      orientation: [1, 0, 0, 0],
      gripper: this.gripper,
      engaged: this.engaged,
    };
  }
}
