import { isModifier, keycodeFor, KeyInput } from "./keycodes.js";

export interface KeyEvent {
  keycode: number;
  press_ms: number;
  release_ms: number;
}

export interface CaptureOptions {
  /** Capture Shift/Ctrl/Alt/CapsLock/Meta presses too (default true). */
  captureModifiers?: boolean;
  /** Monotonic millisecond clock; defaults to performance.now. */
  clock?: () => number;
}

/**
 * Pairs key-down and key-up timings into wire-format events.
 *
 * A key-down opens a pending entry for its keycode; the matching key-up
 * closes it. Auto-repeat key-downs (repeat flag, or a down while the same
 * code is already pending) are ignored, so a held key yields one event.
 * Key-ups with no pending down are dropped and counted. Times come from the
 * monotonic clock floored to integer milliseconds.
 */
export class CaptureBuffer {
  orphanKeyUps = 0;
  unknownKeys = 0;

  private pending = new Map<number, number>();
  private events: KeyEvent[] = [];
  private readonly captureModifiers: boolean;
  private readonly clock: () => number;

  constructor(options: CaptureOptions = {}) {
    this.captureModifiers = options.captureModifiers ?? true;
    this.clock = options.clock ?? (() => performance.now());
  }

  keyDown(input: KeyInput, at?: number): void {
    if (input.repeat) return;
    const keycode = keycodeFor(input);
    if (!this.captureModifiers && isModifier(keycode)) return;
    if (this.pending.has(keycode)) return; // auto-repeat without a repeat flag
    if (keycode === 0) this.unknownKeys++;
    this.pending.set(keycode, Math.floor(at ?? this.clock()));
  }

  keyUp(input: KeyInput, at?: number): void {
    const keycode = keycodeFor(input);
    if (!this.captureModifiers && isModifier(keycode)) return;
    const press = this.pending.get(keycode);
    if (press === undefined) {
      this.orphanKeyUps++;
      return;
    }
    this.pending.delete(keycode);
    const release = Math.floor(at ?? this.clock());
    this.events.push({ keycode, press_ms: press, release_ms: Math.max(press, release) });
  }

  /** Completed keystrokes; keys still held are not counted. */
  get count(): number {
    return this.events.length;
  }

  /** Events ordered by press time and rebased so the first press is 0. */
  toEvents(): KeyEvent[] {
    const ordered = [...this.events].sort(
      (a, b) => a.press_ms - b.press_ms || a.release_ms - b.release_ms || a.keycode - b.keycode,
    );
    if (ordered.length === 0) return ordered;
    const base = ordered[0]!.press_ms;
    return ordered.map((e) => ({
      keycode: e.keycode,
      press_ms: e.press_ms - base,
      release_ms: e.release_ms - base,
    }));
  }

  clear(): void {
    this.pending.clear();
    this.events = [];
    this.orphanKeyUps = 0;
    this.unknownKeys = 0;
  }
}
