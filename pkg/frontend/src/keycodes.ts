/** Numeric key codes for the wire format (0-255). */

// Fallback from KeyboardEvent.code to the legacy keyCode values, for
// browsers that no longer populate event.keyCode. Unlisted keys map to 0.
const CODE_TO_LEGACY: Record<string, number> = {
  Backspace: 8,
  Tab: 9,
  Enter: 13,
  NumpadEnter: 13,
  ShiftLeft: 16,
  ShiftRight: 16,
  ControlLeft: 17,
  ControlRight: 17,
  AltLeft: 18,
  AltRight: 18,
  Pause: 19,
  CapsLock: 20,
  Escape: 27,
  Space: 32,
  PageUp: 33,
  PageDown: 34,
  End: 35,
  Home: 36,
  ArrowLeft: 37,
  ArrowUp: 38,
  ArrowRight: 39,
  ArrowDown: 40,
  Insert: 45,
  Delete: 46,
  MetaLeft: 91,
  MetaRight: 92,
  ContextMenu: 93,
  NumpadMultiply: 106,
  NumpadAdd: 107,
  NumpadSubtract: 109,
  NumpadDecimal: 110,
  NumpadDivide: 111,
  Semicolon: 186,
  Equal: 187,
  Comma: 188,
  Minus: 189,
  Period: 190,
  Slash: 191,
  Backquote: 192,
  BracketLeft: 219,
  Backslash: 220,
  BracketRight: 221,
  Quote: 222,
};
for (let i = 0; i < 26; i++) {
  CODE_TO_LEGACY[`Key${String.fromCharCode(65 + i)}`] = 65 + i;
}
for (let d = 0; d <= 9; d++) {
  CODE_TO_LEGACY[`Digit${d}`] = 48 + d;
  CODE_TO_LEGACY[`Numpad${d}`] = 96 + d;
}
for (let f = 1; f <= 12; f++) {
  CODE_TO_LEGACY[`F${f}`] = 111 + f;
}

/** The subset of a KeyboardEvent the capture layer reads. */
export interface KeyInput {
  key: string;
  code: string;
  keyCode?: number;
  repeat?: boolean;
}

/** 0 marks a key unknown to the wire format; callers count those. */
export function keycodeFor(e: Pick<KeyInput, "code" | "keyCode">): number {
  if (typeof e.keyCode === "number" && e.keyCode >= 1 && e.keyCode <= 255) {
    return e.keyCode;
  }
  return CODE_TO_LEGACY[e.code] ?? 0;
}

const MODIFIERS = new Set([16, 17, 18, 20, 91, 92, 93]);

export function isModifier(keycode: number): boolean {
  return MODIFIERS.has(keycode);
}
