import { ApiError, Decision, ServiceClient } from "./api.js";
import { CaptureBuffer } from "./capture.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const pad = el<HTMLTextAreaElement>("pad");
const subjectInput = el<HTMLInputElement>("subject");
const serviceInput = el<HTMLInputElement>("service");
const enrollBtn = el<HTMLButtonElement>("enroll");
const verifyBtn = el<HTMLButtonElement>("verify");
const resetBtn = el<HTMLButtonElement>("reset");
const counter = el<HTMLSpanElement>("counter");
const banner = el<HTMLDivElement>("banner");
const history = el<HTMLOListElement>("history");

const buffer = new CaptureBuffer();
let inFlight = false; // at most one submission at a time

// only timings and key codes leave the page; the typed text stays local
pad.addEventListener("keydown", (e) => {
  buffer.keyDown(e);
  renderCounter();
});
pad.addEventListener("keyup", (e) => {
  buffer.keyUp(e);
  renderCounter();
});

enrollBtn.addEventListener("click", () => submit("enroll"));
verifyBtn.addEventListener("click", () => submit("verify"));
resetBtn.addEventListener("click", () => {
  buffer.clear();
  pad.value = "";
  renderCounter();
  note("buffer cleared", "info");
});

function renderCounter(): void {
  const extras: string[] = [];
  if (buffer.unknownKeys > 0) extras.push(`${buffer.unknownKeys} unknown keys`);
  if (buffer.orphanKeyUps > 0) extras.push(`${buffer.orphanKeyUps} dropped key-ups`);
  counter.textContent =
    `${buffer.count} keystrokes` + (extras.length ? ` (${extras.join(", ")})` : "");
}

function note(text: string, kind: "info" | "ok" | "deny" | "error"): void {
  banner.textContent = text;
  banner.className = `banner ${kind}`;
}

function pushHistory(decision: Decision): void {
  const item = document.createElement("li");
  const verdict = decision.accept ? "accept" : "reject";
  item.textContent =
    `${verdict}: score ${decision.score.toFixed(4)} vs threshold ` +
    `${decision.threshold.toFixed(4)} (${decision.scorer}, E=${decision.enrollments})`;
  history.prepend(item);
}

async function submit(mode: "enroll" | "verify"): Promise<void> {
  if (inFlight) return;
  const subject = subjectInput.value.trim();
  if (!subject) {
    note("enter a subject id first", "error");
    return;
  }
  const events = buffer.toEvents();
  if (events.length < 2) {
    note("type at least 2 keystrokes first", "error");
    return;
  }

  const client = new ServiceClient(serviceInput.value.replace(/\/+$/, ""));
  inFlight = true;
  enrollBtn.disabled = verifyBtn.disabled = true;
  try {
    if (mode === "enroll") {
      const result = await client.enroll(subject, events);
      note(`enrolled session ${result.enrollments} for ${result.subject_id}`, "ok");
    } else {
      const decision = await client.verify(subject, events);
      pushHistory(decision);
      note(
        decision.accept
          ? `accepted (${decision.score.toFixed(4)} >= ${decision.threshold.toFixed(4)})`
          : `rejected (${decision.score.toFixed(4)} < ${decision.threshold.toFixed(4)})`,
        decision.accept ? "ok" : "deny",
      );
    }
    buffer.clear();
    pad.value = "";
  } catch (err) {
    // the buffer is preserved so the attempt can be retried as-is
    if (err instanceof ApiError) {
      note(`service error ${err.status}: ${err.detail}`, "error");
    } else {
      note(`service unreachable: ${String(err)}`, "error");
    }
  } finally {
    inFlight = false;
    enrollBtn.disabled = verifyBtn.disabled = false;
    renderCounter();
  }
}

renderCounter();
note("type in the box, enroll a few sessions, then verify", "info");
