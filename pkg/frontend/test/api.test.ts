import { describe, expect, it, vi } from "vitest";

import { ApiError, requestBody, ServiceClient } from "../src/api.js";
import { CaptureBuffer } from "../src/capture.js";
import { KeyInput } from "../src/keycodes.js";

function key(code: string): KeyInput {
  return { key: code, code };
}

// scripted stream: "hi " typed with an overlap between h and i
function scriptedBuffer(): CaptureBuffer {
  const buf = new CaptureBuffer();
  buf.keyDown(key("KeyH"), 100.4);
  buf.keyDown(key("KeyI"), 212.9);
  buf.keyUp(key("KeyH"), 241.5);
  buf.keyUp(key("KeyI"), 303.2);
  buf.keyDown(key("Space"), 450.0);
  buf.keyUp(key("Space"), 512.8);
  return buf;
}

const GOLDEN =
  '{"events":[' +
  '{"keycode":72,"press_ms":0,"release_ms":141},' +
  '{"keycode":73,"press_ms":112,"release_ms":203},' +
  '{"keycode":32,"press_ms":350,"release_ms":412}]}';

describe("requestBody", () => {
  it("serializes the scripted stream to the exact golden bytes", () => {
    expect(requestBody(scriptedBuffer().toEvents())).toBe(GOLDEN);
  });

  it("is byte-stable across repeated capture runs", () => {
    expect(requestBody(scriptedBuffer().toEvents())).toBe(
      requestBody(scriptedBuffer().toEvents()),
    );
  });

  it("pins field order regardless of input object key order", () => {
    const shuffled = [{ release_ms: 80, keycode: 65, press_ms: 0 }];
    expect(requestBody(shuffled)).toBe('{"events":[{"keycode":65,"press_ms":0,"release_ms":80}]}');
  });
});

function jsonResponse(status: number, body: unknown): Response {
  return {
    ok: status >= 200 && status < 300,
    status,
    statusText: String(status),
    json: async () => body,
  } as unknown as Response;
}

describe("ServiceClient", () => {
  const events = scriptedBuffer().toEvents();

  it("posts the canonical body to the enroll endpoint", async () => {
    const fetchFn = vi.fn(async () => jsonResponse(200, { subject_id: "kim", enrollments: 1 }));
    const client = new ServiceClient("http://svc:8321", fetchFn);
    const result = await client.enroll("kim", events);
    expect(result).toEqual({ subject_id: "kim", enrollments: 1 });
    expect(fetchFn).toHaveBeenCalledWith("http://svc:8321/subjects/kim/enroll", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: GOLDEN,
    });
  });

  it("escapes subject ids in the path", async () => {
    const fetchFn = vi.fn(async () => jsonResponse(200, { subject_id: "a b", enrollments: 1 }));
    await new ServiceClient("http://svc", fetchFn).enroll("a b", events);
    expect(fetchFn.mock.calls[0]![0]).toBe("http://svc/subjects/a%20b/enroll");
  });

  it("parses verify decisions", async () => {
    const decision = {
      subject_id: "kim",
      score: -0.21,
      threshold: -0.3,
      accept: true,
      scorer: "avg_distance",
      enrollments: 5,
    };
    const fetchFn = vi.fn(async () => jsonResponse(200, decision));
    const got = await new ServiceClient("http://svc", fetchFn).verify("kim", events);
    expect(got).toEqual(decision);
  });

  it("maps error statuses to ApiError with the service detail", async () => {
    const fetchFn = vi.fn(async () => jsonResponse(404, { detail: "unknown subject kim" }));
    const client = new ServiceClient("http://svc", fetchFn);
    const err = await client.verify("kim", events).catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(404);
    expect(err.detail).toBe("unknown subject kim");
  });

  it("stringifies structured validation details", async () => {
    const fetchFn = vi.fn(async () => jsonResponse(422, { detail: [{ loc: ["events"] }] }));
    const err = await new ServiceClient("http://svc", fetchFn)
      .enroll("kim", events)
      .catch((e) => e);
    expect(err.status).toBe(422);
    expect(err.detail).toBe('[{"loc":["events"]}]');
  });

  it("fetches health", async () => {
    const health = {
      status: "ok",
      model_sha256: "f".repeat(64),
      scorer: "avg_distance",
      threshold: 0,
      max_len: 50,
      subjects: 2,
    };
    const fetchFn = vi.fn(async () => jsonResponse(200, health));
    const got = await new ServiceClient("http://svc", fetchFn).health();
    expect(got).toEqual(health);
    expect(fetchFn).toHaveBeenCalledWith("http://svc/health");
  });
});
