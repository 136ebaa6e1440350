// Server-sent-events reader built on fetch. EventSource would do the framing
// for us but offers no way to resume from an explicit sequence on a URL we
// control per attempt, and it does not exist under jsdom; parsing the frames
// ourselves keeps the reconnect rule (`from_sequence` = last acked) explicit.

import { ApiError, type AgentEvent } from "./api.js";

export interface SseFrame {
  id: number | null;
  event: string | null;
  data: string | null;
}

// Incremental parser over the wire format the service emits:
//   id: <seq>\nevent: <kind>\ndata: <json>\n\n
// Comment lines (": heartbeat") keep idle connections alive and are dropped.
export class FrameParser {
  private buf = "";

  push(chunk: string): SseFrame[] {
    this.buf += chunk;
    const frames: SseFrame[] = [];
    let cut: number;
    while ((cut = this.buf.indexOf("\n\n")) !== -1) {
      const raw = this.buf.slice(0, cut);
      this.buf = this.buf.slice(cut + 2);
      const frame: SseFrame = { id: null, event: null, data: null };
      const dataLines: string[] = [];
      for (const line of raw.split("\n")) {
        if (line.startsWith(":")) continue;
        if (line.startsWith("id: ")) frame.id = Number(line.slice(4));
        else if (line.startsWith("event: ")) frame.event = line.slice(7);
        else if (line.startsWith("data: ")) dataLines.push(line.slice(6));
        else if (line === "data:") dataLines.push("");
      }
      if (dataLines.length > 0) frame.data = dataLines.join("\n");
      if (frame.id !== null || frame.event !== null || frame.data !== null) {
        frames.push(frame);
      }
    }
    return frames;
  }
}

export interface StreamOptions {
  fromSequence?: number;
  signal?: AbortSignal;
  onEvent: (ev: AgentEvent) => void;
}

export interface StreamResult {
  done: boolean; // session_done was seen
  lastSequence: number;
}

// One connection attempt: reads frames until the stream ends, the session
// finishes, or the signal aborts. Frames at or below fromSequence are journal
// replays and are skipped, so resuming never duplicates an acked event.
export async function readEventStream(url: string, opts: StreamOptions): Promise<StreamResult> {
  let last = opts.fromSequence ?? 0;
  let done = false;
  let res: Response;
  try {
    res = await fetch(url, {
      headers: { accept: "text/event-stream" },
      signal: opts.signal,
    });
  } catch (err) {
    if (opts.signal?.aborted) return { done, lastSequence: last };
    throw err;
  }
  if (!res.ok) {
    let code = "internal_error";
    let message = `http ${res.status}`;
    try {
      const body = await res.json();
      if (body?.error?.code) {
        code = body.error.code;
        message = String(body.error.message ?? message);
      }
    } catch {
      // keep defaults
    }
    throw new ApiError(res.status, code, message);
  }
  const reader = res.body!.getReader();
  const decoder = new TextDecoder();
  const parser = new FrameParser();
  try {
    while (!done) {
      const { value, done: eof } = await reader.read();
      if (eof) break;
      for (const frame of parser.push(decoder.decode(value, { stream: true }))) {
        if (frame.data === null) continue; // heartbeat
        const ev = JSON.parse(frame.data) as AgentEvent;
        if (ev.sequence <= last) continue;
        last = ev.sequence;
        opts.onEvent(ev);
        if (ev.kind === "session_done") {
          done = true;
          break;
        }
      }
    }
  } catch (err) {
    if (!opts.signal?.aborted) throw err;
  } finally {
    try {
      await reader.cancel();
    } catch {
      // stream already closed
    }
  }
  return { done, lastSequence: last };
}

export interface FollowOptions extends StreamOptions {
  retryDelayMs?: number;
}

// Keeps a session view subscribed until session_done: if the connection drops
// mid-run, reconnects with from_sequence set to the last acked event.
export async function followSession(
  eventsUrl: (fromSequence: number) => string,
  opts: FollowOptions,
): Promise<StreamResult> {
  let last = opts.fromSequence ?? 0;
  const delay = opts.retryDelayMs ?? 250;
  for (;;) {
    const result = await readEventStream(eventsUrl(last), {
      fromSequence: last,
      signal: opts.signal,
      onEvent: opts.onEvent,
    });
    last = result.lastSequence;
    if (result.done || opts.signal?.aborted) return result;
    await new Promise((resolve) => setTimeout(resolve, delay));
    if (opts.signal?.aborted) return { done: false, lastSequence: last };
  }
}
