// Replay server for contract tests: serves a recorded session over the same
// routes, status codes, and SSE framing as the real service. The recorded
// event journal is split at each human_feedback_applied event; a segment is
// released when the interaction that produced it arrives (requirements post,
// then one feedback post per remaining segment), so the UI drives the replay
// the same way it would drive a live run.

import { readFileSync } from "node:fs";
import { createServer, type IncomingMessage, type Server, type ServerResponse } from "node:http";
import { resolve } from "node:path";

interface FixtureEvent {
  session_id: string;
  sequence: number;
  kind: string;
  timestamp: number;
  payload: Record<string, unknown>;
}

interface Fixture {
  format_version: number;
  requirements: string;
  statuses: Record<string, string>;
  events: FixtureEvent[];
  report: Record<string, any>;
}

export interface LoggedRequest {
  method: string;
  path: string;
  status: number;
  body: any;
}

export interface FixtureServer {
  url: string;
  sessionId: string;
  fixture: Fixture;
  requests: LoggedRequest[];
  setCapacityExceeded(on: boolean): void;
  releasedCount(): number;
  close(): Promise<void>;
}

const DEFAULT_FIXTURE = resolve(process.cwd(), "tests/fixtures/session.json");
const STAGE_STATUS_KEYS = ["after_requirements", "after_refine", "after_approve"];

function sendJson(res: ServerResponse, status: number, payload: unknown): void {
  res.statusCode = status;
  res.setHeader("content-type", "application/json");
  res.setHeader("access-control-allow-origin", "*");
  res.end(JSON.stringify(payload));
}

function sendError(res: ServerResponse, status: number, code: string, message: string): void {
  sendJson(res, status, { error: { code, message } });
}

async function readBody(req: IncomingMessage): Promise<any> {
  const chunks: Buffer[] = [];
  for await (const chunk of req) chunks.push(chunk as Buffer);
  const raw = Buffer.concat(chunks).toString("utf8");
  if (!raw) return {};
  try {
    return JSON.parse(raw);
  } catch {
    return {};
  }
}

// Split the journal before each human_feedback_applied event: segment 0 is
// the first iteration, each later segment starts with the feedback event
// that unblocked it.
function splitSegments(events: FixtureEvent[]): FixtureEvent[][] {
  const boundaries = events
    .map((ev, i) => (ev.kind === "human_feedback_applied" ? i : -1))
    .filter((i) => i >= 0);
  const segments: FixtureEvent[][] = [];
  let start = 0;
  for (const b of boundaries) {
    segments.push(events.slice(start, b));
    start = b;
  }
  segments.push(events.slice(start));
  return segments;
}

export function startFixtureServer(fixturePath: string = DEFAULT_FIXTURE): Promise<FixtureServer> {
  const fixture: Fixture = JSON.parse(readFileSync(fixturePath, "utf8"));
  const segments = splitSegments(fixture.events);
  const sessionId = fixture.events[0].session_id;

  let created = false;
  let stage = 0; // number of released segments
  let capacityExceeded = false;
  const requests: LoggedRequest[] = [];

  const released = (): FixtureEvent[] => segments.slice(0, stage).flat();
  const finished = (): boolean => stage === segments.length;
  const status = (): string => {
    if (stage === 0) return created ? "created" : "unknown";
    return fixture.statuses[STAGE_STATUS_KEYS[stage - 1]] ?? "unknown";
  };

  // The real service grows the report as iterations finish; mirror that by
  // trimming the recorded final report to what the released journal covers.
  const currentReport = (): Record<string, any> => {
    const full = fixture.report;
    const events = released();
    const iterationsDone = events.filter((ev) => ev.kind === "iteration_done").length;
    const feedbackCount = events.filter((ev) => ev.kind === "human_feedback_applied").length;
    return {
      ...full,
      status: status(),
      verdict: finished() ? full.verdict : null,
      iterations: full.iterations.slice(0, iterationsDone),
      human_feedback: full.human_feedback.slice(0, feedbackCount),
    };
  };

  const streams = new Set<ServerResponse>();

  function handleEvents(res: ServerResponse, fromSequence: number): void {
    res.statusCode = 200;
    res.setHeader("content-type", "text/event-stream");
    res.setHeader("cache-control", "no-cache");
    res.setHeader("access-control-allow-origin", "*");
    streams.add(res);
    let sent = fromSequence;
    let closed = false;

    const pump = () => {
      if (closed) return;
      for (const ev of released()) {
        if (ev.sequence <= sent) continue;
        res.write(`id: ${ev.sequence}\nevent: ${ev.kind}\ndata: ${JSON.stringify(ev)}\n\n`);
        sent = ev.sequence;
        if (ev.kind === "session_done") {
          cleanup();
          res.end();
          return;
        }
      }
    };
    const poll = setInterval(pump, 10);
    const heartbeat = setInterval(() => {
      if (!closed) res.write(": heartbeat\n\n");
    }, 1000);
    const cleanup = () => {
      closed = true;
      clearInterval(poll);
      clearInterval(heartbeat);
      streams.delete(res);
    };
    res.on("close", cleanup);
    pump();
  }

  const server: Server = createServer(async (req, res) => {
    const url = new URL(req.url ?? "/", "http://localhost");
    const path = url.pathname;
    const method = req.method ?? "GET";
    const log = (statusCode: number, body: any = null) => requests.push({ method, path, status: statusCode, body });

    const m = path.match(/^\/api\/sessions\/([^/]+)(\/(requirements|feedback|events|report))?$/);

    if (method === "POST" && path === "/api/sessions") {
      const body = await readBody(req);
      if (capacityExceeded) {
        log(503, body);
        return sendError(res, 503, "capacity_exceeded", "at the limit of active sessions");
      }
      if (created) {
        log(503, body);
        return sendError(res, 503, "capacity_exceeded", "fixture server replays a single session");
      }
      created = true;
      log(201, body);
      return sendJson(res, 201, { session_id: sessionId, status: "created", created_at: Date.now() / 1000 });
    }

    if (method === "GET" && path === "/api/health") {
      log(200);
      return sendJson(res, 200, { status: "ok", sessions: created ? 1 : 0, active: created && !finished() ? 1 : 0, capacity: 1 });
    }

    if (!m) {
      log(404);
      return sendJson(res, 404, { detail: "Not Found" });
    }
    const [, id, , sub] = m;
    if (!created || id !== sessionId) {
      log(404);
      return sendError(res, 404, "unknown_session", id);
    }

    if (method === "POST" && sub === "requirements") {
      const body = await readBody(req);
      if (!String(body.requirements ?? "").trim()) {
        log(422, body);
        return sendError(res, 422, "validation_error", "requirements must be non-empty");
      }
      if (stage > 0) {
        log(409, body);
        return sendError(res, 409, "session_already_started", `session is ${status()}`);
      }
      stage = 1;
      log(202, body);
      return sendJson(res, 202, { status: "accepted", session_id: sessionId });
    }

    if (method === "POST" && sub === "feedback") {
      const body = await readBody(req);
      const text = String(body.text ?? "");
      const approve = Boolean(body.approve);
      if (!text.trim() && !approve) {
        log(422, body);
        return sendError(res, 422, "validation_error", "feedback requires text unless approve is set");
      }
      if (finished()) {
        log(409, body);
        return sendError(res, 409, "session_finished", `session already ${status()}`);
      }
      if (stage === 0) {
        log(409, body);
        return sendError(res, 409, "feedback_not_expected", "session has no running pipeline yet");
      }
      stage += 1;
      log(202, body);
      return sendJson(res, 202, { status: "accepted", session_status: status() });
    }

    if (method === "GET" && sub === "events") {
      const from = Number(url.searchParams.get("from_sequence") ?? "0");
      log(200);
      return handleEvents(res, Number.isFinite(from) ? from : 0);
    }

    if (method === "GET" && sub === "report") {
      log(200);
      return sendJson(res, 200, currentReport());
    }

    if (method === "GET" && !sub) {
      log(200);
      const iterationsDone = released().filter((ev) => ev.kind === "iteration_done").length;
      return sendJson(res, 200, {
        session_id: sessionId,
        status: status(),
        iterations_run: iterationsDone,
        max_iterations: fixture.report.max_iterations,
        pause_for_human: true,
        verdict: finished() ? fixture.report.verdict : null,
        failure_reason: null,
      });
    }

    log(405);
    return sendJson(res, 405, { detail: "Method Not Allowed" });
  });

  return new Promise((resolve) => {
    server.listen(0, "127.0.0.1", () => {
      const addr = server.address();
      const port = typeof addr === "object" && addr ? addr.port : 0;
      resolve({
        url: `http://127.0.0.1:${port}`,
        sessionId,
        fixture,
        requests,
        setCapacityExceeded(on: boolean) {
          capacityExceeded = on;
        },
        releasedCount: () => released().length,
        close: () =>
          new Promise<void>((done) => {
            for (const stream of streams) stream.destroy();
            server.close(() => done());
          }),
      });
    });
  });
}
