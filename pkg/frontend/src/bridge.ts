/**
 * Local bridge: serves the explorer's static assets over HTTP and bridges
 * browser WebSocket connections to the reslice service's TCP socket.
 *
 * The wire protocol itself is never touched; WebSocket binary payloads are
 * piped to TCP verbatim and TCP bytes come back as binary frames (the
 * client's MessageReader reframes them). One bridge can reach any local
 * service port (ws://host/bridge?port=NNNN), so side-by-side mode works
 * with two services and a single bridge. Targets are restricted to
 * loopback; this is a development tool, not an internet-facing proxy.
 *
 * Usage: node dist/bridge.js [--port 8080] [--host 127.0.0.1]
 */

import { createHash } from "node:crypto";
import { readFile } from "node:fs/promises";
import { createServer, type IncomingMessage, type ServerResponse } from "node:http";
import { connect, type Socket } from "node:net";
import { dirname, extname, join, normalize } from "node:path";
import { fileURLToPath } from "node:url";

import { encodeFrame, FrameParser, OP_BINARY, OP_CLOSE, OP_PING, OP_PONG } from "./wsframe.js";

const WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
const ROOT = join(dirname(fileURLToPath(import.meta.url)), "..");

const MIME: Record<string, string> = {
  ".html": "text/html; charset=utf-8",
  ".js": "text/javascript; charset=utf-8",
  ".css": "text/css; charset=utf-8",
  ".json": "application/json",
  ".ico": "image/x-icon",
};

function parseArgs(argv: string[]): { port: number; host: string } {
  let port = Number(process.env.DARE_BRIDGE_PORT ?? 8080);
  let host = "127.0.0.1";
  for (let i = 2; i < argv.length; i++) {
    if (argv[i] === "--port") port = Number(argv[++i]);
    else if (argv[i] === "--host") host = argv[++i];
  }
  return { port, host };
}

async function serveStatic(req: IncomingMessage, res: ServerResponse): Promise<void> {
  const url = new URL(req.url ?? "/", "http://localhost");
  let path = url.pathname === "/" ? "/index.html" : url.pathname;
  path = normalize(path).replace(/^(\.\.[/\\])+/, "");
  const file = join(ROOT, path);
  if (!file.startsWith(ROOT)) {
    res.writeHead(403).end("forbidden");
    return;
  }
  try {
    const body = await readFile(file);
    res.writeHead(200, { "content-type": MIME[extname(file)] ?? "application/octet-stream" });
    res.end(body);
  } catch {
    res.writeHead(404).end("not found");
  }
}

function acceptKey(key: string): string {
  return createHash("sha1").update(key + WS_GUID).digest("base64");
}

function handleUpgrade(req: IncomingMessage, socket: Socket): void {
  const url = new URL(req.url ?? "/", "http://localhost");
  if (url.pathname !== "/bridge") {
    socket.end("HTTP/1.1 404 Not Found\r\n\r\n");
    return;
  }
  const targetPort = Number(url.searchParams.get("port"));
  if (!Number.isInteger(targetPort) || targetPort <= 0 || targetPort > 65535) {
    socket.end("HTTP/1.1 400 Bad Request\r\n\r\nmissing or invalid ?port=");
    return;
  }
  const key = req.headers["sec-websocket-key"];
  if (typeof key !== "string") {
    socket.end("HTTP/1.1 400 Bad Request\r\n\r\n");
    return;
  }
  socket.write(
    "HTTP/1.1 101 Switching Protocols\r\n" +
      "Upgrade: websocket\r\n" +
      "Connection: Upgrade\r\n" +
      `Sec-WebSocket-Accept: ${acceptKey(key)}\r\n\r\n`,
  );
  socket.setNoDelay(true);

  const upstream = connect({ host: "127.0.0.1", port: targetPort });
  upstream.setNoDelay(true);
  const parser = new FrameParser();
  let closed = false;

  const shutdown = () => {
    if (closed) return;
    closed = true;
    try {
      socket.write(encodeFrame(OP_CLOSE, new Uint8Array(0)));
    } catch {
      /* already gone */
    }
    socket.destroy();
    upstream.destroy();
  };

  socket.on("data", (chunk: Buffer) => {
    let frames;
    try {
      frames = parser.feed(new Uint8Array(chunk));
    } catch {
      shutdown();
      return;
    }
    for (const frame of frames) {
      // FrameParser has already merged continuations into the first opcode
      if (frame.opcode === OP_BINARY) {
        upstream.write(frame.payload);
      } else if (frame.opcode === OP_PING) {
        socket.write(encodeFrame(OP_PONG, frame.payload));
      } else if (frame.opcode === OP_CLOSE) {
        shutdown();
      }
    }
  });
  upstream.on("data", (chunk: Buffer) => {
    socket.write(encodeFrame(OP_BINARY, new Uint8Array(chunk)));
  });
  socket.on("close", shutdown);
  socket.on("error", shutdown);
  upstream.on("close", shutdown);
  upstream.on("error", shutdown);
}

export function startBridge(port: number, host: string): ReturnType<typeof createServer> {
  const server = createServer((req, res) => {
    void serveStatic(req, res);
  });
  server.on("upgrade", (req, socket) => handleUpgrade(req, socket as Socket));
  server.listen(port, host, () => {
    const addr = server.address();
    const actual = typeof addr === "object" && addr !== null ? addr.port : port;
    console.log(`explorer bridge: http://${host}:${actual}/  (ws endpoint /bridge?port=<service port>)`);
  });
  return server;
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("bridge.js")) {
  const { port, host } = parseArgs(process.argv);
  startBridge(port, host);
}
