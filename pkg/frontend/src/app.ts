/**
 * Browser wiring: connect to one or two reslice services through the
 * bridge, steer the virtual probe with mouse/keyboard, paint live reslices
 * and the pose mini-map. All protocol/steering/painting logic lives in the
 * DOM-free modules; this file is only event plumbing.
 *
 * Controls (also shown on-screen):
 *   drag              translate in the image plane
 *   wheel             translate along the plane normal (elevation)
 *   shift + drag      tilt about the plane's x / y axes
 *   alt/ctrl + drag   spin about the plane normal
 *   arrows / PgUp/Dn  keyboard translate, q/e spin, w/s & a/d tilt
 */

import { minimapSegments, type MinimapView } from "./minimap.js";
import { ProbeState } from "./probe.js";
import { STATUS_SUPERSEDED, type HelloAck, type ResliceResponse } from "./protocol.js";
import { renderResponse } from "./render.js";
import { ResliceSession, type PlaneRequest, type Transport } from "./session.js";

const PLANE_WIDTH = 256;
const PLANE_HEIGHT = 256;
const PLANE_PITCH: [number, number] = [0.125, 0.125];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class WebSocketTransport implements Transport {
  constructor(private ws: WebSocket) {}

  send(data: Uint8Array): void {
    this.ws.send(data);
  }

  close(): void {
    this.ws.close();
  }
}

interface View {
  session: ResliceSession;
  canvas: HTMLCanvasElement;
  ctx: CanvasRenderingContext2D;
  frame: ImageData;
  label: string;
  latency: number;
}

class ExplorerApp {
  private probe = new ProbeState([0, 0, 10]);
  private views: View[] = [];
  private coverageTint = false;
  private status = el<HTMLDivElement>("status");
  private latencyOut = el<HTMLDivElement>("latency");
  private poseOut = el<HTMLDivElement>("pose");
  private minimap = el<HTMLCanvasElement>("minimap");
  private volumeInfo: HelloAck | null = null;

  async connect(): Promise<void> {
    const ports = [el<HTMLInputElement>("port").value.trim()];
    const second = el<HTMLInputElement>("port2").value.trim();
    if (second) ports.push(second);
    this.disposeViews();
    for (const [index, port] of ports.entries()) {
      try {
        await this.openView(port, index === 0 ? "A" : "B", index);
      } catch (err) {
        this.status.textContent = `connection to service port ${port} failed: ${(err as Error).message}`;
        this.disposeViews();
        return;
      }
    }
    const info = this.views[0].session.volumeInfo!;
    this.volumeInfo = info;
    this.status.textContent =
      `connected; volume ${info.dims.join("x")} @ ${info.voxelSize} mm, ` +
      `${info.sampleCount.toLocaleString()} samples`;
    this.probe.position = [
      info.origin[0] + 0.25 * info.dims[0] * info.voxelSize,
      info.origin[1],
      info.origin[2] + 0.5 * info.dims[2] * info.voxelSize,
    ];
    this.requestAll();
  }

  private openView(port: string, label: string, index: number): Promise<void> {
    return new Promise((resolve, reject) => {
      const ws = new WebSocket(`ws://${location.host}/bridge?port=${encodeURIComponent(port)}`);
      ws.binaryType = "arraybuffer";
      const canvas = el<HTMLCanvasElement>(index === 0 ? "view" : "view2");
      canvas.style.display = "block";
      canvas.width = PLANE_WIDTH;
      canvas.height = PLANE_HEIGHT;
      const ctx = canvas.getContext("2d")!;
      const session = new ResliceSession(new WebSocketTransport(ws));
      const view: View = {
        session,
        canvas,
        ctx,
        frame: ctx.createImageData(PLANE_WIDTH, PLANE_HEIGHT),
        label,
        latency: 0,
      };
      ws.onmessage = (event) => session.receive(new Uint8Array(event.data as ArrayBuffer));
      ws.onerror = () => reject(new Error("socket error (is the bridge/service running?)"));
      ws.onclose = () => {
        this.status.textContent = `service ${label} disconnected`;
      };
      session.onResponse = (resp) => this.handleResponse(view, resp);
      session.onError = (err) => {
        this.status.textContent = `service ${label}: ${err.message}`;
      };
      ws.onopen = async () => {
        try {
          await session.hello();
          this.views.push(view);
          resolve();
        } catch (err) {
          reject(err as Error);
        }
      };
    });
  }

  private disposeViews(): void {
    for (const view of this.views) view.session.close();
    this.views = [];
    el<HTMLCanvasElement>("view2").style.display = "none";
  }

  private handleResponse(view: View, resp: ResliceResponse): void {
    view.latency = resp.latencyMs;
    if (resp.status === STATUS_SUPERSEDED) {
      this.updateReadouts();
      return; // superseded responses update latency telemetry only
    }
    if (resp.status !== 0) {
      this.status.textContent = `service ${view.label}: ${resp.message}`;
      return;
    }
    const result = renderResponse(resp, view.frame, { coverageTint: this.coverageTint });
    if (!result.applied) {
      if (result.warning) console.warn(result.warning);
      return;
    }
    view.ctx.putImageData(view.frame, 0, 0);
    this.updateReadouts();
    this.drawMinimap();
  }

  private updateReadouts(): void {
    this.latencyOut.textContent = this.views
      .map((v) => `${v.label}: ${v.latency.toFixed(1)} ms`)
      .join("   ");
    const p = this.probe.poseTuple();
    this.poseOut.textContent =
      `t = (${p[0].toFixed(1)}, ${p[1].toFixed(1)}, ${p[2].toFixed(1)}) mm   ` +
      `q = (${p[3].toFixed(3)}, ${p[4].toFixed(3)}, ${p[5].toFixed(3)}, ${p[6].toFixed(3)})`;
  }

  private requestAll(): void {
    const plane: PlaneRequest = {
      pose: this.probe.poseTuple(),
      width: PLANE_WIDTH,
      height: PLANE_HEIGHT,
      pixelPitch: PLANE_PITCH,
      config: { ...this.probe.config },
    };
    for (const view of this.views) view.session.requestReslice(plane);
    this.updateReadouts();
    this.drawMinimap();
  }

  private drawMinimap(): void {
    if (!this.volumeInfo) return;
    const ctx = this.minimap.getContext("2d")!;
    ctx.clearRect(0, 0, this.minimap.width, this.minimap.height);
    const view: MinimapView = {
      yaw: Math.PI / 6,
      pitch: Math.PI / 7,
      scale: 3.2,
      centerPx: [this.minimap.width / 2, this.minimap.height / 2],
    };
    const segments = minimapSegments(
      this.volumeInfo, this.probe.position, this.probe.rotation,
      PLANE_WIDTH, PLANE_HEIGHT, PLANE_PITCH, view,
    );
    for (const seg of segments) {
      ctx.strokeStyle = seg.kind === "box" ? "#557" : seg.kind === "plane" ? "#fb4" : "#f44";
      ctx.lineWidth = seg.kind === "box" ? 1 : 2;
      ctx.beginPath();
      ctx.moveTo(seg.x0, seg.y0);
      ctx.lineTo(seg.x1, seg.y1);
      ctx.stroke();
    }
  }

  bindInputs(): void {
    el<HTMLButtonElement>("connect").addEventListener("click", () => void this.connect());
    el<HTMLInputElement>("tint").addEventListener("change", (e) => {
      this.coverageTint = (e.target as HTMLInputElement).checked;
      this.requestAll();
    });
    for (const key of ["interpRadius", "normalThresholdDeg", "inplaneThresholdDeg",
                       "kNormal", "kInplane", "kDist"] as const) {
      const input = el<HTMLInputElement>(key);
      input.value = String(this.probe.config[key]);
      input.addEventListener("change", () => {
        this.probe.config[key] = Number(input.value);
        this.requestAll();
      });
    }

    const canvas = el<HTMLCanvasElement>("view");
    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    canvas.addEventListener("pointerdown", (e) => {
      dragging = true;
      lastX = e.clientX;
      lastY = e.clientY;
      canvas.setPointerCapture(e.pointerId);
    });
    canvas.addEventListener("pointerup", () => (dragging = false));
    canvas.addEventListener("pointermove", (e) => {
      if (!dragging) return;
      const dx = e.clientX - lastX;
      const dy = e.clientY - lastY;
      lastX = e.clientX;
      lastY = e.clientY;
      if (e.shiftKey) {
        this.probe.rotate("y", dx * 0.3);
        this.probe.rotate("x", -dy * 0.3);
      } else if (e.altKey || e.ctrlKey) {
        this.probe.rotate("normal", dx * 0.3);
      } else {
        this.probe.translate("x", -dx * PLANE_PITCH[0]);
        this.probe.translate("y", -dy * PLANE_PITCH[1]);
      }
      this.requestAll();
    });
    canvas.addEventListener("wheel", (e) => {
      e.preventDefault();
      this.probe.translate("normal", (e.deltaY > 0 ? 1 : -1) * this.probe.translateStepMm);
      this.requestAll();
    });
    window.addEventListener("keydown", (e) => {
      const t = this.probe.translateStepMm;
      const r = this.probe.rotateStepDeg;
      const actions: Record<string, () => void> = {
        ArrowLeft: () => this.probe.translate("x", -t),
        ArrowRight: () => this.probe.translate("x", t),
        ArrowUp: () => this.probe.translate("y", -t),
        ArrowDown: () => this.probe.translate("y", t),
        PageUp: () => this.probe.translate("normal", t),
        PageDown: () => this.probe.translate("normal", -t),
        q: () => this.probe.rotate("normal", -r),
        e: () => this.probe.rotate("normal", r),
        w: () => this.probe.rotate("x", -r),
        s: () => this.probe.rotate("x", r),
        a: () => this.probe.rotate("y", -r),
        d: () => this.probe.rotate("y", r),
      };
      const action = actions[e.key];
      if (action) {
        action();
        this.requestAll();
        e.preventDefault();
      }
    });
  }
}

const app = new ExplorerApp();
app.bindInputs();
