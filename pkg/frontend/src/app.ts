// Core annotation controller: holds view state, talks to the service, and
// hands scenes to a renderer. No DOM access and no geometry arithmetic here;
// every displayed number is copied verbatim from a service response. All
// mutations flow through a single promise queue so at most one POST is in
// flight, matching the service's single-writer contract.

import { ApiClient } from "./client.js";
import {
  canvasToImage,
  clampZoom,
  insideImage,
  ViewTransform,
} from "./transform.js";

/** Public service surface the app needs; tests substitute fakes. */
export type Api = Pick<
  ApiClient,
  | "session"
  | "frame"
  | "addCorrespondence"
  | "deleteCorrespondence"
  | "solvePnp"
  | "solveBa"
  | "job"
  | "nudge"
  | "reproject"
  | "addLabel"
  | "deleteLabel"
  | "metrics"
>;
import {
  Containment,
  FrameData,
  NudgeStateWire,
  Reprojection,
  ServiceError,
  SessionSummary,
} from "./types.js";

export const THETA_STEP = 0.002; // rad per key press
export const DIST_STEP = 0.25; // meters per key press

export const MARKER_HINT =
  "Best picked on a frame where the subject faces straight toward or away " +
  "from the camera with arms extended.";

export interface OverlayToggles {
  detections: boolean;
  reprojected: boolean;
  labels: boolean;
}

export interface Scene {
  camera: string;
  frameIdx: number;
  imageSize: [number, number];
  transform: ViewTransform;
  imageUrl: string | null;
  detections: Record<string, [number, number, number]>;
  reprojected: Record<string, [number, number]> | null;
  label: [number, number, number, number] | null;
  dragRect: [number, number, number, number] | null;
  clicked: Record<string, [number, number]>;
  overlays: OverlayToggles;
}

export interface Renderer {
  render(scene: Scene): void;
}

/** Numbers shown in the side panel, verbatim from service responses. */
export interface DisplayState {
  correspondenceCount: number | null;
  residualPx: number | null;
  containment: Containment | null;
  nudge: NudgeStateWire | null;
  nLabels: number | null;
  revision: number | null;
  lastError: string | null;
}

export class AnnotationApp {
  session: SessionSummary | null = null;
  camera = "";
  frameIdx = 0;
  transform: ViewTransform = { zoom: 1, panX: 0, panY: 0 };
  overlays: OverlayToggles = { detections: true, reprojected: false, labels: true };
  pendingMarker: string | null = null;
  display: DisplayState = {
    correspondenceCount: null,
    residualPx: null,
    containment: null,
    nudge: null,
    nLabels: null,
    revision: null,
    lastError: null,
  };

  private frame: FrameData | null = null;
  private reprojection: Reprojection | null = null;
  private clicked: Record<string, Record<string, [number, number]>> = {};
  private dragStart: [number, number] | null = null;
  private dragRect: [number, number, number, number] | null = null;
  private queue: Promise<unknown> = Promise.resolve();
  private inFlight = 0;
  maxObservedInFlight = 0;

  constructor(
    private client: Api,
    private renderer: Renderer,
  ) {}

  /** Serialize mutations: one request in flight at a time. */
  private enqueue<T>(op: () => Promise<T>): Promise<T> {
    const run = this.queue.then(async () => {
      this.inFlight += 1;
      this.maxObservedInFlight = Math.max(this.maxObservedInFlight, this.inFlight);
      try {
        return await op();
      } finally {
        this.inFlight -= 1;
      }
    });
    this.queue = run.catch(() => undefined);
    return run;
  }

  private fail(e: unknown): never {
    this.display.lastError =
      e instanceof ServiceError ? `${e.kind}: ${e.message}` : String(e);
    this.redraw();
    throw e;
  }

  async load(): Promise<void> {
    this.session = await this.client.session();
    this.display.nudge = this.session.nudge;
    this.display.nLabels = this.session.n_labels;
    this.display.revision = this.session.revision;
    if (!this.camera && this.session.cameras.length > 0) {
      this.camera = this.session.cameras[0]!.id;
    }
    await this.showFrame(this.frameIdx);
  }

  cameraInfo() {
    const cam = this.session?.cameras.find((c) => c.id === this.camera);
    if (!cam) throw new Error(`unknown camera ${this.camera}`);
    return cam;
  }

  frameCount(): number {
    if (!this.session) return 0;
    return Math.max(this.session.track_len, this.cameraInfo().n_frames);
  }

  async setCamera(camera: string): Promise<void> {
    this.camera = camera;
    await this.showFrame(Math.min(this.frameIdx, Math.max(0, this.frameCount() - 1)));
  }

  async showFrame(idx: number): Promise<void> {
    const n = this.frameCount();
    if (n > 0) idx = Math.min(Math.max(0, idx), n - 1);
    this.frameIdx = idx;
    this.frame = await this.client.frame(this.camera, idx);
    this.reprojection = null;
    if (this.overlays.reprojected && this.session && this.session.track_len > idx) {
      try {
        this.reprojection = await this.client.reproject(this.camera, idx);
      } catch {
        this.reprojection = null; // camera not calibrated yet
      }
    }
    this.redraw();
  }

  async nextFrame(): Promise<void> {
    await this.showFrame(this.frameIdx + 1);
  }

  async prevFrame(): Promise<void> {
    await this.showFrame(this.frameIdx - 1);
  }

  setZoom(zoom: number): void {
    this.transform = { ...this.transform, zoom: clampZoom(zoom) };
    this.redraw();
  }

  async toggleOverlay(name: keyof OverlayToggles): Promise<void> {
    this.overlays[name] = !this.overlays[name];
    await this.showFrame(this.frameIdx);
  }

  // -- correspondence picking ------------------------------------------------

  selectMarker(markerId: string | null): void {
    this.pendingMarker = markerId;
    this.redraw();
  }

  /** Canvas click with a pending marker posts a sub-pixel correspondence. */
  async clickAt(canvasX: number, canvasY: number): Promise<boolean> {
    if (this.pendingMarker === null) return false;
    const [u, v] = canvasToImage(this.transform, canvasX, canvasY);
    const [w, h] = this.cameraInfo().image_size;
    if (!insideImage(u, v, w, h)) {
      this.display.lastError = "click outside image bounds";
      this.redraw();
      return false;
    }
    const marker = this.pendingMarker;
    try {
      const resp = await this.enqueue(() =>
        this.client.addCorrespondence(this.camera, marker, u, v, this.frameIdx),
      );
      this.display.correspondenceCount = resp.count;
      this.display.revision = resp.revision;
      this.display.lastError = null;
      (this.clicked[this.camera] ??= {})[marker] = [u, v];
      this.redraw();
      return true;
    } catch (e) {
      this.fail(e);
    }
  }

  async removeCorrespondence(markerId: string): Promise<void> {
    try {
      const resp = await this.enqueue(() => this.client.deleteCorrespondence(this.camera, markerId));
      this.display.correspondenceCount = resp.count;
      this.display.revision = resp.revision;
      delete this.clicked[this.camera]?.[markerId];
      this.redraw();
    } catch (e) {
      this.fail(e);
    }
  }

  async solvePnp(): Promise<void> {
    try {
      const resp = await this.enqueue(() => this.client.solvePnp(this.camera));
      this.display.residualPx = resp.mean_residual_px;
      this.display.revision = resp.revision;
      this.display.lastError = null;
      this.overlays.reprojected = true;
      await this.showFrame(this.frameIdx);
    } catch (e) {
      this.fail(e);
    }
  }

  // -- long-range nudging ----------------------------------------------------

  private nudgeDeltas(): { e: number; a: number; d: number } {
    const n = this.display.nudge ?? this.session?.nudge ?? null;
    return n ? { e: n.d_theta_e, a: n.d_theta_a, d: n.d_d } : { e: 0, a: 0, d: 0 };
  }

  async postNudge(e: number, a: number, d: number): Promise<void> {
    try {
      const resp = await this.enqueue(() => this.client.nudge(e, a, d));
      this.display.nudge = resp.nudge;
      this.display.containment = resp.containment;
      this.display.revision = resp.revision;
      this.display.lastError = null;
      if (this.overlays.reprojected) {
        await this.showFrame(this.frameIdx);
      } else {
        this.redraw();
      }
    } catch (e2) {
      this.fail(e2);
    }
  }

  /** Keyboard-first controls: arrows nudge angles, +/- nudges distance,
   * [ and ] step frames. Returns true when the key was handled. */
  async pressKey(key: string): Promise<boolean> {
    const { e, a, d } = this.nudgeDeltas();
    switch (key) {
      case "ArrowUp":
        await this.postNudge(e + THETA_STEP, a, d);
        return true;
      case "ArrowDown":
        await this.postNudge(e - THETA_STEP, a, d);
        return true;
      case "ArrowLeft":
        await this.postNudge(e, a - THETA_STEP, d);
        return true;
      case "ArrowRight":
        await this.postNudge(e, a + THETA_STEP, d);
        return true;
      case "+":
      case "=":
        await this.postNudge(e, a, d + DIST_STEP);
        return true;
      case "-":
        await this.postNudge(e, a, d - DIST_STEP);
        return true;
      case "]":
        await this.nextFrame();
        return true;
      case "[":
        await this.prevFrame();
        return true;
      default:
        return false;
    }
  }

  // -- box labeling ----------------------------------------------------------

  beginDrag(canvasX: number, canvasY: number): void {
    this.dragStart = canvasToImage(this.transform, canvasX, canvasY);
    this.dragRect = null;
  }

  moveDrag(canvasX: number, canvasY: number): void {
    if (!this.dragStart) return;
    const [u, v] = canvasToImage(this.transform, canvasX, canvasY);
    const [u0, v0] = this.dragStart;
    this.dragRect = [Math.min(u0, u), Math.min(v0, v), Math.max(u0, u), Math.max(v0, v)];
    this.redraw();
  }

  /** Finish a drag; zero-area rectangles are rejected client-side. */
  async endDrag(canvasX: number, canvasY: number): Promise<boolean> {
    if (!this.dragStart) return false;
    this.moveDrag(canvasX, canvasY);
    const rect = this.dragRect;
    this.dragStart = null;
    this.dragRect = null;
    if (!rect || rect[0] >= rect[2] || rect[1] >= rect[3]) {
      this.display.lastError = "degenerate rectangle";
      this.redraw();
      return false;
    }
    try {
      const resp = await this.enqueue(() => this.client.addLabel(this.camera, this.frameIdx, rect));
      this.display.nLabels = resp.n_labels;
      this.display.revision = resp.revision;
      this.display.lastError = null;
      await this.showFrame(this.frameIdx);
      return true;
    } catch (e) {
      this.fail(e);
    }
  }

  async removeLabel(): Promise<void> {
    try {
      const resp = await this.enqueue(() => this.client.deleteLabel(this.camera, this.frameIdx));
      this.display.nLabels = resp.n_labels;
      this.display.revision = resp.revision;
      await this.showFrame(this.frameIdx);
    } catch (e) {
      this.fail(e);
    }
  }

  // -- rendering ------------------------------------------------------------

  redraw(): void {
    if (!this.session) return;
    this.renderer.render({
      camera: this.camera,
      frameIdx: this.frameIdx,
      imageSize: this.cameraInfo().image_size,
      transform: this.transform,
      imageUrl: this.frame?.image_url ?? null,
      detections: this.overlays.detections ? (this.frame?.detections ?? {}) : {},
      reprojected: this.overlays.reprojected ? (this.reprojection?.joints ?? null) : null,
      label: this.overlays.labels ? (this.frame?.label ?? null) : null,
      dragRect: this.dragRect,
      clicked: this.clicked[this.camera] ?? {},
      overlays: { ...this.overlays },
    });
  }
}
