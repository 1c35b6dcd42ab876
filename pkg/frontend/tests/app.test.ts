import { describe, expect, it } from "vitest";

import { AnnotationApp, Api, Renderer, Scene, THETA_STEP, DIST_STEP } from "../src/app.js";
import {
  FrameData,
  NudgeResult,
  SessionSummary,
} from "../src/types.js";

const SESSION: SessionSummary = {
  cameras: [
    { id: "close0", role: "close", image_size: [1280, 720], n_frames: 40, calibrated: true, n_correspondences: 0 },
    { id: "long", role: "long", image_size: [1280, 720], n_frames: 0, calibrated: true, n_correspondences: 0 },
  ],
  joints: ["C7", "LSHO"],
  track_len: 40,
  n_labels: 0,
  nudge: {
    theta_e: 1.57,
    theta_a: 0,
    base_position: [0, 60, 0],
    d_theta_e: 0,
    d_theta_a: 0,
    d_d: 0,
    placement_axis: "+Y",
  },
  revision: 0,
  undo_log_len: 0,
};

class FakeApi implements Api {
  corrCount = 0;
  nudgeCalls: [number, number, number][] = [];
  labels = 0;
  inFlight = 0;
  maxInFlight = 0;
  delayMs = 0;

  private async slot<T>(value: T): Promise<T> {
    this.inFlight += 1;
    this.maxInFlight = Math.max(this.maxInFlight, this.inFlight);
    if (this.delayMs) await new Promise((r) => setTimeout(r, this.delayMs));
    this.inFlight -= 1;
    return value;
  }

  async session(): Promise<SessionSummary> {
    return structuredClone(SESSION);
  }
  async frame(camera: string, idx: number): Promise<FrameData> {
    return { camera, frame: idx, t_ms: idx * 33.0, detections: {}, label: null, image_url: null };
  }
  async addCorrespondence(camera: string) {
    this.corrCount += 1;
    return this.slot({ camera, count: this.corrCount, revision: ++rev });
  }
  async deleteCorrespondence(camera: string) {
    this.corrCount -= 1;
    return this.slot({ camera, count: this.corrCount, revision: ++rev });
  }
  async solvePnp(camera: string) {
    return this.slot({
      camera,
      pose: { rotation: [[1, 0, 0], [0, 1, 0], [0, 0, 1]], position: [0, 0, 0] },
      mean_residual_px: 0.123456789,
      n_correspondences: this.corrCount,
      revision: ++rev,
    });
  }
  async solveBa() {
    return { job_id: "job-1", poll: "/jobs/job-1" };
  }
  async job(id: string) {
    return { id, status: "done" as const, progress: { iteration: 1, cost: 1 }, result: {}, error: null };
  }
  async nudge(e: number, a: number, d: number): Promise<NudgeResult> {
    this.nudgeCalls.push([e, a, d]);
    return this.slot({
      nudge: { ...SESSION.nudge!, d_theta_e: e, d_theta_a: a, d_d: d },
      containment: { fraction: 0.5, n_inside: 1, n_keypoints: 2, n_frames: 1 },
      revision: ++rev,
    });
  }
  async reproject(camera: string, idx: number) {
    return { camera, frame: idx, joints: {} };
  }
  async addLabel(camera: string, frame: number) {
    this.labels += 1;
    return this.slot({ camera, frame, n_labels: this.labels, revision: ++rev });
  }
  async deleteLabel(camera: string, frame: number) {
    this.labels -= 1;
    return this.slot({ camera, frame, n_labels: this.labels, revision: ++rev });
  }
  async metrics() {
    return { reprojection: null, containment: null, revision: rev };
  }
}

let rev = 0;

class NullRenderer implements Renderer {
  scenes: Scene[] = [];
  render(scene: Scene): void {
    this.scenes.push(scene);
  }
}

async function makeApp() {
  const api = new FakeApi();
  const renderer = new NullRenderer();
  const app = new AnnotationApp(api, renderer);
  await app.load();
  return { api, renderer, app };
}

describe("correspondence picking", () => {
  it("posts zoom-aware sub-pixel coordinates and shows the running count", async () => {
    const { api, app } = await makeApp();
    app.transform = { zoom: 4, panX: 100, panY: 50 };
    app.selectMarker("C7");
    const ok = await app.clickAt(10, 18);
    // canvas (10, 18) at zoom 4 with pan (100, 50) is image (102.5, 54.5)
    expect(ok).toBe(true);
    expect(app.display.correspondenceCount).toBe(1);
    expect(api.corrCount).toBe(1);
  });

  it("rejects clicks outside image bounds client-side", async () => {
    const { api, app } = await makeApp();
    app.transform = { zoom: 1, panX: 0, panY: 0 };
    app.selectMarker("C7");
    const ok = await app.clickAt(1281, 10);
    expect(ok).toBe(false);
    expect(api.corrCount).toBe(0);
    expect(app.display.lastError).toContain("outside image bounds");
  });

  it("ignores clicks with no pending marker", async () => {
    const { api, app } = await makeApp();
    expect(await app.clickAt(10, 10)).toBe(false);
    expect(api.corrCount).toBe(0);
  });

  it("deleting updates the count immediately", async () => {
    const { app } = await makeApp();
    app.selectMarker("C7");
    await app.clickAt(100, 100);
    app.selectMarker("LSHO");
    await app.clickAt(120, 100);
    expect(app.display.correspondenceCount).toBe(2);
    await app.removeCorrespondence("C7");
    expect(app.display.correspondenceCount).toBe(1);
  });

  it("solve displays the residual verbatim and enables the overlay", async () => {
    const { app } = await makeApp();
    await app.solvePnp();
    expect(app.display.residualPx).toBe(0.123456789);
    expect(app.overlays.reprojected).toBe(true);
  });
});

describe("long-range nudging", () => {
  it("arrow keys adjust angles by the fixed step and display returned state", async () => {
    const { api, app } = await makeApp();
    expect(await app.pressKey("ArrowUp")).toBe(true);
    expect(api.nudgeCalls.at(-1)).toEqual([THETA_STEP, 0, 0]);
    await app.pressKey("ArrowRight");
    expect(api.nudgeCalls.at(-1)).toEqual([THETA_STEP, THETA_STEP, 0]);
    await app.pressKey("-");
    expect(api.nudgeCalls.at(-1)).toEqual([THETA_STEP, THETA_STEP, -DIST_STEP]);
    expect(app.display.nudge?.d_d).toBe(-DIST_STEP);
    expect(app.display.containment?.fraction).toBe(0.5);
  });

  it("unknown keys are not handled", async () => {
    const { app } = await makeApp();
    expect(await app.pressKey("q")).toBe(false);
  });

  it("bracket keys step frames within bounds", async () => {
    const { app } = await makeApp();
    await app.pressKey("[");
    expect(app.frameIdx).toBe(0);
    await app.pressKey("]");
    expect(app.frameIdx).toBe(1);
  });
});

describe("box labeling", () => {
  it("drag posts an ordered rect and updates the counter", async () => {
    const { api, app } = await makeApp();
    app.transform = { zoom: 2, panX: 0, panY: 0 };
    app.beginDrag(100, 120);
    app.moveDrag(40, 60);
    const ok = await app.endDrag(40, 60);
    expect(ok).toBe(true);
    expect(api.labels).toBe(1);
    expect(app.display.nLabels).toBe(1);
  });

  it("rejects zero-area rectangles client-side", async () => {
    const { api, app } = await makeApp();
    app.beginDrag(100, 120);
    const ok = await app.endDrag(100, 200); // zero width
    expect(ok).toBe(false);
    expect(api.labels).toBe(0);
    expect(app.display.lastError).toContain("degenerate");
  });
});

describe("mutation serialization", () => {
  it("keeps at most one mutation in flight", async () => {
    const { api, app } = await makeApp();
    api.delayMs = 5;
    app.selectMarker("C7");
    await Promise.all([
      app.pressKey("ArrowUp"),
      app.pressKey("ArrowDown"),
      app.clickAt(10, 10),
      app.pressKey("+"),
      app.clickAt(12, 10),
    ]);
    expect(api.maxInFlight).toBe(1);
    expect(app.maxObservedInFlight).toBe(1);
  });
});

describe("view state", () => {
  it("clamps frame index to stream bounds", async () => {
    const { app } = await makeApp();
    await app.showFrame(500);
    expect(app.frameIdx).toBe(39);
    await app.showFrame(-3);
    expect(app.frameIdx).toBe(0);
  });

  it("renders scenes through the renderer only", async () => {
    const { renderer, app } = await makeApp();
    const n = renderer.scenes.length;
    app.redraw();
    expect(renderer.scenes.length).toBe(n + 1);
    expect(renderer.scenes.at(-1)!.imageSize).toEqual([1280, 720]);
  });
});
