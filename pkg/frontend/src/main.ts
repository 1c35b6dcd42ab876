// Browser bootstrap: wires DOM controls to the annotation controller.

import { AnnotationApp, MARKER_HINT } from "./app.js";
import { ApiClient } from "./client.js";
import { CanvasRenderer } from "./render.js";
import { zoomAround, panBy } from "./transform.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function fmt(x: number | null | undefined): string {
  return x === null || x === undefined ? "–" : String(x);
}

async function boot(): Promise<void> {
  const canvas = el<HTMLCanvasElement>("view");
  const client = new ApiClient("");
  const app = new AnnotationApp(client, new CanvasRenderer(canvas, () => app.redraw()));
  await app.load();

  const cameraSel = el<HTMLSelectElement>("camera");
  const markerSel = el<HTMLSelectElement>("marker");
  const frameLabel = el<HTMLSpanElement>("frame-label");
  const panel = el<HTMLPreElement>("panel");
  el<HTMLSpanElement>("hint").textContent = MARKER_HINT;

  for (const cam of app.session!.cameras) {
    const opt = document.createElement("option");
    opt.value = cam.id;
    opt.textContent = `${cam.id} (${cam.role})`;
    cameraSel.appendChild(opt);
  }
  markerSel.appendChild(new Option("— pick marker —", ""));
  for (const joint of app.session!.joints) {
    markerSel.appendChild(new Option(joint, joint));
  }

  const refreshPanel = () => {
    const d = app.display;
    frameLabel.textContent = `${app.camera} frame ${app.frameIdx}/${app.frameCount() - 1}`;
    panel.textContent = [
      `correspondences: ${fmt(d.correspondenceCount)}`,
      `solve residual px: ${fmt(d.residualPx)}`,
      `containment fraction: ${fmt(d.containment?.fraction)}`,
      `labeled frames: ${fmt(d.containment?.n_frames)}`,
      `labels stored: ${fmt(d.nLabels)}`,
      `nudge d_theta_e: ${fmt(d.nudge?.d_theta_e)}`,
      `nudge d_theta_a: ${fmt(d.nudge?.d_theta_a)}`,
      `nudge d_d: ${fmt(d.nudge?.d_d)}`,
      `revision: ${fmt(d.revision)}`,
      d.lastError ? `error: ${d.lastError}` : "",
    ].join("\n");
  };
  const after = (p: Promise<unknown>) => p.catch(() => {}).finally(refreshPanel);

  cameraSel.addEventListener("change", () => after(app.setCamera(cameraSel.value)));
  markerSel.addEventListener("change", () => app.selectMarker(markerSel.value || null));
  el<HTMLButtonElement>("solve").addEventListener("click", () => after(app.solvePnp()));
  el<HTMLButtonElement>("prev").addEventListener("click", () => after(app.prevFrame()));
  el<HTMLButtonElement>("next").addEventListener("click", () => after(app.nextFrame()));
  el<HTMLButtonElement>("del-label").addEventListener("click", () => after(app.removeLabel()));
  for (const name of ["detections", "reprojected", "labels"] as const) {
    el<HTMLInputElement>(`ov-${name}`).addEventListener("change", () => after(app.toggleOverlay(name)));
  }

  let dragging = false;
  let panning = false;
  let last: [number, number] = [0, 0];
  canvas.addEventListener("mousedown", (e) => {
    last = [e.offsetX, e.offsetY];
    if (e.shiftKey) {
      dragging = true;
      app.beginDrag(e.offsetX, e.offsetY);
    } else if (app.pendingMarker === null) {
      panning = true;
    }
  });
  canvas.addEventListener("mousemove", (e) => {
    if (dragging) {
      app.moveDrag(e.offsetX, e.offsetY);
    } else if (panning) {
      app.transform = panBy(app.transform, e.offsetX - last[0], e.offsetY - last[1]);
      last = [e.offsetX, e.offsetY];
      app.redraw();
    }
  });
  canvas.addEventListener("mouseup", (e) => {
    if (dragging) {
      dragging = false;
      after(app.endDrag(e.offsetX, e.offsetY));
    } else if (panning) {
      panning = false;
    } else {
      after(app.clickAt(e.offsetX, e.offsetY));
    }
  });
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    app.transform = zoomAround(app.transform, e.offsetX, e.offsetY, e.deltaY < 0 ? 1.25 : 0.8);
    app.redraw();
  });

  document.addEventListener("keydown", (e) => {
    if (e.target instanceof HTMLInputElement || e.target instanceof HTMLSelectElement) return;
    after(
      app.pressKey(e.key).then((handled) => {
        if (handled) e.preventDefault();
      }),
    );
  });

  // sliders are the secondary nudge affordance; keyboard is primary
  const slE = el<HTMLInputElement>("sl-e");
  const slA = el<HTMLInputElement>("sl-a");
  const slD = el<HTMLInputElement>("sl-d");
  const syncSliders = () => {
    const n = app.display.nudge;
    if (!n) return;
    slE.value = String(n.d_theta_e);
    slA.value = String(n.d_theta_a);
    slD.value = String(n.d_d);
  };
  const sliderNudge = () =>
    after(
      app
        .postNudge(Number(slE.value), Number(slA.value), Number(slD.value))
        .then(syncSliders),
    );
  slE.addEventListener("change", sliderNudge);
  slA.addEventListener("change", sliderNudge);
  slD.addEventListener("change", sliderNudge);
  syncSliders();

  refreshPanel();
}

boot().catch((e) => {
  document.body.textContent = `failed to start: ${e}`;
});
