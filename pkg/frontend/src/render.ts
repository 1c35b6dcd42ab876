// Canvas renderer with device-pixel-ratio awareness: the backing store is
// scaled by DPR so sub-pixel marker positions survive on high-density
// displays; all overlay geometry is drawn in image coordinates through the
// current zoom/pan transform.

import { Scene, Renderer } from "./app.js";

export class CanvasRenderer implements Renderer {
  private image: HTMLImageElement | null = null;
  private imageUrl: string | null = null;

  constructor(
    private canvas: HTMLCanvasElement,
    private onImageLoaded: () => void = () => {},
  ) {}

  render(scene: Scene): void {
    const dpr = window.devicePixelRatio || 1;
    const cssW = this.canvas.clientWidth || 960;
    const cssH = this.canvas.clientHeight || 540;
    if (this.canvas.width !== Math.round(cssW * dpr) || this.canvas.height !== Math.round(cssH * dpr)) {
      this.canvas.width = Math.round(cssW * dpr);
      this.canvas.height = Math.round(cssH * dpr);
    }
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;

    ctx.setTransform(dpr, 0, 0, dpr, 0, 0);
    ctx.fillStyle = "#181818";
    ctx.fillRect(0, 0, cssW, cssH);

    const t = scene.transform;
    ctx.setTransform(dpr * t.zoom, 0, 0, dpr * t.zoom, -dpr * t.zoom * t.panX, -dpr * t.zoom * t.panY);

    if (scene.imageUrl) {
      if (this.imageUrl !== scene.imageUrl) {
        this.imageUrl = scene.imageUrl;
        this.image = new Image();
        this.image.onload = this.onImageLoaded;
        this.image.src = scene.imageUrl;
      }
      if (this.image && this.image.complete) {
        ctx.drawImage(this.image, 0, 0);
      }
    } else {
      ctx.strokeStyle = "#3a3a3a";
      ctx.lineWidth = 1 / t.zoom;
      ctx.strokeRect(0, 0, scene.imageSize[0], scene.imageSize[1]);
    }

    const px = 1 / t.zoom;

    ctx.fillStyle = "#ff5252";
    for (const [u, v] of Object.values(scene.detections).map((d) => [d[0], d[1]])) {
      ctx.fillRect(u! - 1.5 * px, v! - 1.5 * px, 3 * px, 3 * px);
    }

    if (scene.reprojected) {
      ctx.fillStyle = "#4caf50";
      for (const [u, v] of Object.values(scene.reprojected)) {
        ctx.beginPath();
        ctx.arc(u, v, 2 * px, 0, 2 * Math.PI);
        ctx.fill();
      }
    }

    ctx.strokeStyle = "#03a9f4";
    ctx.lineWidth = 1.5 * px;
    for (const [u, v] of Object.values(scene.clicked)) {
      ctx.beginPath();
      ctx.moveTo(u - 4 * px, v);
      ctx.lineTo(u + 4 * px, v);
      ctx.moveTo(u, v - 4 * px);
      ctx.lineTo(u, v + 4 * px);
      ctx.stroke();
    }

    if (scene.label) {
      const [u0, v0, u1, v1] = scene.label;
      ctx.strokeStyle = "#ffc107";
      ctx.lineWidth = 1.5 * px;
      ctx.strokeRect(u0, v0, u1 - u0, v1 - v0);
    }

    if (scene.dragRect) {
      const [u0, v0, u1, v1] = scene.dragRect;
      ctx.strokeStyle = "#ffffff";
      ctx.setLineDash([4 * px, 3 * px]);
      ctx.lineWidth = px;
      ctx.strokeRect(u0, v0, u1 - u0, v1 - v0);
      ctx.setLineDash([]);
    }
  }
}
