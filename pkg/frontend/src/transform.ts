// Zoom/pan mapping between canvas (CSS pixel) coordinates and image pixels.
// Sub-pixel accuracy matters: clicked marker coordinates go to the solver.

export interface ViewTransform {
  zoom: number; // canvas pixels per image pixel, > 0
  panX: number; // image pixel at the canvas origin
  panY: number;
}

export const MIN_ZOOM = 0.25;
export const MAX_ZOOM = 8;

export function clampZoom(zoom: number): number {
  return Math.min(MAX_ZOOM, Math.max(MIN_ZOOM, zoom));
}

export function canvasToImage(t: ViewTransform, cx: number, cy: number): [number, number] {
  return [cx / t.zoom + t.panX, cy / t.zoom + t.panY];
}

export function imageToCanvas(t: ViewTransform, u: number, v: number): [number, number] {
  return [(u - t.panX) * t.zoom, (v - t.panY) * t.zoom];
}

/** Zoom about a fixed canvas point so the pixel under the cursor stays put. */
export function zoomAround(t: ViewTransform, cx: number, cy: number, factor: number): ViewTransform {
  const zoom = clampZoom(t.zoom * factor);
  const [u, v] = canvasToImage(t, cx, cy);
  return { zoom, panX: u - cx / zoom, panY: v - cy / zoom };
}

export function panBy(t: ViewTransform, dxCanvas: number, dyCanvas: number): ViewTransform {
  return { ...t, panX: t.panX - dxCanvas / t.zoom, panY: t.panY - dyCanvas / t.zoom };
}

export function insideImage(u: number, v: number, width: number, height: number): boolean {
  return u >= 0 && u <= width && v >= 0 && v <= height;
}
