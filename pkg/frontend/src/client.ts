// Thin typed client over the annotation service. Every method returns the
// service's JSON body untouched so callers can display values verbatim.

import {
  Containment,
  CorrespondenceResult,
  FrameData,
  JobStatus,
  LabelResult,
  NudgeResult,
  PnpResult,
  Reprojection,
  ServiceError,
  SessionSummary,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    const data = await resp.json();
    if (!resp.ok) {
      const detail = (data as { detail?: { kind?: string; message?: string } }).detail;
      throw new ServiceError(resp.status, detail?.kind ?? "HttpError", detail?.message ?? resp.statusText);
    }
    return data as T;
  }

  session(): Promise<SessionSummary> {
    return this.request("GET", "/session");
  }

  frame(camera: string, idx: number): Promise<FrameData> {
    return this.request("GET", `/frames/${camera}/${idx}`);
  }

  addCorrespondence(
    camera: string,
    markerId: string,
    u: number,
    v: number,
    frameIdx: number,
  ): Promise<CorrespondenceResult> {
    return this.request("POST", `/correspondences/${camera}`, {
      marker_id: markerId,
      u,
      v,
      frame_idx: frameIdx,
    });
  }

  deleteCorrespondence(camera: string, markerId: string): Promise<CorrespondenceResult> {
    return this.request("DELETE", `/correspondences/${camera}/${markerId}`);
  }

  solvePnp(camera: string): Promise<PnpResult> {
    return this.request("POST", `/solve/pnp/${camera}`);
  }

  solveBa(): Promise<{ job_id: string; poll: string }> {
    return this.request("POST", "/solve/ba", {});
  }

  job(jobId: string): Promise<JobStatus> {
    return this.request("GET", `/jobs/${jobId}`);
  }

  nudge(dThetaE: number, dThetaA: number, dD: number): Promise<NudgeResult> {
    return this.request("POST", "/longrange/nudge", {
      d_theta_e: dThetaE,
      d_theta_a: dThetaA,
      d_d: dD,
    });
  }

  reproject(camera: string, idx: number): Promise<Reprojection> {
    return this.request("GET", `/reproject/${camera}/${idx}`);
  }

  addLabel(camera: string, idx: number, rect: [number, number, number, number]): Promise<LabelResult> {
    return this.request("POST", `/labels/${camera}/${idx}`, { rect });
  }

  deleteLabel(camera: string, idx: number): Promise<LabelResult> {
    return this.request("DELETE", `/labels/${camera}/${idx}`);
  }

  metrics(): Promise<{ reprojection: unknown; containment: Containment | null; revision: number }> {
    return this.request("GET", "/metrics");
  }
}
