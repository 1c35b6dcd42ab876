// Wire types mirroring the annotation service responses. Numbers are kept
// exactly as the service sent them; the UI never derives new quantities.

export interface CameraSummary {
  id: string;
  role: string;
  image_size: [number, number];
  n_frames: number;
  calibrated: boolean;
  n_correspondences: number;
}

export interface NudgeStateWire {
  theta_e: number;
  theta_a: number;
  base_position: number[];
  d_theta_e: number;
  d_theta_a: number;
  d_d: number;
  placement_axis: string;
}

export interface SessionSummary {
  cameras: CameraSummary[];
  joints: string[];
  track_len: number;
  n_labels: number;
  nudge: NudgeStateWire | null;
  revision: number;
  undo_log_len: number;
}

export interface FrameData {
  camera: string;
  frame: number;
  t_ms: number;
  detections: Record<string, [number, number, number]>;
  label: [number, number, number, number] | null;
  image_url: string | null;
}

export interface PoseWire {
  rotation: number[][];
  position: number[];
}

export interface PnpResult {
  camera: string;
  pose: PoseWire;
  mean_residual_px: number;
  n_correspondences: number;
  revision: number;
}

export interface Containment {
  fraction: number;
  n_inside: number;
  n_keypoints: number;
  n_frames: number;
}

export interface NudgeResult {
  nudge: NudgeStateWire;
  containment: Containment | null;
  revision: number;
}

export interface CorrespondenceResult {
  camera: string;
  count: number;
  revision: number;
}

export interface LabelResult {
  camera: string;
  frame: number;
  n_labels: number;
  revision: number;
}

export interface Reprojection {
  camera: string;
  frame: number;
  joints: Record<string, [number, number]>;
}

export interface JobStatus {
  id: string;
  status: "queued" | "running" | "done" | "error";
  progress: { iteration: number; cost: number | null };
  result: Record<string, unknown> | null;
  error: { kind: string; message: string } | null;
}

export interface ServiceErrorDetail {
  kind: string;
  message: string;
}

export class ServiceError extends Error {
  constructor(
    public status: number,
    public kind: string,
    message: string,
  ) {
    super(message);
  }
}
