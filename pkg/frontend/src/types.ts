export type HallucType = "A" | "B" | "C";

export interface AnnotationView {
  hallucinated: boolean;
  type: HallucType | null;
  annotator: string | null;
  timestamp: string;
}

export interface SampleView {
  id: string;
  audio_ref: string;
  prompt: string;
  response: string;
  split: string;
  annotation: AnnotationView | null;
}

export interface NextResponse {
  sample: SampleView | null;
  done: boolean;
}

export interface Progress {
  total: number;
  labeled: number;
  hallucinated: number;
  per_type: Record<HallucType, number>;
  rate: number | null;
}

/** Body of PUT /api/samples/{id}/annotation. */
export interface AnnotationPayload {
  hallucinated: boolean;
  halluc_type: HallucType | null;
  annotator: string | null;
}
