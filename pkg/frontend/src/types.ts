export type Prediction = "PD" | "HC";

export const CONFIDENCES = ["Unsure", "Leaning", "Confident", "Certain"] as const;
export type Confidence = (typeof CONFIDENCES)[number];

export const REASONS = ["VoiceQuality", "SpeechProsody", "LanguageUse", "TypicalSpeech", "Other"] as const;
export type Reason = (typeof REASONS)[number];

export interface Progress {
  done: number;
  total: number;
}

export interface NextSample {
  clip_id: string | null;
  audio_url: string | null;
  complete: boolean;
  progress: Progress;
}

export interface ResponsePayload {
  clip_id: string;
  prediction: Prediction;
  confidence: Confidence;
  reason: Reason;
  reason_text?: string;
  idempotency_key: string;
}

export interface Ack {
  status: string;
  clip_id: string;
  replayed: boolean;
  progress: Progress;
}
