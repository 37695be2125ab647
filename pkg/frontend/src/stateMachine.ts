/**
 * Per-sample rating flow as a pure state machine.
 *
 * Three views advance strictly forward: play & predict -> confidence ->
 * reason. Prediction unlocks only after playback has started, and there is
 * no path to a submittable state before all three items are chosen (with
 * nonempty text when the reason is Other).
 */

import type { Confidence, Prediction, Reason } from "./types";
import { CONFIDENCES, REASONS } from "./types";

export type View = "play" | "confidence" | "reason";

export interface SampleState {
  clipId: string;
  view: View;
  playbackStarted: boolean;
  prediction: Prediction | null;
  confidence: Confidence | null;
  reason: Reason | null;
  reasonText: string;
}

export class TransitionError extends Error {}

export function newSample(clipId: string): SampleState {
  return {
    clipId,
    view: "play",
    playbackStarted: false,
    prediction: null,
    confidence: null,
    reason: null,
    reasonText: "",
  };
}

export function startPlayback(state: SampleState): SampleState {
  if (state.view !== "play") return state; // replaying later views is harmless
  return { ...state, playbackStarted: true };
}

export function selectPrediction(state: SampleState, value: Prediction): SampleState {
  if (state.view !== "play") {
    throw new TransitionError(`prediction not selectable on view ${state.view}`);
  }
  if (!state.playbackStarted) {
    throw new TransitionError("listen to the sample before predicting");
  }
  if (value !== "PD" && value !== "HC") {
    throw new TransitionError(`illegal prediction ${value}`);
  }
  return { ...state, prediction: value, view: "confidence" };
}

export function selectConfidence(state: SampleState, value: Confidence): SampleState {
  if (state.view !== "confidence") {
    throw new TransitionError(`confidence not selectable on view ${state.view}`);
  }
  if (!CONFIDENCES.includes(value)) {
    throw new TransitionError(`illegal confidence ${value}`);
  }
  return { ...state, confidence: value, view: "reason" };
}

export function selectReason(state: SampleState, value: Reason): SampleState {
  if (state.view !== "reason") {
    throw new TransitionError(`reason not selectable on view ${state.view}`);
  }
  if (!REASONS.includes(value)) {
    throw new TransitionError(`illegal reason ${value}`);
  }
  // picking a non-Other reason clears any stale free text
  return { ...state, reason: value, reasonText: value === "Other" ? state.reasonText : "" };
}

export function setReasonText(state: SampleState, text: string): SampleState {
  if (state.view !== "reason" || state.reason !== "Other") {
    throw new TransitionError("free text applies only to the Other reason");
  }
  return { ...state, reasonText: text };
}

export function canSubmit(state: SampleState): boolean {
  return (
    state.view === "reason" &&
    state.prediction !== null &&
    state.confidence !== null &&
    state.reason !== null &&
    (state.reason !== "Other" || state.reasonText.trim().length > 0)
  );
}
