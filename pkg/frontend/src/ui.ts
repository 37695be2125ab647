/**
 * DOM layer: renders the current sample's view, wires clicks to the state
 * machine, and talks to the service. Progress is always re-derived from
 * the server, so a page refresh never loses acknowledged work.
 */

import { ApiClient, ApiError, freshIdempotencyKey } from "./api";
import {
  canSubmit,
  newSample,
  SampleState,
  selectConfidence,
  selectPrediction,
  selectReason,
  setReasonText,
  startPlayback,
  TransitionError,
} from "./stateMachine";
import type { Confidence, NextSample, Prediction, Reason, ResponsePayload } from "./types";
import { CONFIDENCES, REASONS } from "./types";

export class RatingApp {
  private state: SampleState | null = null;
  private sample: NextSample | null = null;
  private pending: Promise<void> = Promise.resolve();
  private errorText = "";

  constructor(
    private root: HTMLElement,
    private client: ApiClient,
  ) {}

  /** Await all in-flight handlers (used by scripted sessions). */
  idle(): Promise<void> {
    return this.pending;
  }

  start(): Promise<void> {
    this.pending = this.loadNext();
    return this.pending;
  }

  private async loadNext(): Promise<void> {
    try {
      const sample = await this.client.next();
      this.sample = sample;
      this.state = sample.complete || !sample.clip_id ? null : newSample(sample.clip_id);
      this.errorText = "";
      this.render();
    } catch (err) {
      this.renderFailure(err, () => this.loadNext());
    }
  }

  private async submitCurrent(): Promise<void> {
    if (!this.state || !canSubmit(this.state)) return;
    const payload: ResponsePayload = {
      clip_id: this.state.clipId,
      prediction: this.state.prediction!,
      confidence: this.state.confidence!,
      reason: this.state.reason!,
      idempotency_key: freshIdempotencyKey(),
    };
    if (this.state.reason === "Other") payload.reason_text = this.state.reasonText.trim();
    try {
      await this.client.submitWithRetry(payload);
      await this.loadNext();
    } catch (err) {
      if (err instanceof ApiError && err.status !== 401) {
        // validation verdict: stay on the reason view and surface it
        this.errorText = err.message;
        this.render();
        return;
      }
      this.renderFailure(err, () => this.submitCurrent());
    }
  }

  private apply(transition: () => SampleState): void {
    if (!this.state) return;
    try {
      this.state = transition();
      this.errorText = "";
    } catch (err) {
      if (!(err instanceof TransitionError)) throw err;
      this.errorText = err.message;
    }
    this.render();
  }

  private render(): void {
    if (!this.sample) return;
    if (this.sample.complete || !this.state) {
      this.root.innerHTML = `
        <section data-testid="complete" class="card">
          <h1>All done</h1>
          <p>You rated ${this.sample.progress.done} of ${this.sample.progress.total} samples. Thank you!</p>
        </section>`;
      return;
    }

    const position = this.sample.progress.done + 1;
    const header = `
      <header>
        <span data-testid="progress">${position} / ${this.sample.progress.total}</span>
      </header>`;
    const error = this.errorText ? `<p class="error" data-testid="error">${this.errorText}</p>` : "";

    if (this.state.view === "play") {
      this.root.innerHTML = `${header}
        <section class="card" data-testid="view-play">
          <h1>Listen, then decide</h1>
          <audio data-testid="player" controls preload="auto" src="${this.client.audioUrl(this.sample.audio_url!)}"></audio>
          <p>Does this speech sample come from a person with Parkinson's Disease or a Healthy Control?</p>
          <div class="choices">
            <button data-testid="predict-PD" disabled>Parkinson's Disease</button>
            <button data-testid="predict-HC" disabled>Healthy Control</button>
          </div>
          <p class="hint" data-testid="play-hint">Press play to enable the buttons.</p>
          ${error}
        </section>`;
      const audio = this.query<HTMLAudioElement>("player");
      audio.addEventListener("play", () => {
        this.apply(() => startPlayback(this.state!));
      });
      for (const value of ["PD", "HC"] as Prediction[]) {
        this.query(`predict-${value}`).addEventListener("click", () => {
          this.apply(() => selectPrediction(this.state!, value));
        });
      }
      if (this.state.playbackStarted) {
        this.query(`predict-PD`).removeAttribute("disabled");
        this.query(`predict-HC`).removeAttribute("disabled");
        this.query("play-hint").textContent = "";
      }
      return;
    }

    if (this.state.view === "confidence") {
      const buttons = CONFIDENCES.map(
        (c) => `<button data-testid="confidence-${c}">${c}</button>`,
      ).join("");
      this.root.innerHTML = `${header}
        <section class="card" data-testid="view-confidence">
          <h1>How confident are you?</h1>
          <p>Your call: <strong>${this.state.prediction}</strong></p>
          <div class="choices">${buttons}</div>
          ${error}
        </section>`;
      for (const value of CONFIDENCES) {
        this.query(`confidence-${value}`).addEventListener("click", () => {
          this.apply(() => selectConfidence(this.state!, value as Confidence));
        });
      }
      return;
    }

    // reason view
    const reasonButtons = REASONS.map(
      (r) =>
        `<button data-testid="reason-${r}" class="${this.state!.reason === r ? "selected" : ""}">${r}</button>`,
    ).join("");
    const needText = this.state.reason === "Other";
    this.root.innerHTML = `${header}
      <section class="card" data-testid="view-reason">
        <h1>What drove your decision?</h1>
        <div class="choices">${reasonButtons}</div>
        ${needText ? `<input data-testid="reason-text" placeholder="Describe the reason" value="${this.state.reasonText}">` : ""}
        <button data-testid="submit" ${canSubmit(this.state) ? "" : "disabled"}>Submit rating</button>
        ${error}
      </section>`;
    for (const value of REASONS) {
      this.query(`reason-${value}`).addEventListener("click", () => {
        this.apply(() => selectReason(this.state!, value as Reason));
      });
    }
    if (needText) {
      this.query<HTMLInputElement>("reason-text").addEventListener("input", (ev) => {
        const text = (ev.target as HTMLInputElement).value;
        // keep typing cheap: update state then only refresh the submit gate
        this.state = setReasonText(this.state!, text);
        const submit = this.query<HTMLButtonElement>("submit");
        if (canSubmit(this.state)) submit.removeAttribute("disabled");
        else submit.setAttribute("disabled", "");
      });
    }
    this.query("submit").addEventListener("click", () => {
      this.pending = this.submitCurrent();
    });
  }

  private renderFailure(err: unknown, retry: () => Promise<void>): void {
    if (err instanceof ApiError && err.status === 401) {
      this.root.innerHTML = `
        <section class="card" data-testid="invalid-link">
          <h1>Invalid link</h1>
          <p>This rating link is not recognized. Please use the exact link you were sent.</p>
        </section>`;
      return;
    }
    this.root.innerHTML = `
      <section class="card" data-testid="network-error">
        <h1>Connection problem</h1>
        <p>${err instanceof Error ? err.message : "Request failed"}</p>
        <button data-testid="retry">Try again</button>
      </section>`;
    this.query("retry").addEventListener("click", () => {
      this.pending = retry();
    });
  }

  private query<T extends HTMLElement = HTMLElement>(testId: string): T {
    const el = this.root.querySelector(`[data-testid="${testId}"]`);
    if (!el) throw new Error(`missing element ${testId}`);
    return el as T;
  }
}
