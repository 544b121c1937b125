/** Session console controller: wiring between the client, trace, and DOM. */

import { ApiError, type ServiceClient, type TraceResponse } from './api.js';
import { buildViewState, prepareFeedback, type FeedbackInput } from './state.js';
import { renderErrorBanner, renderView } from './render.js';

export interface ConsoleOptions {
  document: Document;
  client: ServiceClient;
  mount: HTMLElement;
}

export class SessionConsole {
  private readonly doc: Document;
  private readonly client: ServiceClient;
  private readonly mount: HTMLElement;
  private sessionId: string | null = null;
  private trace: TraceResponse | null = null;
  private round = 0;
  private pending = false;

  constructor(options: ConsoleOptions) {
    this.doc = options.document;
    this.client = options.client;
    this.mount = options.mount;
  }

  get currentRound(): number {
    return this.round;
  }

  get isPending(): boolean {
    return this.pending;
  }

  async startSession(history: string[], config?: { mask_k?: number; top_k?: number }): Promise<void> {
    try {
      const created = await this.client.createSession(history, config);
      this.sessionId = created.session_id;
      await this.refreshTrace();
    } catch (error) {
      this.showError(`could not start session: ${describe(error)}`, () => {
        void this.startSession(history, config);
      });
    }
  }

  /** Refresh the immutable trace from the service and show its last round. */
  async refreshTrace(): Promise<void> {
    if (!this.sessionId) return;
    const trace = await this.client.getTrace(this.sessionId);
    this.trace = trace;
    this.round = trace.rounds.length - 1;
    this.renderRound();
  }

  /**
   * Send feedback and re-render from the updated trace. Returns false when
   * the input was empty or another submission is still in flight (the second
   * rapid submission is blocked client-side).
   */
  async submitFeedback(input: FeedbackInput): Promise<boolean> {
    if (!this.sessionId || this.pending) return false;
    const body = prepareFeedback(input);
    if (body === null) return false;
    this.pending = true;
    try {
      await this.client.submitFeedback(this.sessionId, body);
      await this.refreshTrace();
      return true;
    } catch (error) {
      if (error instanceof ApiError && error.status === 409) {
        this.showError('a round is already in flight; wait for it to finish');
      } else {
        this.showError(`feedback failed: ${describe(error)}`);
        await this.refreshTrace().catch(() => undefined);
      }
      return false;
    } finally {
      this.pending = false;
    }
  }

  /** Pure navigation over the cached trace; no requests involved. */
  showRound(round: number): void {
    if (!this.trace) return;
    this.round = Math.max(0, Math.min(round, this.trace.rounds.length - 1));
    this.renderRound();
  }

  back(): void {
    this.showRound(this.round - 1);
  }

  forward(): void {
    this.showRound(this.round + 1);
  }

  renderRound(): void {
    if (!this.trace) return;
    const state = buildViewState(this.trace, this.round);
    this.mount.replaceChildren(renderView(this.doc, state));
  }

  showError(message: string, onRetry?: () => void): void {
    this.mount.replaceChildren(renderErrorBanner(this.doc, message, onRetry));
  }
}

function describe(error: unknown): string {
  if (error instanceof ApiError) return `${error.status} ${error.code}: ${error.message}`;
  return error instanceof Error ? error.message : String(error);
}
