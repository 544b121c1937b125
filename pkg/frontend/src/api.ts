/** Typed client for the session service. */

export interface RecommendationCard {
  rank: number;
  item_id: string;
  title: string;
  attributes: Record<string, string[]>;
  score: number;
  rank_delta: number | null;
}

export interface MaskedItem {
  item_id: string;
  title: string;
  position: number;
  score: number;
}

export interface ReplacementDiff {
  position: number;
  old_item_id: string;
  old_title: string;
  new_item_id: string;
  new_title: string;
}

export type SequenceStatus = 'kept' | 'masked' | 'replaced';

export interface SequenceEntry {
  item_id: string;
  title: string;
  status: SequenceStatus;
}

export interface RoundResult {
  round: number;
  recommendations: RecommendationCard[];
  sequence: SequenceEntry[];
  masked: MaskedItem[];
  replacements: ReplacementDiff[];
  feedback_text: string | null;
  warnings: string[];
}

export interface SessionCreated {
  session_id: string;
  round0: RoundResult;
}

export interface TraceRound {
  round: number;
  input_sequence: string[];
  feedback_text: string | null;
  masked: MaskedItem[];
  replacements: ReplacementDiff[];
  recommendations: RecommendationCard[];
  warnings: string[];
  failed: string | null;
  timings: Record<string, number>;
}

export interface TraceResponse {
  session_id: string;
  rounds: TraceRound[];
}

export interface StructuredFeedback {
  attribute: string;
  value: string;
}

export interface FeedbackRequest {
  text?: string;
  dislike?: StructuredFeedback;
  prefer?: StructuredFeedback;
}

export interface SessionConfig {
  mask_k?: number;
  top_k?: number;
  similarity_fn?: string;
  max_replacements?: number;
}

export interface ServiceError {
  status: number;
  code: string;
  message: string;
}

export class ApiError extends Error implements ServiceError {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

export interface ServiceClient {
  createSession(history: string[], config?: SessionConfig): Promise<SessionCreated>;
  submitFeedback(sessionId: string, feedback: FeedbackRequest): Promise<RoundResult>;
  getTrace(sessionId: string): Promise<TraceResponse>;
  getRecommendations(sessionId: string): Promise<RoundResult>;
  deleteSession(sessionId: string): Promise<void>;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function parseOrThrow<T>(response: Response): Promise<T> {
  if (response.ok) {
    return (response.status === 204 ? undefined : await response.json()) as T;
  }
  let code = 'error';
  let message = `request failed with status ${response.status}`;
  try {
    const body = (await response.json()) as { code?: string; message?: string };
    code = body.code ?? code;
    message = body.message ?? message;
  } catch {
    // non-JSON error body: keep the generic message
  }
  throw new ApiError(response.status, code, message);
}

export function createClient(baseUrl: string, fetchImpl?: FetchLike): ServiceClient {
  const doFetch: FetchLike = fetchImpl ?? ((input, init) => fetch(input, init));
  const base = baseUrl.replace(/\/+$/, '');
  const json = { 'Content-Type': 'application/json' };

  return {
    async createSession(history, config = {}) {
      const response = await doFetch(`${base}/sessions`, {
        method: 'POST',
        headers: json,
        body: JSON.stringify({ history, config }),
      });
      return parseOrThrow<SessionCreated>(response);
    },
    async submitFeedback(sessionId, feedback) {
      const response = await doFetch(`${base}/sessions/${sessionId}/feedback`, {
        method: 'POST',
        headers: json,
        body: JSON.stringify(feedback),
      });
      return parseOrThrow<RoundResult>(response);
    },
    async getTrace(sessionId) {
      const response = await doFetch(`${base}/sessions/${sessionId}/trace`);
      return parseOrThrow<TraceResponse>(response);
    },
    async getRecommendations(sessionId) {
      const response = await doFetch(`${base}/sessions/${sessionId}/recommendations`);
      return parseOrThrow<RoundResult>(response);
    },
    async deleteSession(sessionId) {
      const response = await doFetch(`${base}/sessions/${sessionId}`, { method: 'DELETE' });
      await parseOrThrow<void>(response);
    },
  };
}
