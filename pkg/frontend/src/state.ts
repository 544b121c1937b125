/** View state derived purely from the server trace: no client-side inference. */

import type {
  RecommendationCard,
  SequenceEntry,
  SequenceStatus,
  TraceResponse,
  TraceRound,
} from './api.js';

export interface TimelineEntry extends SequenceEntry {
  /** For replaced slots: what the item used to be. */
  oldTitle: string | null;
}

export interface ViewState {
  sessionId: string;
  round: number;
  lastRound: number;
  cards: RecommendationCard[];
  timeline: TimelineEntry[];
  feedbackText: string | null;
  warnings: string[];
  failed: string | null;
}

/** Titles are only known for rendered rounds; build a lookup from the trace. */
function titleIndex(trace: TraceResponse): Map<string, string> {
  const titles = new Map<string, string>();
  for (const round of trace.rounds) {
    for (const card of round.recommendations) {
      titles.set(card.item_id, card.title);
    }
    for (const masked of round.masked) {
      titles.set(masked.item_id, masked.title);
    }
    for (const swap of round.replacements) {
      titles.set(swap.old_item_id, swap.old_title);
      titles.set(swap.new_item_id, swap.new_title);
    }
  }
  return titles;
}

function timelineFor(round: TraceRound, titles: Map<string, string>): TimelineEntry[] {
  const maskedPositions = new Map(round.masked.map((m) => [m.position, m]));
  const replacedPositions = new Map(round.replacements.map((r) => [r.position, r]));
  return round.input_sequence.map((itemId, position) => {
    let status: SequenceStatus = 'kept';
    let id = itemId;
    let oldTitle: string | null = null;
    if (maskedPositions.has(position)) {
      status = 'masked';
    } else if (replacedPositions.has(position)) {
      const swap = replacedPositions.get(position)!;
      status = 'replaced';
      id = swap.new_item_id;
      oldTitle = swap.old_title;
    }
    const title = status === 'replaced'
      ? replacedPositions.get(position)!.new_title
      : titles.get(id) ?? id;
    return { item_id: id, title, status, oldTitle };
  });
}

/**
 * Project one round of the immutable trace into a view. Pure: calling it for
 * the same (trace, round) always yields an identical state, which is what
 * makes back/forward navigation reproducible.
 */
export function buildViewState(trace: TraceResponse, round: number): ViewState {
  const lastRound = trace.rounds.length - 1;
  if (round < 0 || round > lastRound) {
    throw new RangeError(`round ${round} outside trace (0..${lastRound})`);
  }
  const entry = trace.rounds[round]!;
  const titles = titleIndex(trace);
  return {
    sessionId: trace.session_id,
    round: entry.round,
    lastRound,
    cards: entry.recommendations,
    timeline: timelineFor(entry, titles),
    feedbackText: entry.feedback_text,
    warnings: entry.warnings,
    failed: entry.failed,
  };
}

export interface ComposerState {
  /** A request is in flight; block further submissions client-side. */
  pending: boolean;
}

export type FeedbackInput =
  | { kind: 'text'; text: string }
  | { kind: 'structured'; dislike?: { attribute: string; value: string }; prefer?: { attribute: string; value: string } };

/** Validate composer input; null means "do not send anything". */
export function prepareFeedback(input: FeedbackInput): Record<string, unknown> | null {
  if (input.kind === 'text') {
    const text = input.text.trim();
    return text ? { text } : null;
  }
  if (!input.dislike && !input.prefer) {
    return null;
  }
  const body: Record<string, unknown> = {};
  if (input.dislike) body.dislike = input.dislike;
  if (input.prefer) body.prefer = input.prefer;
  return body;
}
