/** DOM rendering: pure functions of the view state. */

import type { RecommendationCard } from './api.js';
import type { TimelineEntry, ViewState } from './state.js';

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function deltaArrow(delta: number | null): string {
  if (delta === null) return '';
  if (delta > 0) return `▲ ${delta}`;
  if (delta < 0) return `▼ ${-delta}`;
  return '=';
}

export function renderCard(doc: Document, card: RecommendationCard): HTMLElement {
  const node = el(doc, 'li', 'card');
  node.dataset.itemId = card.item_id;
  node.appendChild(el(doc, 'span', 'card-rank', `#${card.rank}`));
  node.appendChild(el(doc, 'span', 'card-title', card.title));
  const attrs = Object.entries(card.attributes)
    .map(([name, values]) => `${name}: ${values.join(', ')}`)
    .join(' · ');
  node.appendChild(el(doc, 'span', 'card-attrs', attrs));
  node.appendChild(el(doc, 'span', 'card-score', card.score.toFixed(3)));
  const delta = el(doc, 'span', 'card-delta', deltaArrow(card.rank_delta));
  if (card.rank_delta !== null && card.rank_delta > 0) delta.classList.add('up');
  if (card.rank_delta !== null && card.rank_delta < 0) delta.classList.add('down');
  node.appendChild(delta);
  return node;
}

export function renderTimelineEntry(doc: Document, entry: TimelineEntry): HTMLElement {
  const node = el(doc, 'li', `timeline-item ${entry.status}`);
  node.dataset.itemId = entry.item_id;
  if (entry.status === 'masked') {
    const struck = el(doc, 's', 'masked-title', entry.title);
    node.appendChild(struck);
  } else if (entry.status === 'replaced') {
    const highlight = el(doc, 'mark', 'replaced-title', entry.title);
    highlight.title = `was: ${entry.oldTitle ?? 'unknown'}`;
    node.appendChild(highlight);
  } else {
    node.appendChild(el(doc, 'span', 'kept-title', entry.title));
  }
  return node;
}

export function renderView(doc: Document, state: ViewState): HTMLElement {
  const root = el(doc, 'section', 'round-view');
  root.dataset.round = String(state.round);

  const header = el(doc, 'header', 'round-header');
  header.appendChild(el(doc, 'h2', undefined, `Round ${state.round} of ${state.lastRound}`));
  if (state.feedbackText) {
    header.appendChild(el(doc, 'p', 'feedback-echo', `You said: ${state.feedbackText}`));
  }
  if (state.failed) {
    header.appendChild(el(doc, 'p', 'round-failed', `Round failed: ${state.failed}`));
  }
  for (const warning of state.warnings) {
    header.appendChild(el(doc, 'p', 'round-warning', warning));
  }
  root.appendChild(header);

  const timeline = el(doc, 'ol', 'timeline');
  for (const entry of state.timeline) {
    timeline.appendChild(renderTimelineEntry(doc, entry));
  }
  root.appendChild(timeline);

  const cards = el(doc, 'ol', 'cards');
  for (const card of state.cards) {
    cards.appendChild(renderCard(doc, card));
  }
  root.appendChild(cards);
  return root;
}

export function renderErrorBanner(doc: Document, message: string, onRetry?: () => void): HTMLElement {
  const banner = el(doc, 'div', 'error-banner');
  banner.appendChild(el(doc, 'span', 'error-message', message));
  if (onRetry) {
    const retry = el(doc, 'button', 'error-retry', 'Retry');
    retry.addEventListener('click', onRetry);
    banner.appendChild(retry);
  }
  return banner;
}
