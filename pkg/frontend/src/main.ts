/** Browser entry: form wiring around the session console. */

import { createClient } from './api.js';
import { SessionConsole } from './console.js';
import type { FeedbackInput } from './state.js';

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function main(): void {
  const mount = byId<HTMLElement>('view');
  const serviceUrl = byId<HTMLInputElement>('service-url');
  const historyInput = byId<HTMLTextAreaElement>('history-input');
  const startButton = byId<HTMLButtonElement>('start-session');
  const feedbackText = byId<HTMLInputElement>('feedback-text');
  const dislikeAttr = byId<HTMLInputElement>('dislike-attr');
  const dislikeValue = byId<HTMLInputElement>('dislike-value');
  const preferAttr = byId<HTMLInputElement>('prefer-attr');
  const preferValue = byId<HTMLInputElement>('prefer-value');
  const sendText = byId<HTMLButtonElement>('send-text');
  const sendStructured = byId<HTMLButtonElement>('send-structured');
  const backButton = byId<HTMLButtonElement>('round-back');
  const forwardButton = byId<HTMLButtonElement>('round-forward');

  let console_: SessionConsole | null = null;

  startButton.addEventListener('click', () => {
    const history = historyInput.value
      .split(/[\s,]+/)
      .map((s) => s.trim())
      .filter(Boolean);
    if (history.length < 2) return;
    console_ = new SessionConsole({
      document,
      client: createClient(serviceUrl.value || 'http://127.0.0.1:8000'),
      mount,
    });
    void console_.startSession(history);
  });

  const send = (input: FeedbackInput) => {
    if (!console_) return;
    const composer = [sendText, sendStructured];
    composer.forEach((b) => (b.disabled = true));
    void console_.submitFeedback(input).finally(() => {
      composer.forEach((b) => (b.disabled = false));
    });
  };

  sendText.addEventListener('click', () => send({ kind: 'text', text: feedbackText.value }));
  sendStructured.addEventListener('click', () => {
    const dislike = dislikeAttr.value && dislikeValue.value
      ? { attribute: dislikeAttr.value, value: dislikeValue.value }
      : undefined;
    const prefer = preferAttr.value && preferValue.value
      ? { attribute: preferAttr.value, value: preferValue.value }
      : undefined;
    send({ kind: 'structured', dislike, prefer });
  });

  backButton.addEventListener('click', () => console_?.back());
  forwardButton.addEventListener('click', () => console_?.forward());
}

document.addEventListener('DOMContentLoaded', main);
