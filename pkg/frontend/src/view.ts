// Pure DOM builders: payload in, elements out. No scoring or ranking logic
// lives here — the console renders exactly what the service returned.

import type { AskResponse } from "./api.js";

export interface DocumentLike {
  createElement(tag: string): any;
}

function el(doc: DocumentLike, tag: string, className: string, text?: string): any {
  const node = doc.createElement(tag);
  node.className = className;
  if (text !== undefined) {
    node.textContent = text;
  }
  return node;
}

export function renderTurnCard(doc: DocumentLike, question: string,
                               response: AskResponse): any {
  const card = el(doc, "article", "turn-card");

  const header = el(doc, "header", "turn-header");
  header.appendChild(el(doc, "span", "turn-index", `turn ${response.turn_index + 1}`));
  header.appendChild(el(doc, "span", "turn-topic", `topic: ${response.topic_used}`));
  card.appendChild(header);

  card.appendChild(el(doc, "p", "turn-question", question));
  card.appendChild(el(doc, "p", "turn-answer", response.answer));

  const list = el(doc, "ol", "top-k");
  for (const candidate of response.top_k) {
    const row = el(doc, "li", "candidate");
    row.appendChild(el(doc, "span", "candidate-entity", candidate.entity));
    row.appendChild(el(doc, "span", "candidate-score", candidate.score.toFixed(4)));
    row.appendChild(el(doc, "span", `badge badge-${candidate.source}`, candidate.source));
    list.appendChild(row);
  }
  card.appendChild(list);

  const trace = el(doc, "ol", "trace");
  for (const step of response.trace) {
    trace.appendChild(el(doc, "li", "trace-step",
      `hop ${step.hop}: ${step.relation} → ${step.entity}`));
  }
  card.appendChild(trace);
  return card;
}

export function renderFailedTurn(doc: DocumentLike, question: string,
                                 message: string): any {
  const card = el(doc, "article", "turn-card turn-failed");
  card.appendChild(el(doc, "p", "turn-question", question));
  card.appendChild(el(doc, "p", "turn-error", message));
  return card;
}

export function renderErrorBanner(doc: DocumentLike, message: string,
                                  suggestions: string[], retryable: boolean): any {
  const banner = el(doc, "div", retryable ? "banner banner-retryable" : "banner");
  banner.appendChild(el(doc, "p", "banner-message", message));
  if (suggestions.length > 0) {
    const list = el(doc, "ul", "suggestions");
    for (const suggestion of suggestions) {
      list.appendChild(el(doc, "li", "suggestion", suggestion));
    }
    banner.appendChild(list);
  }
  return banner;
}

export function renderPinnedTopic(doc: DocumentLike, topicEntity: string): any {
  return el(doc, "div", "pinned-topic", `conversation about: ${topicEntity}`);
}
