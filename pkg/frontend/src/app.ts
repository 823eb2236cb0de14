// Console state machine: one session, one in-flight request at a time.

import { ServiceClient, ServiceError } from "./api.js";
import {
  DocumentLike,
  renderErrorBanner,
  renderFailedTurn,
  renderPinnedTopic,
  renderTurnCard,
} from "./view.js";

export interface ConsoleElements {
  topicInput: any;
  startButton: any;
  questionInput: any;
  askButton: any;
  transcript: any;
  status: any;
}

export class ChatConsole {
  doc: DocumentLike;
  client: ServiceClient;
  els: ConsoleElements;
  sessionId: string | null = null;
  inFlight = false;

  constructor(doc: DocumentLike, client: ServiceClient, els: ConsoleElements) {
    this.doc = doc;
    this.client = client;
    this.els = els;
    els.startButton.addEventListener("click", () => this.startSession());
    els.askButton.addEventListener("click", () => this.ask());
    els.questionInput.addEventListener("keydown", (event: any) => {
      if (event && event.key === "Enter") {
        this.ask();
      }
    });
  }

  private setStatus(node: any | null): void {
    this.els.status.textContent = "";
    while (this.els.status.children.length > 0) {
      this.els.status.removeChild(this.els.status.children[0]);
    }
    if (node !== null) {
      this.els.status.appendChild(node);
    }
  }

  private setBusy(busy: boolean): void {
    this.inFlight = busy;
    this.els.askButton.disabled = busy;
    this.els.questionInput.disabled = busy;
    this.els.startButton.disabled = busy;
  }

  async startSession(): Promise<void> {
    const key = String(this.els.topicInput.value ?? "").trim();
    if (!key || this.inFlight) {
      return;
    }
    this.setBusy(true);
    try {
      const info = await this.client.createSession(key);
      this.sessionId = info.session_id;
      while (this.els.transcript.children.length > 0) {
        this.els.transcript.removeChild(this.els.transcript.children[0]);
      }
      this.setStatus(renderPinnedTopic(this.doc, info.topic_entity));
    } catch (error) {
      if (error instanceof ServiceError) {
        this.setStatus(renderErrorBanner(
          this.doc, error.detail.message, error.detail.suggestions, false));
      } else {
        this.setStatus(renderErrorBanner(
          this.doc, "service unreachable; check the URL and retry", [], true));
      }
    } finally {
      this.setBusy(false);
    }
  }

  async ask(): Promise<void> {
    const question = String(this.els.questionInput.value ?? "").trim();
    if (!question || this.inFlight || this.sessionId === null) {
      return;
    }
    this.setBusy(true);
    try {
      const response = await this.client.ask(this.sessionId, question);
      this.els.transcript.appendChild(
        renderTurnCard(this.doc, question, response));
      this.els.questionInput.value = "";
    } catch (error) {
      const message = error instanceof ServiceError
        ? error.detail.message
        : "request failed; retry";
      this.els.transcript.appendChild(
        renderFailedTurn(this.doc, question, message));
    } finally {
      this.setBusy(false);
    }
  }
}

export function bootstrap(): void {
  const doc = document;
  const byId = (id: string) => {
    const node = doc.getElementById(id);
    if (!node) {
      throw new Error(`missing element #${id}`);
    }
    return node;
  };
  const urlInput = byId("api-url") as HTMLInputElement;
  const saved = window.localStorage.getItem("convkgqa-api-url");
  if (saved) {
    urlInput.value = saved;
  }
  let client = new ServiceClient(urlInput.value || "http://127.0.0.1:8000");
  urlInput.addEventListener("change", () => {
    window.localStorage.setItem("convkgqa-api-url", urlInput.value);
    client = new ServiceClient(urlInput.value);
    console_.client = client;
  });
  const console_ = new ChatConsole(doc, client, {
    topicInput: byId("topic-key"),
    startButton: byId("start-session"),
    questionInput: byId("question"),
    askButton: byId("ask"),
    transcript: byId("transcript"),
    status: byId("status"),
  });
}
