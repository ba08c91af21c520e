/**
 * DOM paint layer. Builds a fixed skeleton of regions inside a root
 * element and rewrites their text on every state change. All content is
 * set through textContent: candidate summaries are untrusted strings
 * and must never be parsed as markup.
 */

import { TaskScreen } from "./screen.js";

const IGNORED_TAGS = new Set(["INPUT", "TEXTAREA", "SELECT"]);

export interface KeyHandlers {
  onPass: () => void;
  onFail: () => void;
}

interface Regions {
  heading: HTMLElement;
  procedure: HTMLElement;
  sourceLabel: HTMLElement;
  source: HTMLElement;
  candidateLabel: HTMLElement;
  candidate: HTMLElement;
  promptTitle: HTMLElement;
  promptGuidance: HTMLElement;
  keys: HTMLElement;
  notice: HTMLElement;
  progress: HTMLElement;
  sessionNote: HTMLElement;
  owner: HTMLElement;
  taskCard: HTMLElement;
  promptCard: HTMLElement;
}

export class AnnotationView {
  private readonly doc: Document;
  private readonly regions: Regions;
  /** every rule prompt title ever painted, in paint order */
  readonly promptLog: string[] = [];
  private unbind: (() => void) | null = null;

  constructor(root: HTMLElement) {
    this.doc = root.ownerDocument;
    const make = (tag: string, className: string, parent: HTMLElement): HTMLElement => {
      const el = this.doc.createElement(tag) as HTMLElement;
      el.className = className;
      parent.appendChild(el);
      return el;
    };

    root.textContent = "";
    const heading = make("h1", "heading", root);
    const notice = make("div", "notice", root);
    const progress = make("div", "progress", root);
    const taskCard = make("section", "task-card", root);
    const procedure = make("p", "procedure", taskCard);
    const sourceLabel = make("h2", "label", taskCard);
    const source = make("p", "source", taskCard);
    const candidateLabel = make("h2", "label", taskCard);
    const candidate = make("p", "candidate", taskCard);
    const promptCard = make("section", "prompt-card", root);
    const promptTitle = make("h2", "prompt-title", promptCard);
    const promptGuidance = make("p", "prompt-guidance", promptCard);
    const keys = make("p", "keys", promptCard);
    const sessionNote = make("p", "session-note", root);
    const owner = make("section", "owner-panel", root);
    owner.style.display = "none";

    this.regions = {
      heading, procedure, sourceLabel, source, candidateLabel, candidate,
      promptTitle, promptGuidance, keys, notice, progress, sessionNote,
      owner, taskCard, promptCard,
    };
  }

  showConnecting(text: string): void {
    this.regions.heading.textContent = text;
    this.regions.taskCard.style.display = "none";
    this.regions.promptCard.style.display = "none";
  }

  showTask(screen: TaskScreen): void {
    const r = this.regions;
    r.taskCard.style.display = "";
    r.heading.textContent = screen.heading;
    r.procedure.textContent = screen.procedureNote;
    r.sourceLabel.textContent = screen.sourceLabel;
    r.source.textContent = screen.source;
    r.candidateLabel.textContent = screen.candidateLabel;
    r.candidate.textContent = screen.candidate;
    if (screen.prompt === null) {
      r.promptCard.style.display = "none";
      r.promptTitle.textContent = "";
      r.promptGuidance.textContent = "";
      r.keys.textContent = "";
    } else {
      r.promptCard.style.display = "";
      r.promptTitle.textContent = screen.prompt.title;
      r.promptGuidance.textContent = screen.prompt.guidance;
      r.keys.textContent = screen.keysNote;
      this.promptLog.push(screen.prompt.title);
    }
    r.sessionNote.textContent = screen.progressNote;
  }

  showDone(message: string): void {
    const r = this.regions;
    r.heading.textContent = "Session finished";
    r.taskCard.style.display = "none";
    r.promptCard.style.display = "none";
    r.notice.textContent = message;
  }

  showError(message: string): void {
    const r = this.regions;
    r.heading.textContent = "Error";
    r.taskCard.style.display = "none";
    r.promptCard.style.display = "none";
    r.notice.textContent = message;
  }

  showNotice(message: string): void {
    this.regions.notice.textContent = message;
  }

  renderProgress(lines: string[]): void {
    this.regions.progress.textContent = lines.join(" | ");
  }

  renderOwnerPanel(lines: string[]): void {
    const r = this.regions;
    r.owner.style.display = "";
    r.owner.textContent = "";
    for (const line of lines) {
      const p = this.doc.createElement("p");
      p.textContent = line;
      r.owner.appendChild(p);
    }
  }

  /** Bind y/n keys on the document; dispose() releases the listener. */
  bindKeys(handlers: KeyHandlers): void {
    const listener = (event: Event) => {
      const key = (event as KeyboardEvent).key;
      const target = event.target as { tagName?: string; isContentEditable?: boolean } | null;
      if (target && target.tagName && IGNORED_TAGS.has(target.tagName)) return;
      if (target && target.isContentEditable) return;
      if (key === "y" || key === "Y") {
        event.preventDefault();
        handlers.onPass();
      } else if (key === "n" || key === "N") {
        event.preventDefault();
        handlers.onFail();
      }
    };
    this.doc.addEventListener("keydown", listener);
    this.unbind = () => this.doc.removeEventListener("keydown", listener);
  }

  dispose(): void {
    if (this.unbind !== null) {
      this.unbind();
      this.unbind = null;
    }
  }
}
