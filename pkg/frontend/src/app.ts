/**
 * Orchestration: one annotator, one session, tasks served one at a
 * time. All state changes flow through the server; the only local state
 * is the wizard for the task on screen and the retry queue for verdicts
 * the server has not acknowledged yet.
 */

import {
  AgreementReport,
  ApiError,
  NetworkError,
  NextTaskResponse,
  StatsReport,
  VerdictSubmission,
} from "./api.js";
import { AnnotationView } from "./dom.js";
import { RetryQueue } from "./queue.js";
import {
  agreementLines,
  ownerStatsLines,
  progressLines,
  RulePrompts,
  RULE_PROMPTS,
  taskScreen,
  validateTask,
} from "./screen.js";
import { answerRule, describeVerdict, isDone, startWizard, toSubmission, WizardState } from "./wizard.js";

export interface ClientLike {
  nextTask(sessionId: string, annotator: string): Promise<NextTaskResponse>;
  submit(sessionId: string, submission: VerdictSubmission): Promise<unknown>;
  stats(sessionId: string): Promise<StatsReport>;
  agreement(sessionId: string): Promise<AgreementReport>;
}

export interface AppConfig {
  sessionId: string;
  annotator: string;
  /** owners additionally see per-system accuracy and agreement */
  role: "annotator" | "owner";
  /** retry and panel-poll period in milliseconds */
  pollMs: number;
  prompts?: RulePrompts;
}

export class AnnotationApp {
  readonly queue = new RetryQueue();
  private wizard: WizardState | null = null;
  private submitted = 0;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;
  private readonly prompts: RulePrompts;

  constructor(
    private readonly cfg: AppConfig,
    private readonly client: ClientLike,
    private readonly view: AnnotationView,
  ) {
    this.prompts = cfg.prompts ?? RULE_PROMPTS;
  }

  get progressCount(): number {
    return this.submitted;
  }

  async start(): Promise<void> {
    this.view.bindKeys({
      onPass: () => void this.answer(true),
      onFail: () => void this.answer(false),
    });
    this.view.showConnecting("Connecting");
    await this.refreshPanels();
    await this.loadNext();
  }

  stop(): void {
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
    this.view.dispose();
  }

  /** Answer the rule under the cursor; a decided verdict submits and advances. */
  async answer(passes: boolean): Promise<void> {
    if (this.wizard === null) return; // loading, finished, or errored: nothing to answer
    if (isDone(this.wizard)) {
      console.warn("app: verdict already decided, answer ignored");
      return;
    }
    this.wizard = answerRule(this.wizard, passes);
    if (!isDone(this.wizard)) {
      this.view.showTask(taskScreen(this.wizard, this.submitted, this.prompts));
      return;
    }
    const verdict = describeVerdict(this.wizard);
    const submission = toSubmission(this.wizard);
    this.wizard = null; // no further answers until the next task is on screen
    this.view.showNotice(`verdict ${verdict}, submitting`);
    await this.deliver(submission, verdict);
  }

  private async deliver(submission: VerdictSubmission, verdict: string): Promise<void> {
    try {
      await this.client.submit(this.cfg.sessionId, submission);
      this.submitted += 1;
      this.view.showNotice(`verdict ${verdict}, saved`);
    } catch (err) {
      if (err instanceof NetworkError) {
        this.queue.push(this.cfg.sessionId, submission);
        this.view.showNotice(
          `offline: verdict stored locally (${this.queue.size} queued), will retry`);
        this.scheduleRetry();
        return; // next task is fetched once the queue drains
      }
      if (err instanceof ApiError && err.code === "duplicate_annotation") {
        this.view.showNotice("task was already answered, skipping");
      } else {
        this.view.showError(`verdict rejected by the server: ${describeError(err)}`);
        return;
      }
    }
    await this.refreshPanels();
    await this.loadNext();
  }

  private async loadNext(): Promise<void> {
    let response: NextTaskResponse;
    try {
      response = await this.client.nextTask(this.cfg.sessionId, this.cfg.annotator);
    } catch (err) {
      if (err instanceof NetworkError) {
        this.view.showNotice("offline: waiting for the server");
        this.scheduleRetry();
        return;
      }
      this.view.showError(describeError(err));
      return;
    }
    if (response.done || response.task === null) {
      this.wizard = null;
      this.view.showDone(`all assigned tasks are answered (${this.submitted} submitted here)`);
      return;
    }
    const problem = validateTask(response.task);
    if (problem !== null) {
      this.wizard = null;
      this.view.showError(`malformed task payload: ${problem}`);
      return;
    }
    this.wizard = startWizard(response.task);
    this.view.showTask(taskScreen(this.wizard, this.submitted, this.prompts));
  }

  /** Drain the retry queue, then resume wherever the annotator left off. */
  async retryNow(): Promise<void> {
    const outcome = await this.queue.flush(this.client);
    this.submitted += outcome.delivered.length;
    for (const r of outcome.rejected) {
      console.warn(`queued verdict rejected for cause (${r.code})`, r.submission);
    }
    if (outcome.retained > 0) {
      this.scheduleRetry();
      return;
    }
    if (this.wizard === null) {
      await this.refreshPanels();
      await this.loadNext();
    }
  }

  private scheduleRetry(): void {
    if (this.retryTimer !== null) return;
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      void this.retryNow();
    }, this.cfg.pollMs);
  }

  /** Panels are advisory; a failure here never blocks annotation. */
  async refreshPanels(): Promise<void> {
    try {
      const stats = await this.client.stats(this.cfg.sessionId);
      this.view.renderProgress(progressLines(stats));
      if (this.cfg.role === "owner") {
        const report = await this.client.agreement(this.cfg.sessionId);
        this.view.renderOwnerPanel([...ownerStatsLines(stats), ...agreementLines(report)]);
      }
    } catch {
      // stats are refreshed again after the next submission
    }
  }
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) return `${err.code}: ${err.message}`;
  return String(err);
}
