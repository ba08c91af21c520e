/**
 * Local retry queue for verdicts that could not reach the server.
 *
 * A transport failure keeps the submission queued until a later flush
 * delivers it, so no verdict is silently lost. A duplicate rejection
 * means the server already holds the verdict and the item is dropped as
 * skipped. Any other domain error is reported and dropped: retrying a
 * request the server rejects for cause would loop forever.
 */

import { ApiError, NetworkError, VerdictSubmission } from "./api.js";

export interface VerdictSink {
  submit(sessionId: string, submission: VerdictSubmission): Promise<unknown>;
}

export interface QueuedVerdict {
  sessionId: string;
  submission: VerdictSubmission;
  attempts: number;
}

export interface FlushOutcome {
  delivered: VerdictSubmission[];
  skippedDuplicates: VerdictSubmission[];
  rejected: Array<{ submission: VerdictSubmission; code: string }>;
  /** items still queued because the server stayed unreachable */
  retained: number;
}

export class RetryQueue {
  private items: QueuedVerdict[] = [];

  get size(): number {
    return this.items.length;
  }

  pending(): ReadonlyArray<QueuedVerdict> {
    return this.items;
  }

  push(sessionId: string, submission: VerdictSubmission): void {
    this.items.push({ sessionId, submission, attempts: 0 });
  }

  /** Try to deliver everything in order; transport failures keep their items queued. */
  async flush(client: VerdictSink): Promise<FlushOutcome> {
    const outcome: FlushOutcome = { delivered: [], skippedDuplicates: [], rejected: [], retained: 0 };
    const keep: QueuedVerdict[] = [];
    for (const item of this.items) {
      item.attempts += 1;
      try {
        await client.submit(item.sessionId, item.submission);
        outcome.delivered.push(item.submission);
      } catch (err) {
        if (err instanceof NetworkError) {
          keep.push(item);
        } else if (err instanceof ApiError && err.code === "duplicate_annotation") {
          outcome.skippedDuplicates.push(item.submission);
        } else if (err instanceof ApiError) {
          outcome.rejected.push({ submission: item.submission, code: err.code });
        } else {
          throw err;
        }
      }
    }
    this.items = keep;
    outcome.retained = keep.length;
    return outcome;
  }
}
