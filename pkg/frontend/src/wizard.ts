/**
 * The three-rule annotation wizard.
 *
 * Rules are checked in a fixed order. The first rule that fails decides
 * the verdict and the remaining rules are never asked; a summary that
 * passes all three is rated good. The verdict/rule pairing is
 * structural: a state can never hold verdict bad without its failing
 * rule, nor good with one.
 */

import { TaskPayload, Verdict, VerdictSubmission } from "./api.js";

export const RULE_ORDER = ["fluency", "relatedness", "faithfulness"] as const;

export type Rule = (typeof RULE_ORDER)[number];
export type Cursor = Rule | "done";

export interface RuleAnswer {
  rule: Rule;
  passed: boolean;
}

export interface WizardState {
  readonly task: TaskPayload;
  readonly cursor: Cursor;
  readonly verdict: Verdict | null;
  readonly failingRule: Rule | null;
  /** rules answered so far, in the order they were asked */
  readonly answered: ReadonlyArray<RuleAnswer>;
}

export function startWizard(task: TaskPayload): WizardState {
  return { task, cursor: RULE_ORDER[0], verdict: null, failingRule: null, answered: [] };
}

export function isDone(state: WizardState): boolean {
  return state.cursor === "done";
}

/**
 * Record a pass/fail answer for the rule under the cursor.
 *
 * A fail finalizes the verdict as bad with that rule; a pass on the
 * last rule finalizes good; any other pass advances the cursor.
 * Answering a finished wizard is ignored with a warning.
 */
export function answerRule(state: WizardState, passes: boolean): WizardState {
  if (state.cursor === "done") {
    console.warn("wizard: answer after the verdict is decided, ignored");
    return state;
  }
  const rule = state.cursor;
  const answered = [...state.answered, { rule, passed: passes }];
  if (!passes) {
    return { ...state, cursor: "done", verdict: "bad", failingRule: rule, answered };
  }
  const index = RULE_ORDER.indexOf(rule);
  if (index === RULE_ORDER.length - 1) {
    return { ...state, cursor: "done", verdict: "good", failingRule: null, answered };
  }
  return { ...state, cursor: RULE_ORDER[index + 1], answered };
}

/** Submission payload for a finished wizard; throws if the verdict is not decided yet. */
export function toSubmission(state: WizardState): VerdictSubmission {
  if (state.cursor !== "done" || state.verdict === null) {
    throw new Error("wizard is not finished, there is no verdict to submit");
  }
  return {
    task_id: state.task.task_id,
    annotator: state.task.annotator,
    verdict: state.verdict,
    failing_rule: state.verdict === "bad" ? state.failingRule : null,
  };
}

export function describeVerdict(state: WizardState): string {
  if (state.verdict === null) return "undecided";
  return state.verdict === "good" ? "good" : `bad (${state.failingRule})`;
}
