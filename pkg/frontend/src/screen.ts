/**
 * View models for the annotation screens.
 *
 * Blinding is enforced here: a task screen is built from the source
 * text and the candidate summary alone. Whatever else a payload may
 * carry (a system id, a reference summary, debug fields) never reaches
 * the screen object, so the view layer cannot render it.
 */

import { AgreementReport, StatsReport, TaskPayload } from "./api.js";
import { Rule, RULE_ORDER, WizardState } from "./wizard.js";

export interface RulePrompt {
  title: string;
  guidance: string;
}

export type RulePrompts = Record<Rule, RulePrompt>;

/**
 * Default rule guidance shown to annotators. Deployments can swap the
 * wording (or the language) by passing their own prompts to the app;
 * the rule order and semantics are fixed by the server.
 */
export const RULE_PROMPTS: RulePrompts = {
  fluency: {
    title: "Rule 1 of 3: fluency",
    guidance:
      "Read the summary on its own, ignoring the source for now. Does it " +
      "read as acceptable text? Small slips, such as a repeated word or a " +
      "dropped function word, do not fail this rule as long as the summary " +
      "stays readable.",
  },
  relatedness: {
    title: "Rule 2 of 3: relatedness",
    guidance:
      "Is the summary about the same subject as the source text? Judge " +
      "only whether the topics match; whether the details are correct is " +
      "the next check.",
  },
  faithfulness: {
    title: "Rule 3 of 3: faithfulness",
    guidance:
      "Check every claim in the summary against the source text. If the " +
      "summary asserts something the source does not support, it fails " +
      "this rule.",
  },
};

export const PROCEDURE_NOTE =
  "Answer the rules in order. The first rule that fails decides the " +
  "verdict and the remaining rules are skipped; if all three pass, the " +
  "summary is rated good. Judge against the source text shown here; " +
  "there is no reference summary.";

export const KEYS_NOTE = "keys: y = rule passes, n = rule fails";

export interface TaskScreen {
  heading: string;
  procedureNote: string;
  sourceLabel: string;
  source: string;
  candidateLabel: string;
  candidate: string;
  /** null once the verdict is decided and the task is being submitted */
  prompt: RulePrompt | null;
  progressNote: string;
  keysNote: string;
}

/**
 * Reject payloads the wizard cannot run on. Returns a description of
 * the problem, or null for a well-formed payload. The description
 * never echoes payload values, only field names.
 */
export function validateTask(payload: unknown): string | null {
  if (typeof payload !== "object" || payload === null) {
    return "task payload is not an object";
  }
  const record = payload as Record<string, unknown>;
  for (const field of ["task_id", "pair_id", "source", "candidate", "annotator"]) {
    if (typeof record[field] !== "string") {
      return `field ${field} is missing or not a string`;
    }
  }
  const rules = record.rules;
  if (!Array.isArray(rules)) {
    return "field rules is missing or not a list";
  }
  if (rules.length !== RULE_ORDER.length || !RULE_ORDER.every((r, i) => rules[i] === r)) {
    return "server rule list does not match this client";
  }
  return null;
}

export function taskScreen(
  state: WizardState,
  submittedCount: number,
  prompts: RulePrompts = RULE_PROMPTS,
): TaskScreen {
  const task: TaskPayload = state.task;
  return {
    heading: `Task ${task.task_id}`,
    procedureNote: PROCEDURE_NOTE,
    sourceLabel: "Source text",
    source: task.source,
    candidateLabel: "Candidate summary",
    candidate: task.candidate,
    prompt: state.cursor === "done" ? null : prompts[state.cursor],
    progressNote: `${submittedCount} submitted this session`,
    keysNote: KEYS_NOTE,
  };
}

export function progressLines(stats: StatsReport): string[] {
  return [
    `annotations ${stats.n_annotations} / ${stats.n_expected}`,
    stats.done ? "session complete" : "session in progress",
  ];
}

/** Per-system accuracy; owner view only, annotators never see it. */
export function ownerStatsLines(stats: StatsReport): string[] {
  const lines: string[] = [];
  for (const sysId of Object.keys(stats.systems).sort()) {
    const s = stats.systems[sysId];
    const pct = s.accuracy_pct === null ? "n/a" : `${s.accuracy_pct.toFixed(1)}%`;
    lines.push(`${sysId}: ${s.n_good} good of ${s.n_answered} answered (${pct})`);
  }
  return lines;
}

export function agreementLines(report: AgreementReport): string[] {
  if (report.n_items === 0) {
    return ["agreement: no fully double-annotated items yet"];
  }
  const pct =
    report.percent_agreement === null ? "n/a" : `${(100 * report.percent_agreement).toFixed(1)}%`;
  const kappa =
    report.kappa_defined && report.kappa !== null
      ? report.kappa.toFixed(3)
      : "undefined (no verdict variation)";
  return [
    `agreement items: ${report.n_items}`,
    `raw agreement: ${pct}`,
    `Cohen's kappa: ${kappa}`,
  ];
}
