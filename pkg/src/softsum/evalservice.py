"""Source-grounded human evaluation sessions.

A session is created from a pair list, one candidate summary per pair
per system, and an annotator roster. Every (pair, system) becomes a
task. A seeded random subset of pairs is double-annotated: all tasks of
those pairs go to exactly two annotators; every other pair's tasks go
to exactly one. Assignment balances load but never splits a source
between annotators within one serving. Task payloads are blinded: they
carry the source and candidate only, never the system identity or the
reference summary.

Verdicts are judged against three ordered rules: fluency, then
relatedness, then faithfulness. A failed rule makes the verdict "bad"
and the annotation carries the first rule that failed; later rules are
never reached. "good" annotations carry no rule.

Accuracy per system is the fraction of answered tasks judged good,
counting each double-annotated task once through its primary annotator
(the lexicographically first of the two assignees). Agreement over
double-annotated tasks reports percent agreement and Cohen's kappa.

All mutating calls append to an event log when one is configured, and
replaying a log rebuilds the exact session state.
"""

from __future__ import annotations

import json
import math
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np

RULES = ("fluency", "relatedness", "faithfulness")
VERDICTS = ("good", "bad")


class EvalServiceError(Exception):
    """Domain error with a stable machine-readable code."""

    def __init__(self, code, message, http_status=400):
        super().__init__(message)
        self.code = code
        self.message = message
        self.http_status = http_status

    def payload(self):
        return {"code": self.code, "message": self.message}


@dataclass
class EvalTask:
    task_id: str
    pair_id: str
    source: str
    candidate: str
    system_id: str
    assignees: tuple
    double: bool


@dataclass
class Annotation:
    task_id: str
    annotator: str
    verdict: str
    failing_rule: str | None
    timestamp: float


@dataclass
class Session:
    session_id: str
    seed: int
    annotators: list
    systems: list
    tasks: dict = field(default_factory=dict)
    serving_order: dict = field(default_factory=dict)   # annotator -> [task_id]
    annotations: dict = field(default_factory=dict)     # (task_id, annotator) -> Annotation
    double_pairs: set = field(default_factory=set)

    def tasks_for(self, annotator):
        return [self.tasks[tid] for tid in self.serving_order.get(annotator, [])]


def verify_verdict(verdict, failing_rule):
    if verdict not in VERDICTS:
        raise EvalServiceError("bad_verdict", f"verdict must be one of {VERDICTS}, got {verdict!r}")
    if verdict == "good" and failing_rule is not None:
        raise EvalServiceError("rule_on_good",
                               "a good verdict must not carry a failing rule")
    if verdict == "bad":
        if failing_rule is None:
            raise EvalServiceError("missing_rule",
                                   "a bad verdict must name the first failing rule")
        if failing_rule not in RULES:
            raise EvalServiceError("unknown_rule",
                                   f"failing rule must be one of {RULES}, got {failing_rule!r}")


def first_failing_rule(results):
    """Wizard helper: map ordered pass/fail answers to a verdict.

    ``results`` is a mapping of rule name to bool (True = passed),
    checked in the fixed order; the first failure decides.
    """
    for rule in RULES:
        if rule not in results:
            raise EvalServiceError("incomplete_rules", f"missing answer for rule {rule!r}")
        if not results[rule]:
            return "bad", rule
    return "good", None


def create_session(pairs, systems, annotators, double_subset_size=100, seed=0,
                   session_id=None):
    """Build a session with seeded dispatch.

    ``pairs``: list of {id, source}. ``systems``: mapping system id ->
    candidate list aligned with pairs. ``annotators``: distinct ids.
    """
    if not pairs:
        raise EvalServiceError("empty_pairs", "a session needs at least one pair")
    if not systems:
        raise EvalServiceError("empty_systems", "a session needs at least one system")
    if not annotators:
        raise EvalServiceError("empty_annotators", "a session needs at least one annotator")
    if len(set(annotators)) != len(annotators):
        raise EvalServiceError("duplicate_annotators", "annotator ids must be distinct")
    pair_ids = [str(p["id"]) for p in pairs]
    if len(set(pair_ids)) != len(pair_ids):
        raise EvalServiceError("duplicate_pairs", "pair ids must be distinct")
    for sys_id, candidates in systems.items():
        if len(candidates) != len(pairs):
            raise EvalServiceError(
                "misaligned_candidates",
                f"system {sys_id!r} has {len(candidates)} candidates for {len(pairs)} pairs")
    if double_subset_size < 0 or double_subset_size > len(pairs):
        raise EvalServiceError(
            "bad_double_subset",
            f"double_subset_size must lie in [0, {len(pairs)}], got {double_subset_size}")
    if double_subset_size > 0 and len(annotators) < 2:
        raise EvalServiceError(
            "not_enough_annotators",
            "double annotation needs at least two annotators")

    rng = np.random.default_rng(seed)
    annotators = list(annotators)
    system_ids = sorted(systems.keys())
    session = Session(session_id=session_id or uuid.uuid4().hex,
                      seed=int(seed), annotators=annotators, systems=system_ids)

    double_pick = rng.choice(len(pairs), size=double_subset_size, replace=False)
    session.double_pairs = {pair_ids[i] for i in double_pick.tolist()}

    load = {a: 0 for a in annotators}
    order = {a: [] for a in annotators}
    pair_order = rng.permutation(len(pairs))
    for idx in pair_order.tolist():
        pair = pairs[idx]
        pid = pair_ids[idx]
        doubled = pid in session.double_pairs
        by_load = sorted(annotators, key=lambda a: (load[a], a))
        chosen = tuple(sorted(by_load[:2])) if doubled else (by_load[0],)
        sys_perm = rng.permutation(len(system_ids))
        task_ids = []
        for pos, j in enumerate(sys_perm.tolist()):
            sys_id = system_ids[j]
            # the suffix is the serving position, not the system index,
            # so task ids cannot be mapped back to systems
            task_id = f"{pid}::{pos}"
            session.tasks[task_id] = EvalTask(
                task_id=task_id,
                pair_id=pid,
                source=str(pair["source"]),
                candidate=str(systems[sys_id][idx]),
                system_id=sys_id,
                assignees=chosen,
                double=doubled,
            )
            task_ids.append(task_id)
        for a in chosen:
            order[a].extend(task_ids)
            load[a] += len(task_ids)
    session.serving_order = order
    return session


def next_task(session, annotator):
    """The annotator's next unanswered task, or None when done.

    Tasks for one source are adjacent in the serving order, so they are
    served consecutively; candidate order within a source is the seeded
    permutation chosen at dispatch.
    """
    if annotator not in session.serving_order:
        raise EvalServiceError("unknown_annotator",
                               f"annotator {annotator!r} is not part of this session",
                               http_status=404)
    for task_id in session.serving_order[annotator]:
        if (task_id, annotator) not in session.annotations:
            return session.tasks[task_id]
    return None


def task_payload(task, annotator):
    """What the annotation client sees: blinded, no system id, no reference."""
    return {
        "task_id": task.task_id,
        "pair_id": task.pair_id,
        "source": task.source,
        "candidate": task.candidate,
        "annotator": annotator,
        "rules": list(RULES),
    }


def submit_annotation(session, task_id, annotator, verdict, failing_rule=None,
                      timestamp=None):
    if task_id not in session.tasks:
        raise EvalServiceError("unknown_task", f"no task {task_id!r} in this session",
                               http_status=404)
    task = session.tasks[task_id]
    if annotator not in task.assignees:
        raise EvalServiceError("not_assigned",
                               f"task {task_id!r} is not assigned to {annotator!r}",
                               http_status=403)
    if (task_id, annotator) in session.annotations:
        raise EvalServiceError("duplicate_annotation",
                               f"{annotator!r} already answered task {task_id!r}",
                               http_status=409)
    verify_verdict(verdict, failing_rule)
    ann = Annotation(task_id=task_id, annotator=annotator, verdict=verdict,
                     failing_rule=failing_rule,
                     timestamp=time.time() if timestamp is None else float(timestamp))
    session.annotations[(task_id, annotator)] = ann
    return ann


def primary_annotator(task):
    return min(task.assignees)


def accuracy(session, system_id):
    """(n_good, n_answered, fraction) for one system.

    Double-annotated tasks count once, through the verdict of the
    primary annotator. Unanswered tasks are simply not counted, so the
    figure is well defined on partial sessions.
    """
    if system_id not in session.systems:
        raise EvalServiceError("unknown_system", f"no system {system_id!r} in this session",
                               http_status=404)
    n_good = 0
    n_answered = 0
    for task in session.tasks.values():
        if task.system_id != system_id:
            continue
        ann = session.annotations.get((task.task_id, primary_annotator(task)))
        if ann is None:
            continue
        n_answered += 1
        if ann.verdict == "good":
            n_good += 1
    fraction = (n_good / n_answered) if n_answered else None
    return n_good, n_answered, fraction


def percent_display(fraction):
    """One-decimal percent, truncated toward zero to match the reported tables."""
    if fraction is None:
        return None
    return math.floor(fraction * 1000.0) / 10.0


def session_stats(session):
    per_system = {}
    for sys_id in session.systems:
        n_good, n_answered, fraction = accuracy(session, sys_id)
        per_system[sys_id] = {
            "n_good": n_good,
            "n_answered": n_answered,
            "n_tasks": sum(1 for t in session.tasks.values() if t.system_id == sys_id),
            "accuracy": fraction,
            "accuracy_pct": percent_display(fraction),
        }
    n_done = len(session.annotations)
    total_needed = sum(len(t.assignees) for t in session.tasks.values())
    return {
        "session_id": session.session_id,
        "systems": per_system,
        "n_annotations": n_done,
        "n_expected": total_needed,
        "done": n_done == total_needed,
    }


@dataclass(frozen=True)
class AgreementReport:
    n_items: int
    percent_agreement: float | None
    kappa: float | None
    kappa_defined: bool


def agreement(session):
    """Percent agreement and Cohen's kappa over double-annotated tasks.

    For each fully double-annotated task the two verdicts are slotted by
    annotator id order (primary first). Kappa uses the slot marginals;
    when chance agreement is 1 kappa is undefined and reported as None.
    """
    first = []
    second = []
    for task in session.tasks.values():
        if not task.double:
            continue
        a, b = task.assignees
        ann_a = session.annotations.get((task.task_id, a))
        ann_b = session.annotations.get((task.task_id, b))
        if ann_a is None or ann_b is None:
            continue
        first.append(ann_a.verdict)
        second.append(ann_b.verdict)
    n = len(first)
    if n == 0:
        return AgreementReport(n_items=0, percent_agreement=None, kappa=None,
                               kappa_defined=False)
    p_observed = sum(1 for x, y in zip(first, second) if x == y) / n
    p_chance = 0.0
    for verdict in VERDICTS:
        p_chance += (first.count(verdict) / n) * (second.count(verdict) / n)
    if p_chance == 1.0:
        return AgreementReport(n_items=n, percent_agreement=p_observed, kappa=None,
                               kappa_defined=False)
    kappa = (p_observed - p_chance) / (1.0 - p_chance)
    return AgreementReport(n_items=n, percent_agreement=p_observed, kappa=kappa,
                           kappa_defined=True)


# ---------------------------------------------------------------------------
# store with append-only event log


class EvalStore:
    """Holds sessions; mutations are serialised and optionally logged."""

    def __init__(self, log_path=None):
        self.sessions = {}
        self.log_path = log_path
        self._lock = threading.Lock()
        if log_path:
            try:
                with open(log_path, encoding="utf-8") as fh:
                    for line in fh:
                        if line.strip():
                            self._apply(json.loads(line))
            except FileNotFoundError:
                pass

    def _append(self, event):
        if self.log_path:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(event, sort_keys=True, ensure_ascii=False) + "\n")

    def _apply(self, event):
        kind = event.get("type")
        if kind == "create_session":
            session = create_session(
                pairs=event["pairs"], systems=event["systems"],
                annotators=event["annotators"],
                double_subset_size=event["double_subset_size"],
                seed=event["seed"], session_id=event["session_id"])
            self.sessions[session.session_id] = session
        elif kind == "annotation":
            session = self.sessions[event["session_id"]]
            submit_annotation(session, event["task_id"], event["annotator"],
                              event["verdict"], event.get("failing_rule"),
                              timestamp=event["timestamp"])
        else:
            raise ValueError(f"unknown event type {kind!r} in log")

    def get(self, session_id):
        session = self.sessions.get(session_id)
        if session is None:
            raise EvalServiceError("unknown_session", f"no session {session_id!r}",
                                   http_status=404)
        return session

    def create(self, pairs, systems, annotators, double_subset_size=100, seed=0):
        with self._lock:
            session = create_session(pairs, systems, annotators,
                                     double_subset_size=double_subset_size, seed=seed)
            self.sessions[session.session_id] = session
            self._append({
                "type": "create_session",
                "session_id": session.session_id,
                "pairs": [{"id": str(p["id"]), "source": str(p["source"])} for p in pairs],
                "systems": {k: [str(c) for c in v] for k, v in systems.items()},
                "annotators": list(annotators),
                "double_subset_size": int(double_subset_size),
                "seed": int(seed),
            })
            return session

    def annotate(self, session_id, task_id, annotator, verdict, failing_rule=None):
        with self._lock:
            session = self.get(session_id)
            ann = submit_annotation(session, task_id, annotator, verdict, failing_rule)
            self._append({
                "type": "annotation",
                "session_id": session_id,
                "task_id": task_id,
                "annotator": annotator,
                "verdict": verdict,
                "failing_rule": failing_rule,
                "timestamp": ann.timestamp,
            })
            return ann
