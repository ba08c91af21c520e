"""HTTP surface of the annotation service.

Thin FastAPI wiring over the session logic: all behaviour lives in
``evalservice``. Errors surface as JSON bodies with a machine-readable
``code`` and ``message``.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import evalservice as ev


class CreateSessionRequest(BaseModel):
    pairs: list[dict]
    systems: dict[str, list[str]]
    annotators: list[str]
    double_subset_size: int = 100
    seed: int = 0


class AnnotationRequest(BaseModel):
    task_id: str
    annotator: str
    verdict: str
    failing_rule: str | None = Field(default=None)


def create_app(store=None):
    app = FastAPI(title="softsum annotation service")
    app.state.store = store if store is not None else ev.EvalStore()
    # the annotation UI is served as a static page from a different origin
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["GET", "POST"], allow_headers=["*"])

    @app.exception_handler(ev.EvalServiceError)
    async def handle_domain_error(request: Request, err: ev.EvalServiceError):
        return JSONResponse(status_code=err.http_status, content=err.payload())

    @app.post("/sessions")
    def create_session(body: CreateSessionRequest):
        session = app.state.store.create(
            pairs=body.pairs, systems=body.systems, annotators=body.annotators,
            double_subset_size=body.double_subset_size, seed=body.seed)
        return {
            "session_id": session.session_id,
            "n_tasks": len(session.tasks),
            "n_pairs": len({t.pair_id for t in session.tasks.values()}),
            "n_double_pairs": len(session.double_pairs),
            "annotators": session.annotators,
        }

    @app.get("/sessions/{session_id}/next")
    def get_next(session_id: str, annotator: str):
        session = app.state.store.get(session_id)
        task = ev.next_task(session, annotator)
        if task is None:
            return {"done": True, "task": None}
        return {"done": False, "task": ev.task_payload(task, annotator)}

    @app.post("/sessions/{session_id}/annotations")
    def post_annotation(session_id: str, body: AnnotationRequest):
        ann = app.state.store.annotate(session_id, body.task_id, body.annotator,
                                       body.verdict, body.failing_rule)
        return {"accepted": True, "task_id": ann.task_id, "annotator": ann.annotator}

    @app.get("/sessions/{session_id}/stats")
    def get_stats(session_id: str):
        session = app.state.store.get(session_id)
        return ev.session_stats(session)

    @app.get("/sessions/{session_id}/agreement")
    def get_agreement(session_id: str):
        session = app.state.store.get(session_id)
        report = ev.agreement(session)
        return {
            "n_items": report.n_items,
            "percent_agreement": report.percent_agreement,
            "kappa": report.kappa,
            "kappa_defined": report.kappa_defined,
        }

    return app


def run_server(host="127.0.0.1", port=8000, log_path=None):
    import uvicorn

    app = create_app(ev.EvalStore(log_path=log_path))
    uvicorn.run(app, host=host, port=port, log_level="warning")
