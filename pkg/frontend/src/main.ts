/**
 * Browser entry point. Session parameters come from the query string;
 * without them a small setup form is shown, which reloads the page with
 * the parameters filled in.
 *
 *   index.html?api=http://localhost:8000&session=<id>&annotator=ann1
 *   optional: &role=owner to see accuracy and agreement panels
 */

import { EvalClient } from "./api.js";
import { AnnotationApp } from "./app.js";
import { AnnotationView } from "./dom.js";

function setupForm(root: HTMLElement, params: URLSearchParams): void {
  root.textContent = "";
  const doc = root.ownerDocument;
  const h1 = doc.createElement("h1");
  h1.textContent = "Annotation session";
  root.appendChild(h1);

  const form = doc.createElement("form");
  form.method = "get";
  const field = (name: string, label: string, value: string) => {
    const wrap = doc.createElement("p");
    const lab = doc.createElement("label");
    lab.textContent = label + " ";
    const input = doc.createElement("input");
    input.name = name;
    input.value = value;
    input.size = 40;
    lab.appendChild(input);
    wrap.appendChild(lab);
    form.appendChild(wrap);
  };
  field("api", "service url", params.get("api") ?? "http://localhost:8000");
  field("session", "session id", params.get("session") ?? "");
  field("annotator", "annotator id", params.get("annotator") ?? "");
  field("role", "role (annotator or owner)", params.get("role") ?? "annotator");
  const go = doc.createElement("button");
  go.type = "submit";
  go.textContent = "start";
  form.appendChild(go);
  root.appendChild(form);
}

function boot(): void {
  const root = document.getElementById("app");
  if (root === null) throw new Error("missing #app container");

  const params = new URLSearchParams(window.location.search);
  const api = params.get("api");
  const session = params.get("session");
  const annotator = params.get("annotator");
  if (!api || !session || !annotator) {
    setupForm(root, params);
    return;
  }

  const client = new EvalClient(api);
  const view = new AnnotationView(root);
  const app = new AnnotationApp(
    {
      sessionId: session,
      annotator,
      role: params.get("role") === "owner" ? "owner" : "annotator",
      pollMs: 4000,
    },
    client,
    view,
  );
  window.addEventListener("online", () => void app.retryNow());
  void app.start();
}

boot();
