/** Review flow bootstrap: list pending inferences, step through hops,
 * submit once, retrain, and show the before/after link-prediction delta. */

import { ApiClient, ApiError, type ExplanationDetail, type JobStatus } from "./api.js";
import { ReviewState } from "./state.js";
import {
  renderErrorBanner,
  renderExplanation,
  renderInferenceList,
  renderJobPanel,
  renderProgress,
  renderSubmitButton,
} from "./view.js";

const api = new ApiClient("");
const state = new ReviewState();
let job: JobStatus | null = null;
let jobError: string | null = null;

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function redraw(): void {
  const summaries = state.explanations.map((exp) => ({
    explanation_id: exp.id,
    query: exp.query,
    predicted: exp.predicted,
    text: exp.text,
  }));
  const activeExp: ExplanationDetail | undefined = state.explanations[state.active];
  el("list").innerHTML = renderInferenceList(summaries, activeExp ? activeExp.id : null);
  el("detail").innerHTML = activeExp ? renderExplanation(activeExp, state) : "";
  const { selected, total } = state.progress();
  el("progress").innerHTML = renderProgress(selected, total);
  el("actions").innerHTML = renderSubmitButton(state.canSubmit(), state.submitted);
  el("job").innerHTML = renderJobPanel(job, jobError);
  bind();
}

function bind(): void {
  for (const li of document.querySelectorAll<HTMLElement>("li.inference")) {
    li.addEventListener("click", () => {
      const id = li.dataset.explanation;
      state.active = state.explanations.findIndex((e) => e.id === id);
      redraw();
    });
  }
  for (const input of document.querySelectorAll<HTMLInputElement>(".hop input[type=radio]")) {
    input.addEventListener("change", () => {
      const hop = input.closest<HTMLElement>(".hop");
      const article = input.closest<HTMLElement>(".explanation");
      if (!hop || !article) return;
      state.select(article.dataset.explanation!, Number(hop.dataset.hop),
                   Number(input.dataset.option));
      redraw();
    });
  }
  const submit = document.getElementById("submit");
  if (submit) submit.addEventListener("click", () => void submitAll());
  const retry = document.getElementById("retry");
  if (retry) retry.addEventListener("click", () => void bootstrap());
}

async function submitAll(): Promise<void> {
  const payloads = state.takeSubmission();
  if (payloads.length === 0) return;
  redraw();
  try {
    for (const payload of payloads) {
      await api.postCorrection(payload);
    }
    await api.submitSession(state.session!.session_id);
    const { job_id } = await api.retrain();
    job = { job_id, status: "queued", before: null, after: null, error: null };
    redraw();
    job = await api.pollJob(job_id);
    jobError = null;
  } catch (e) {
    if (e instanceof ApiError && e.status === 409) {
      jobError = "retrain in progress — try again when the current job finishes";
    } else {
      jobError = e instanceof Error ? e.message : String(e);
    }
  }
  redraw();
}

export async function bootstrap(): Promise<void> {
  el("banner").innerHTML = "";
  try {
    const session = await api.createSession();
    const details: ExplanationDetail[] = [];
    for (const id of session.explanation_ids) {
      details.push(await api.getExplanation(id));
    }
    state.start(session, details);
    job = null;
    jobError = null;
    redraw();
  } catch (e) {
    const message = e instanceof Error ? e.message : String(e);
    el("banner").innerHTML = renderErrorBanner(`could not reach the review service: ${message}`);
    const retry = document.getElementById("retry");
    if (retry) retry.addEventListener("click", () => void bootstrap());
  }
}

if (typeof document !== "undefined" && document.getElementById("list")) {
  void bootstrap();
}
