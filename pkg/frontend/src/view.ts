/** Pure HTML renderers; main.ts wires events after injection. */

import type { ExplanationDetail, InferenceSummary, JobStatus, TripleDoc } from "./api.js";
import type { ReviewState } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function tripleText(t: TripleDoc): string {
  return `(${t.head}, ${t.relation}, ${t.tail})`;
}

export function renderInferenceList(items: InferenceSummary[], activeId: string | null): string {
  if (items.length === 0) {
    return `<p class="empty">No pending inferences to review.</p>`;
  }
  const rows = items
    .map((it) => {
      const cls = it.explanation_id === activeId ? "inference active" : "inference";
      return `<li class="${cls}" data-explanation="${escapeHtml(it.explanation_id)}">
        <code>${escapeHtml(tripleText(it.query))}</code>
        <span class="predicted">${it.predicted ? "believed true" : "believed false"}</span>
      </li>`;
    })
    .join("");
  return `<ul class="inference-list">${rows}</ul>`;
}

export function renderOption(value: TripleDoc | null, name: string, index: number,
                             checked: boolean): string {
  const label = value === null ? "None of the above" : tripleText(value);
  return `<label class="option">
    <input type="radio" name="${escapeHtml(name)}" value="${index}" data-option="${index}"
      ${checked ? "checked" : ""}/>
    <span>${escapeHtml(label)}</span>
  </label>`;
}

export function renderExplanation(detail: ExplanationDetail, state: ReviewState): string {
  const selections = state.selectionsFor(detail.id);
  const hops = detail.review_hops
    .map((hop, i) => {
      const group = `${detail.id}-hop-${i}`;
      const options = hop.options
        .map((opt, j) => renderOption(opt, group, j, selections[i] === j))
        .join("");
      const hint = selections[i] === null
        ? `<span class="hint">select the most correct fact</span>`
        : "";
      return `<fieldset class="hop" data-hop="${i}">
        <legend>Supporting fact ${i + 1}: <code>${escapeHtml(tripleText(hop))}</code> ${hint}</legend>
        ${options}
      </fieldset>`;
    })
    .join("");
  return `<article class="explanation" data-explanation="${escapeHtml(detail.id)}">
    <p class="text">${escapeHtml(detail.text)}</p>
    ${hops}
  </article>`;
}

export function renderProgress(selected: number, total: number): string {
  return `<span class="progress">${selected} / ${total} facts reviewed</span>`;
}

export function renderSubmitButton(canSubmit: boolean, submitted: boolean): string {
  if (submitted) {
    return `<button id="submit" disabled>Submitted</button>`;
  }
  const attr = canSubmit ? "" : "disabled";
  const hint = canSubmit ? "" : `<span class="hint">every fact needs a selection</span>`;
  return `<button id="submit" ${attr}>Submit corrections &amp; retrain</button>${hint}`;
}

export function renderJobPanel(job: JobStatus | null, error: string | null): string {
  if (error) {
    return `<div class="panel error">Retrain failed: ${escapeHtml(error)}</div>`;
  }
  if (job === null) {
    return "";
  }
  if (job.status !== "done") {
    return `<div class="panel pending">Retraining… (${escapeHtml(job.status)})</div>`;
  }
  const before = job.before?.mrr ?? 0;
  const after = job.after?.mrr ?? 0;
  const delta = before > 0 ? (((after - before) / before) * 100).toFixed(1) : "n/a";
  const cls = after > before ? "improved" : "unimproved";
  return `<div class="panel done ${cls}">
    <strong>Retrain complete.</strong>
    MRR before: <code>${before.toFixed(4)}</code> →
    after: <code>${after.toFixed(4)}</code>
    (<span class="delta">${delta}% relative</span>)
  </div>`;
}

export function renderErrorBanner(message: string): string {
  return `<div class="banner error">
    <span>${escapeHtml(message)}</span>
    <button id="retry">Retry</button>
  </div>`;
}
