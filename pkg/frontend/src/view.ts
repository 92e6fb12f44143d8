// Pure DOM builders. Everything here projects the last API response into
// elements; no score math happens client-side (band thresholds are
// presentation, applied to the server-reported score).

import { highlightShared } from "./highlight.js";
import type { SessionAtom } from "./types.js";

export type ScoreBand = "contradicted" | "uncertain" | "supported" | "unscored";

export function scoreBand(score: number | null): ScoreBand {
  if (score === null) return "unscored";
  if (score < 0.25) return "contradicted";
  if (score > 0.75) return "supported";
  return "uncertain";
}

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

export function renderGauge(score: number | null): HTMLElement {
  const band = scoreBand(score);
  const gauge = el("div", `gauge gauge-${band}`);
  const fill = el("div", "gauge-fill");
  fill.style.width = score === null ? "0%" : `${Math.round(score * 100)}%`;
  gauge.appendChild(fill);
  const label = el(
    "span",
    "gauge-label",
    score === null ? "unscored" : score.toFixed(3),
  );
  gauge.appendChild(label);
  gauge.title = band;
  return gauge;
}

export function renderEvidence(atom: SessionAtom): HTMLElement {
  const wrap = el("div", "evidence");
  if (atom.evidence.length === 0) {
    wrap.appendChild(el("p", "evidence-empty", "No evidence was retrieved for this claim."));
    return wrap;
  }
  for (const snippet of atom.evidence) {
    const item = el("div", "evidence-item");
    item.appendChild(el("div", "evidence-source", snippet.source_id));
    const body = el("blockquote", "evidence-text");
    for (const segment of highlightShared(snippet.text, atom.text)) {
      if (segment.shared) {
        body.appendChild(el("mark", "", segment.text));
      } else {
        body.appendChild(document.createTextNode(segment.text));
      }
    }
    item.appendChild(body);
    wrap.appendChild(item);
  }
  return wrap;
}

export interface AtomHandlers {
  onAccept(atomId: string): void;
  onRegenerate(atomId: string): void;
  onEdit(atomId: string, editedText: string): void;
}

export function renderAtomCard(
  atom: SessionAtom,
  handlers: AtomHandlers,
  inlineError: string | null,
): HTMLElement {
  const card = el("article", `atom band-${scoreBand(atom.score)}`);
  card.dataset.atomId = atom.atom_id;

  const head = el("header", "atom-head");
  head.appendChild(el("span", "atom-field", atom.field_id));
  head.appendChild(renderGauge(atom.score));
  card.appendChild(head);

  card.appendChild(el("p", "atom-text", atom.text));
  card.appendChild(renderEvidence(atom));

  if (atom.decision) {
    const done = el("div", "decision-done");
    done.appendChild(el("span", "decision-action", atom.decision.action));
    if (atom.decision.edited_text) {
      done.appendChild(el("span", "decision-edit", atom.decision.edited_text));
    }
    card.appendChild(done);
    return card;
  }

  const form = el("div", "decision-form");
  const accept = el("button", "btn btn-accept", "Accept");
  accept.addEventListener("click", () => handlers.onAccept(atom.atom_id));
  form.appendChild(accept);

  const regenerate = el("button", "btn btn-regenerate", "Regenerate");
  regenerate.addEventListener("click", () => handlers.onRegenerate(atom.atom_id));
  form.appendChild(regenerate);

  const editWrap = el("div", "edit-wrap");
  const textarea = el("textarea", "edit-text");
  textarea.placeholder = "Corrected statement…";
  editWrap.appendChild(textarea);
  const editButton = el("button", "btn btn-edit", "Save edit");
  editButton.addEventListener("click", () =>
    handlers.onEdit(atom.atom_id, textarea.value),
  );
  editWrap.appendChild(editButton);
  form.appendChild(editWrap);

  if (inlineError) {
    form.appendChild(el("p", "inline-error", inlineError));
  }
  card.appendChild(form);
  return card;
}
