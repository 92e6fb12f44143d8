import { describe, expect, it } from "vitest";

import type { SessionAtom } from "../src/types.js";
import { renderAtomCard, renderGauge, scoreBand } from "../src/view.js";

function atom(overrides: Partial<SessionAtom> = {}): SessionAtom {
  return {
    atom_id: "purpose.a1",
    field_id: "purpose",
    text: "The benchmark has 500 questions.",
    score: 0.12,
    flagged: true,
    status: "flagged",
    evidence: [
      { chunk_id: "src#0", text: "It has 500 questions in total.", source_id: "hub:org/ds" },
    ],
    decision: null,
    ...overrides,
  };
}

describe("scoreBand", () => {
  it("uses the documented color bands", () => {
    expect(scoreBand(0.1)).toBe("contradicted");
    expect(scoreBand(0.25)).toBe("uncertain");
    expect(scoreBand(0.5)).toBe("uncertain");
    expect(scoreBand(0.75)).toBe("uncertain");
    expect(scoreBand(0.76)).toBe("supported");
    expect(scoreBand(null)).toBe("unscored");
  });
});

describe("renderGauge", () => {
  it("shows the server score without recomputation", () => {
    const gauge = renderGauge(0.421);
    expect(gauge.querySelector(".gauge-label")?.textContent).toBe("0.421");
    expect((gauge.querySelector(".gauge-fill") as HTMLElement).style.width).toBe("42%");
  });

  it("handles unscored atoms", () => {
    const gauge = renderGauge(null);
    expect(gauge.querySelector(".gauge-label")?.textContent).toBe("unscored");
  });
});

describe("renderAtomCard", () => {
  const noop = { onAccept() {}, onRegenerate() {}, onEdit() {} };

  it("renders statement, evidence source, and shared-token marks", () => {
    const card = renderAtomCard(atom(), noop, null);
    expect(card.querySelector(".atom-text")?.textContent).toContain("500 questions");
    expect(card.querySelector(".evidence-source")?.textContent).toBe("hub:org/ds");
    const marks = [...card.querySelectorAll("mark")].map((m) => m.textContent);
    expect(marks.join(" ")).toContain("500 questions");
  });

  it("shows decision controls only for undecided atoms", () => {
    const open = renderAtomCard(atom(), noop, null);
    expect(open.querySelector(".btn-accept")).not.toBeNull();
    const done = renderAtomCard(
      atom({ decision: { action: "accept", decided_at: "t" } }),
      noop,
      null,
    );
    expect(done.querySelector(".btn-accept")).toBeNull();
    expect(done.querySelector(".decision-action")?.textContent).toBe("accept");
  });

  it("surfaces inline errors on the form", () => {
    const card = renderAtomCard(atom(), noop, "action 'edit' requires non-empty edited_text");
    expect(card.querySelector(".inline-error")?.textContent).toContain("edited_text");
  });

  it("reports empty evidence", () => {
    const card = renderAtomCard(atom({ evidence: [] }), noop, null);
    expect(card.querySelector(".evidence-empty")).not.toBeNull();
  });
});
