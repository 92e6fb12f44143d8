import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ReviewApp } from "../src/app.js";
import type { Session } from "../src/types.js";
import { fixtureSession } from "./fixtures.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

/** In-memory stand-in for the review service behind global fetch. */
function mockService(session: Session) {
  const calls: Array<{ url: string; body: unknown }> = [];
  vi.stubGlobal(
    "fetch",
    vi.fn(async (input: RequestInfo | URL, init?: RequestInit) => {
      const url = String(input);
      const body = init?.body ? JSON.parse(String(init.body)) : null;
      calls.push({ url, body });

      if (url.endsWith("/api/session")) {
        return jsonResponse({ ok: true, data: session });
      }
      const decision = url.match(/\/api\/atoms\/([^/]+)\/decision$/);
      if (decision && init?.method === "POST") {
        const atomId = decodeURIComponent(decision[1]!);
        const atom = session.atoms.find((a) => a.atom_id === atomId);
        if (!atom) {
          return jsonResponse(
            { ok: false, error: { code: "not_found", message: "unknown atom" } },
            404,
          );
        }
        const payload = body as { action: string; edited_text?: string };
        if (payload.action === "edit" && !payload.edited_text?.trim()) {
          return jsonResponse(
            {
              ok: false,
              error: { code: "bad_edit", message: "action 'edit' requires non-empty edited_text" },
            },
            422,
          );
        }
        atom.decision = {
          action: payload.action as never,
          decided_at: "2024-01-01T00:00:00+00:00",
          ...(payload.edited_text ? { edited_text: payload.edited_text } : {}),
        };
        atom.status = "resolved";
        return jsonResponse({ ok: true, data: atom });
      }
      if (url.endsWith("/api/finalize") && init?.method === "POST") {
        const undecided = session.atoms.filter((a) => !a.decision);
        if (undecided.length > 0) {
          return jsonResponse(
            { ok: false, error: { code: "undecided_atoms", message: "undecided atoms" } },
            409,
          );
        }
        return jsonResponse({
          ok: true,
          data: { card_path: "ws/card_final.json", benchmark_id: "cards.demo", fields: {} },
        });
      }
      return jsonResponse({ ok: false, error: { code: "not_found", message: url } }, 404);
    }),
  );
  return calls;
}

async function flush(times = 4): Promise<void> {
  for (let i = 0; i < times; i += 1) {
    await new Promise((resolve) => setTimeout(resolve, 0));
  }
}

let root: HTMLElement;

beforeEach(() => {
  document.body.innerHTML = '<div id="app"></div>';
  root = document.getElementById("app")!;
});

afterEach(() => {
  vi.unstubAllGlobals();
});

async function startApp(session: Session = fixtureSession()): Promise<ReviewApp> {
  mockService(session);
  const app = new ReviewApp(root, { pollMs: 0 });
  await app.start();
  return app;
}

describe("load_session", () => {
  it("lists flagged atoms lowest score first", async () => {
    await startApp();
    const ids = [...root.querySelectorAll(".atom")].map(
      (n) => (n as HTMLElement).dataset.atomId,
    );
    expect(ids).toEqual(["methodology.a2", "dataset.a3", "risks.a2"]);
    const scores = [...root.querySelectorAll(".gauge-label")].map((n) => n.textContent);
    expect(scores).toEqual(["0.001", "0.410", "0.500"]);
  });

  it("shows the finalize empty state when nothing is flagged", async () => {
    const session = fixtureSession();
    for (const atom of session.atoms) {
      atom.decision = { action: "accept", decided_at: "t" };
    }
    await startApp(session);
    expect(root.querySelector(".empty-state")?.textContent).toContain(
      "Nothing to review — finalize",
    );
    const finalize = root.querySelector(".btn-finalize") as HTMLButtonElement;
    expect(finalize.disabled).toBe(false);
  });

  it("filters atoms by field", async () => {
    const app = await startApp();
    const select = root.querySelector(".field-filter") as HTMLSelectElement;
    select.value = "risks";
    select.dispatchEvent(new Event("change"));
    await flush();
    const ids = [...root.querySelectorAll(".atom")].map(
      (n) => (n as HTMLElement).dataset.atomId,
    );
    expect(ids).toEqual(["risks.a2"]);
    app.stop();
  });

  it("shows a blocking banner with retry when the service is down", async () => {
    vi.stubGlobal("fetch", vi.fn(async () => {
      throw new TypeError("fetch failed");
    }));
    const app = new ReviewApp(root, { pollMs: 0 });
    await app.start();
    expect(root.querySelector(".banner-error")).not.toBeNull();
    expect(root.querySelector(".btn-retry")).not.toBeNull();
  });
});

describe("submit_decision", () => {
  it("accept moves the atom to the resolved pane", async () => {
    await startApp();
    (root.querySelector('[data-atom-id="methodology.a2"] .btn-accept') as HTMLButtonElement).click();
    await flush();
    const flaggedIds = [...root.querySelectorAll(".atom")].map(
      (n) => (n as HTMLElement).dataset.atomId,
    );
    expect(flaggedIds).toEqual(["dataset.a3", "risks.a2"]);

    (root.querySelector(".tab-resolved") as HTMLButtonElement).click();
    await flush();
    const resolvedIds = [...root.querySelectorAll(".atom")].map(
      (n) => (n as HTMLElement).dataset.atomId,
    );
    expect(resolvedIds).toEqual(["methodology.a2"]);
  });

  it("blocks empty edits client-side without calling the server", async () => {
    const session = fixtureSession();
    const calls = mockService(session);
    const app = new ReviewApp(root, { pollMs: 0 });
    await app.start();
    const before = calls.length;

    const card = root.querySelector('[data-atom-id="methodology.a2"]')!;
    (card.querySelector(".edit-text") as HTMLTextAreaElement).value = "   ";
    (card.querySelector(".btn-edit") as HTMLButtonElement).click();
    await flush();

    expect(calls.length).toBe(before); // no request went out
    expect(
      root.querySelector('[data-atom-id="methodology.a2"] .inline-error')?.textContent,
    ).toContain("must not be empty");
  });

  it("surfaces a server 422 inline and keeps the atom flagged", async () => {
    const session = fixtureSession();
    vi.stubGlobal(
      "fetch",
      vi.fn(async (input: RequestInfo | URL, init?: RequestInit) => {
        const url = String(input);
        if (url.endsWith("/api/session")) {
          return jsonResponse({ ok: true, data: session });
        }
        if (init?.method === "POST") {
          return jsonResponse(
            { ok: false, error: { code: "bad_edit", message: "rejected by server" } },
            422,
          );
        }
        return jsonResponse({ ok: false, error: { code: "not_found", message: url } }, 404);
      }),
    );
    const app = new ReviewApp(root, { pollMs: 0 });
    await app.start();

    const card = root.querySelector('[data-atom-id="dataset.a3"]')!;
    (card.querySelector(".edit-text") as HTMLTextAreaElement).value = "Corrected.";
    (card.querySelector(".btn-edit") as HTMLButtonElement).click();
    await flush();

    // rolled back into the flagged pane with the error shown inline
    const ids = [...root.querySelectorAll(".atom")].map(
      (n) => (n as HTMLElement).dataset.atomId,
    );
    expect(ids).toContain("dataset.a3");
    expect(
      root.querySelector('[data-atom-id="dataset.a3"] .inline-error')?.textContent,
    ).toContain("rejected by server");
  });
});

describe("finalize", () => {
  it("is disabled with the undecided count until all atoms are decided", async () => {
    await startApp();
    let finalize = root.querySelector(".btn-finalize") as HTMLButtonElement;
    expect(finalize.disabled).toBe(true);
    expect(finalize.textContent).toContain("3 undecided");

    for (const atomId of ["methodology.a2", "dataset.a3", "risks.a2"]) {
      (root.querySelector(`[data-atom-id="${atomId}"] .btn-accept`) as HTMLButtonElement).click();
      await flush();
    }
    finalize = root.querySelector(".btn-finalize") as HTMLButtonElement;
    expect(finalize.disabled).toBe(false);

    finalize.click();
    await flush();
    expect(root.querySelector(".banner-done")?.textContent).toContain("Card finalized");
  });
});
