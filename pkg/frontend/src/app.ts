// App controller: owns the state, talks to the API, re-renders the whole
// view on every change (the session is small). Decisions apply
// optimistically and roll back if the server rejects them.

import { RequestFailed, ReviewApi } from "./api.js";
import type { Decision, Session, SessionAtom } from "./types.js";
import { el, renderAtomCard } from "./view.js";

export interface AppOptions {
  api?: ReviewApi;
  /** Session refresh interval in ms; 0 disables polling (tests). */
  pollMs?: number;
}

interface State {
  session: Session | null;
  blockingError: string | null;
  fieldFilter: string; // "" = all fields
  pane: "flagged" | "resolved";
  inlineErrors: Map<string, string>;
  finalized: boolean;
  finalizeError: string | null;
}

export function undecided(session: Session): SessionAtom[] {
  return session.atoms.filter((a) => !a.decision);
}

export class ReviewApp {
  readonly api: ReviewApi;
  private readonly root: HTMLElement;
  private readonly pollMs: number;
  private timer: ReturnType<typeof setInterval> | null = null;
  private state: State = {
    session: null,
    blockingError: null,
    fieldFilter: "",
    pane: "flagged",
    inlineErrors: new Map(),
    finalized: false,
    finalizeError: null,
  };

  constructor(root: HTMLElement, options: AppOptions = {}) {
    this.root = root;
    this.api = options.api ?? new ReviewApi();
    this.pollMs = options.pollMs ?? 5000;
  }

  async start(): Promise<void> {
    await this.loadSession();
    if (this.pollMs > 0) {
      this.timer = setInterval(() => void this.loadSession(), this.pollMs);
    }
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  async loadSession(): Promise<void> {
    try {
      const session = await this.api.getSession();
      this.state.session = session;
      this.state.blockingError = null;
    } catch (err) {
      this.state.blockingError =
        err instanceof Error ? err.message : "review service unreachable";
    }
    this.render();
  }

  // -- decisions ----------------------------------------------------------

  private findAtom(atomId: string): SessionAtom | undefined {
    return this.state.session?.atoms.find((a) => a.atom_id === atomId);
  }

  async accept(atomId: string): Promise<void> {
    await this.submit(atomId, { action: "accept", decided_at: "" }, () =>
      this.api.submitDecision(atomId, "accept"),
    );
  }

  async regenerate(atomId: string): Promise<void> {
    await this.submit(atomId, { action: "regenerate", decided_at: "" }, () =>
      this.api.submitDecision(atomId, "regenerate"),
    );
  }

  async edit(atomId: string, editedText: string): Promise<void> {
    if (!editedText.trim()) {
      // client-side guard: edit requires non-empty text
      this.state.inlineErrors.set(atomId, "Edited text must not be empty.");
      this.render();
      return;
    }
    await this.submit(
      atomId,
      { action: "edit", edited_text: editedText, decided_at: "" },
      () => this.api.submitDecision(atomId, "edit", editedText),
    );
  }

  private async submit(
    atomId: string,
    optimistic: Decision,
    call: () => Promise<SessionAtom>,
  ): Promise<void> {
    const atom = this.findAtom(atomId);
    if (!atom || atom.decision) return;
    const previous = atom.decision;
    // optimistic: move the atom to the resolved pane immediately
    atom.decision = optimistic;
    this.state.inlineErrors.delete(atomId);
    this.render();
    try {
      const updated = await call();
      Object.assign(atom, updated);
    } catch (err) {
      atom.decision = previous; // roll back
      const message =
        err instanceof RequestFailed ? err.message : "request failed; try again";
      this.state.inlineErrors.set(atomId, message);
    }
    this.render();
  }

  async finalize(): Promise<void> {
    if (!this.state.session || undecided(this.state.session).length > 0) return;
    try {
      await this.api.finalize();
      this.state.finalized = true;
      this.state.finalizeError = null;
    } catch (err) {
      this.state.finalizeError =
        err instanceof Error ? err.message : "finalize failed";
    }
    this.render();
  }

  // -- rendering ----------------------------------------------------------

  render(): void {
    const { session, blockingError } = this.state;
    this.root.textContent = "";

    if (blockingError) {
      const banner = el("div", "banner banner-error");
      banner.appendChild(el("p", "", `Cannot reach the review service: ${blockingError}`));
      const retry = el("button", "btn btn-retry", "Retry");
      retry.addEventListener("click", () => void this.loadSession());
      banner.appendChild(retry);
      this.root.appendChild(banner);
      return;
    }
    if (!session) {
      this.root.appendChild(el("p", "loading", "Loading session…"));
      return;
    }
    if (this.state.finalized) {
      const done = el("div", "banner banner-done");
      done.appendChild(el("h2", "", "Card finalized"));
      done.appendChild(el("p", "", "All decisions were applied to the card."));
      this.root.appendChild(done);
      return;
    }

    this.root.appendChild(this.renderToolbar(session));

    const pending = undecided(session);
    const shown = (this.state.pane === "flagged" ? pending : session.atoms.filter((a) => a.decision))
      .filter((a) => !this.state.fieldFilter || a.field_id === this.state.fieldFilter);

    const list = el("section", `atom-list pane-${this.state.pane}`);
    if (this.state.pane === "flagged" && pending.length === 0) {
      const empty = el("div", "empty-state");
      empty.appendChild(el("p", "", "Nothing to review — finalize the card."));
      list.appendChild(empty);
    }
    for (const atom of shown) {
      // server order is score-ascending; keep it
      list.appendChild(
        renderAtomCard(
          atom,
          {
            onAccept: (id) => void this.accept(id),
            onRegenerate: (id) => void this.regenerate(id),
            onEdit: (id, text) => void this.edit(id, text),
          },
          this.state.inlineErrors.get(atom.atom_id) ?? null,
        ),
      );
    }
    this.root.appendChild(list);
    this.root.appendChild(this.renderFooter(pending.length));
  }

  private renderToolbar(session: Session): HTMLElement {
    const bar = el("nav", "toolbar");

    for (const pane of ["flagged", "resolved"] as const) {
      const count =
        pane === "flagged"
          ? undecided(session).length
          : session.atoms.length - undecided(session).length;
      const tab = el(
        "button",
        `tab tab-${pane}${this.state.pane === pane ? " tab-active" : ""}`,
        `${pane} (${count})`,
      );
      tab.addEventListener("click", () => {
        this.state.pane = pane;
        this.render();
      });
      bar.appendChild(tab);
    }

    const fields = [...new Set(session.atoms.map((a) => a.field_id))];
    const select = el("select", "field-filter");
    const all = el("option", "", "all fields");
    all.value = "";
    select.appendChild(all);
    for (const field of fields) {
      const option = el("option", "", field);
      option.value = field;
      select.appendChild(option);
    }
    select.value = this.state.fieldFilter;
    select.addEventListener("change", () => {
      this.state.fieldFilter = select.value;
      this.render();
    });
    bar.appendChild(select);
    return bar;
  }

  private renderFooter(undecidedCount: number): HTMLElement {
    const footer = el("footer", "footer");
    const finalize = el("button", "btn btn-finalize");
    finalize.textContent =
      undecidedCount > 0 ? `Finalize (${undecidedCount} undecided)` : "Finalize";
    finalize.disabled = undecidedCount > 0;
    finalize.addEventListener("click", () => void this.finalize());
    footer.appendChild(finalize);
    if (this.state.finalizeError) {
      footer.appendChild(el("p", "inline-error", this.state.finalizeError));
    }
    return footer;
  }
}
