// In-memory review service speaking the exact HTTP contract of the real
// one (envelope, validation rules, finalize semantics), so UI-driven and
// fetch-driven runs can be compared end to end.

import { createServer, type Server } from "node:http";
import type { AddressInfo } from "node:net";

import type { Session, SessionAtom } from "../src/types.js";

interface FieldState {
  text: string;
  status: string;
  revision: number;
}

export interface ContractServer {
  baseUrl: string;
  session: Session;
  card: Record<string, FieldState>;
  finalizedCard: Record<string, FieldState> | null;
  close(): Promise<void>;
}

const CORRECTIONS_START = "<!-- annotator corrections:start -->";
const CORRECTIONS_END = "<!-- annotator corrections:end -->";

function spliceEdit(text: string, oldClaim: string, newClaim: string): string {
  const occurrences = text.split(oldClaim).length - 1;
  if (oldClaim && occurrences === 1) {
    return text.replace(oldClaim, newClaim);
  }
  return `${text.trimEnd()}\n\n${CORRECTIONS_START}\n- ${newClaim}\n${CORRECTIONS_END}`;
}

/** Apply all decisions to the card the way the real service does. */
function applyDecisions(
  session: Session,
  card: Record<string, FieldState>,
): Record<string, FieldState> {
  const result: Record<string, FieldState> = JSON.parse(JSON.stringify(card));
  const byField = new Map<string, SessionAtom[]>();
  for (const atom of session.atoms) {
    const list = byField.get(atom.field_id) ?? [];
    list.push(atom);
    byField.set(atom.field_id, list);
  }
  for (const [fieldId, atoms] of byField) {
    const field = result[fieldId];
    if (!field) continue;
    let modified = false;
    if (atoms.some((a) => a.decision?.action === "regenerate")) {
      field.text = `[regenerated] ${fieldId}`;
      field.status = "draft";
      field.revision += 1;
      modified = true;
    }
    const edits = atoms.filter((a) => a.decision?.action === "edit");
    if (edits.length > 0) {
      for (const atom of edits) {
        field.text = spliceEdit(field.text, atom.text, atom.decision!.edited_text!);
      }
      field.status = "human_edited";
      if (!modified) field.revision += 1;
      modified = true;
    }
    if (!modified) {
      field.status = "validated";
    }
    for (const atom of atoms) atom.status = "resolved";
  }
  return result;
}

export async function startContractServer(
  session: Session,
  card: Record<string, FieldState>,
): Promise<ContractServer> {
  const state = {
    session: JSON.parse(JSON.stringify(session)) as Session,
    card: JSON.parse(JSON.stringify(card)) as Record<string, FieldState>,
    finalizedCard: null as Record<string, FieldState> | null,
    decisionCounter: 0,
  };

  const server: Server = createServer((req, res) => {
    const chunks: Buffer[] = [];
    req.on("data", (c) => chunks.push(c as Buffer));
    req.on("end", () => {
      const send = (status: number, body: unknown) => {
        res.writeHead(status, { "Content-Type": "application/json" });
        res.end(JSON.stringify(body));
      };
      const url = req.url ?? "";

      if (req.method === "GET" && url === "/api/session") {
        return send(200, { ok: true, data: state.session });
      }

      const decision = url.match(/^\/api\/atoms\/([^/]+)\/decision$/);
      if (req.method === "POST" && decision) {
        const atomId = decodeURIComponent(decision[1]!);
        const atom = state.session.atoms.find((a) => a.atom_id === atomId);
        if (!atom) {
          return send(404, { ok: false, error: { code: "not_found", message: atomId } });
        }
        let payload: { action?: string; edited_text?: string };
        try {
          payload = JSON.parse(Buffer.concat(chunks).toString() || "{}");
        } catch {
          return send(422, { ok: false, error: { code: "bad_request", message: "not JSON" } });
        }
        if (!["accept", "edit", "regenerate"].includes(payload.action ?? "")) {
          return send(422, { ok: false, error: { code: "bad_action", message: "bad action" } });
        }
        if (payload.action === "edit" && !payload.edited_text?.trim()) {
          return send(422, {
            ok: false,
            error: { code: "bad_edit", message: "action 'edit' requires non-empty edited_text" },
          });
        }
        if (payload.action !== "edit" && payload.edited_text !== undefined) {
          return send(422, {
            ok: false,
            error: { code: "bad_edit", message: "edited_text is only allowed with action 'edit'" },
          });
        }
        state.decisionCounter += 1;
        atom.decision = {
          action: payload.action as never,
          decided_at: `1970-01-01T00:00:${String(state.decisionCounter).padStart(2, "0")}+00:00`,
          ...(payload.action === "edit" ? { edited_text: payload.edited_text } : {}),
        };
        atom.status = "resolved";
        return send(200, { ok: true, data: atom });
      }

      if (req.method === "POST" && url === "/api/finalize") {
        const undecidedIds = state.session.atoms
          .filter((a) => !a.decision)
          .map((a) => a.atom_id);
        if (undecidedIds.length > 0) {
          return send(409, {
            ok: false,
            error: { code: "undecided_atoms", message: undecidedIds.join(", ") },
          });
        }
        state.finalizedCard = applyDecisions(state.session, state.card);
        const fields = Object.fromEntries(
          Object.entries(state.finalizedCard).map(([k, v]) => [
            k,
            { status: v.status, revision: v.revision },
          ]),
        );
        return send(200, {
          ok: true,
          data: { card_path: "card_final.json", benchmark_id: "cards.demo", fields },
        });
      }

      return send(404, { ok: false, error: { code: "not_found", message: url } });
    });
  });

  await new Promise<void>((resolve) => server.listen(0, "127.0.0.1", resolve));
  const { port } = server.address() as AddressInfo;

  return {
    baseUrl: `http://127.0.0.1:${port}`,
    get session() {
      return state.session;
    },
    get card() {
      return state.card;
    },
    get finalizedCard() {
      return state.finalizedCard;
    },
    close: () =>
      new Promise<void>((resolve, reject) =>
        server.close((err) => (err ? reject(err) : resolve())),
      ),
  };
}

export function fixtureCard(): Record<string, FieldState> {
  return {
    methodology: {
      text:
        "Model answers in DemoBench are scored by exact match against the gold option. " +
        "DemoBench uses nine hundred evaluation metrics.",
      status: "flagged",
      revision: 0,
    },
    dataset: {
      text:
        "DemoBench contains 500 multiple choice questions collected from quiz archives. " +
        "DemoBench questions were written in 1997.",
      status: "flagged",
      revision: 0,
    },
    risks: {
      text: "DemoBench scores cannot be gamed in any way.",
      status: "flagged",
      revision: 0,
    },
    purpose: {
      text: "DemoBench is a question answering benchmark for English.",
      status: "validated",
      revision: 0,
    },
  };
}
