import type {
  DecisionAction,
  Envelope,
  FinalizeResult,
  Session,
  SessionAtom,
} from "./types.js";

export class RequestFailed extends Error {
  constructor(
    message: string,
    readonly status: number,
    readonly code: string = "error",
  ) {
    super(message);
    this.name = "RequestFailed";
  }
}

async function unwrap<T>(response: Response): Promise<T> {
  let body: Envelope<T>;
  try {
    body = (await response.json()) as Envelope<T>;
  } catch {
    throw new RequestFailed(`bad response (${response.status})`, response.status);
  }
  if (!response.ok || !body.ok || body.data === undefined) {
    const err = body.error;
    throw new RequestFailed(
      err?.message ?? `request failed (${response.status})`,
      response.status,
      err?.code,
    );
  }
  return body.data;
}

/** Thin client for the review service; the only write paths the UI has
 * are submitDecision and finalize. */
export class ReviewApi {
  constructor(readonly baseUrl: string = "") {}

  async getSession(): Promise<Session> {
    const response = await fetch(`${this.baseUrl}/api/session`);
    return unwrap<Session>(response);
  }

  async submitDecision(
    atomId: string,
    action: DecisionAction,
    editedText?: string,
  ): Promise<SessionAtom> {
    const payload: Record<string, string> = { action };
    if (action === "edit") {
      payload.edited_text = editedText ?? "";
    }
    const response = await fetch(
      `${this.baseUrl}/api/atoms/${encodeURIComponent(atomId)}/decision`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(payload),
      },
    );
    return unwrap<SessionAtom>(response);
  }

  async finalize(): Promise<FinalizeResult> {
    const response = await fetch(`${this.baseUrl}/api/finalize`, { method: "POST" });
    return unwrap<FinalizeResult>(response);
  }
}
