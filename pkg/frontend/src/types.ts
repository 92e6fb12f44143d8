// Mirrors the review service's session JSON. The UI never derives scores
// or verdicts itself; everything rendered comes from the last API response.

export type DecisionAction = "accept" | "edit" | "regenerate";

export interface EvidenceSnippet {
  chunk_id: string;
  text: string;
  source_id: string;
}

export interface Decision {
  action: DecisionAction;
  edited_text?: string;
  decided_at: string;
}

export interface SessionAtom {
  atom_id: string;
  field_id: string;
  text: string;
  score: number | null;
  flagged: boolean;
  status: string;
  evidence: EvidenceSnippet[];
  decision: Decision | null;
}

export interface Session {
  session_id: string;
  card_revision: number;
  atoms: SessionAtom[];
}

export interface ApiError {
  code: string;
  message: string;
}

export interface Envelope<T> {
  ok: boolean;
  data?: T;
  error?: ApiError;
}

export interface FinalizeResult {
  card_path: string;
  benchmark_id: string;
  fields: Record<string, { status: string; revision: number }>;
}
