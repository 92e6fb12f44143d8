// Session fixture mirroring the review service's session.json shape.

import type { Session } from "../src/types.js";

export function fixtureSession(): Session {
  return {
    session_id: "session-fixture",
    card_revision: 0,
    atoms: [
      {
        atom_id: "methodology.a2",
        field_id: "methodology",
        text: "DemoBench uses nine hundred evaluation metrics.",
        score: 0.0005,
        flagged: true,
        status: "flagged",
        evidence: [
          {
            chunk_id: "hub:demo-org/demo-qa#0",
            text: "DemoBench uses a single evaluation metric, accuracy.",
            source_id: "hub:demo-org/demo-qa",
          },
        ],
        decision: null,
      },
      {
        atom_id: "dataset.a3",
        field_id: "dataset",
        text: "DemoBench questions were written in 1997.",
        score: 0.41,
        flagged: true,
        status: "flagged",
        evidence: [
          {
            chunk_id: "publication:publication.md#2",
            text: "The questions in DemoBench cover science, history, and geography topics.",
            source_id: "publication:publication.md",
          },
        ],
        decision: null,
      },
      {
        atom_id: "risks.a2",
        field_id: "risks",
        text: "DemoBench scores cannot be gamed in any way.",
        score: 0.5,
        flagged: true,
        status: "flagged",
        evidence: [],
        decision: null,
      },
    ],
  };
}
