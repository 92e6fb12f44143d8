// Display-only helper: mark the tokens an evidence snippet shares with the
// statement under review, so annotators can eyeball support quickly.

export interface Segment {
  text: string;
  shared: boolean;
}

function normalize(token: string): string {
  return token.toLowerCase().replace(/[^\p{L}\p{N}]/gu, "");
}

/** Split a snippet into segments, flagging tokens that also occur in the
 * statement. Whitespace is preserved in the segments. */
export function highlightShared(snippet: string, statement: string): Segment[] {
  const statementTokens = new Set(
    statement.split(/\s+/).map(normalize).filter((t) => t.length > 0),
  );
  const segments: Segment[] = [];
  for (const part of snippet.split(/(\s+)/)) {
    if (part === "") continue;
    const last = segments[segments.length - 1];
    if (/^\s+$/.test(part)) {
      // whitespace extends the previous segment so shared runs stay whole
      if (last) last.text += part;
      else segments.push({ text: part, shared: false });
      continue;
    }
    const shared = statementTokens.has(normalize(part));
    if (last && last.shared === shared) {
      last.text += part;
    } else {
      segments.push({ text: part, shared });
    }
  }
  return segments;
}
