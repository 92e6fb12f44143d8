import { describe, expect, it } from "vitest";

import { highlightShared } from "../src/highlight.js";

describe("highlightShared", () => {
  it("marks tokens shared with the statement", () => {
    const segments = highlightShared(
      "The panda eats bamboo daily.",
      "A panda eats shoots.",
    );
    const shared = segments.filter((s) => s.shared).map((s) => s.text.trim());
    expect(shared).toEqual(["panda eats"]);
  });

  it("is case and punctuation insensitive", () => {
    const segments = highlightShared("Bamboo, obviously!", "bamboo");
    expect(segments[0]).toMatchObject({ shared: true });
    expect(segments[0]!.text).toContain("Bamboo,");
  });

  it("reassembles to the original snippet", () => {
    const snippet = "Left  middle\nright end.";
    const joined = highlightShared(snippet, "middle end")
      .map((s) => s.text)
      .join("");
    expect(joined).toBe(snippet);
  });

  it("marks nothing when nothing is shared", () => {
    const segments = highlightShared("alpha beta", "gamma delta");
    expect(segments.every((s) => !s.shared)).toBe(true);
  });
});
