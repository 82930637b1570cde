import { describe, expect, it } from "vitest";

import { hashString, placementFor, winnerForSide } from "../src/placement.js";

describe("placement", () => {
  it("is deterministic per pair id", () => {
    for (const id of ["p00000001-0000", "p00000001-0001", "x", ""]) {
      expect(placementFor(id)).toEqual(placementFor(id));
    }
  });

  it("always places a and b on opposite sides", () => {
    for (let i = 0; i < 200; i++) {
      const p = placementFor(`pair-${i}`);
      expect(new Set([p.left, p.right])).toEqual(new Set(["a", "b"]));
    }
  });

  it("uses both orientations across many pairs", () => {
    const lefts = new Set<string>();
    for (let i = 0; i < 200; i++) lefts.add(placementFor(`pair-${i}`).left);
    expect(lefts).toEqual(new Set(["a", "b"]));
  });

  it("maps the clicked side to the underlying member", () => {
    const id = "pair-42";
    const p = placementFor(id);
    expect(winnerForSide(id, "left")).toBe(p.left);
    expect(winnerForSide(id, "right")).toBe(p.right);
  });

  it("hashString matches the FNV-1a reference values", () => {
    // reference: FNV-1a 32-bit of "" is the offset basis
    expect(hashString("")).toBe(0x811c9dc5);
    expect(hashString("a")).toBe(0xe40c292c);
  });
});
