import { describe, expect, it } from "vitest";

import { boundingBox, fitTransform, toScreen } from "../src/geometry.js";

describe("viewport fitting", () => {
  it("bounding box spans the union of both point sets", () => {
    const box = boundingBox([
      [
        [0, 0],
        [2, 1],
      ],
      [
        [-1, 3],
        [1, -2],
      ],
    ]);
    expect(box).toEqual({ minX: -1, minY: -2, maxX: 2, maxY: 3 });
  });

  it("returns null for no points", () => {
    expect(boundingBox([[], []])).toBeNull();
  });

  it("keeps the aspect ratio equal on both axes", () => {
    const box = { minX: 0, minY: 0, maxX: 10, maxY: 1 };
    const t = fitTransform(box, 200, 200, 10);
    // wide box: x-span is the binding constraint
    expect(t.scale).toBeCloseTo(180 / 10, 10);
    const [x0, y0] = toScreen(t, 0, 0);
    const [x1, y1] = toScreen(t, 10, 1);
    // fits inside the padded viewport, centered
    expect(Math.min(x0, x1)).toBeGreaterThanOrEqual(10 - 1e-9);
    expect(Math.max(x0, x1)).toBeLessThanOrEqual(190 + 1e-9);
    expect((x0 + x1) / 2).toBeCloseTo(100, 10);
    expect((y0 + y1) / 2).toBeCloseTo(100, 10);
  });

  it("flips the y axis (world up is screen up)", () => {
    const box = { minX: -1, minY: -1, maxX: 1, maxY: 1 };
    const t = fitTransform(box, 100, 100, 0);
    const [, yLow] = toScreen(t, 0, -1);
    const [, yHigh] = toScreen(t, 0, 1);
    expect(yHigh).toBeLessThan(yLow);
  });
});
