import { describe, expect, it } from "vitest";

import { pairTransform, placeholderGlyph, renderTrajectory, timeColor, trajectorySvg } from "../src/render.js";
import { Trajectory } from "../src/types.js";

const STYLE = { width: 360, height: 300 };

const straight = (n = 8): Trajectory => ({
  points: Array.from({ length: n }, (_, i) => [i * 0.1, 0] as [number, number]),
  actions: Array.from({ length: n }, () => [1, 0] as [number, number]),
});

describe("trajectory rendering", () => {
  it("renders a straight line with distinct start and end markers", () => {
    const traj = straight();
    const t = pairTransform(traj, traj, STYLE.width, STYLE.height);
    const svg = renderTrajectory(traj, t, STYLE);
    expect(svg).toContain("<circle");
    expect(svg).toContain("<rect");
    const circle = svg.match(/cx="([\d.]+)"/);
    const rect = svg.match(/<rect x="([\d.-]+)"/);
    expect(circle && rect && circle[1] !== rect[1]).toBeTruthy();
    // one gradient segment per consecutive point pair plus velocity glyphs
    expect((svg.match(/<line /g) ?? []).length).toBeGreaterThanOrEqual(7);
  });

  it("pair members share one viewport transform", () => {
    const a = straight(6);
    const b: Trajectory = {
      points: a.points.map(([x, y]) => [x + 5, y + 5] as [number, number]),
      actions: a.actions,
    };
    const t = pairTransform(a, b, STYLE.width, STYLE.height);
    const svgA = trajectorySvg(a, t, STYLE);
    const svgB = trajectorySvg(b, t, STYLE);
    expect(svgA).not.toEqual(svgB); // same scale, different positions
    expect(t.scale).toBeGreaterThan(0);
  });

  it("degenerate inputs produce a placeholder, not a crash", () => {
    const empty: Trajectory = { points: [], actions: [] };
    const t = pairTransform(empty, empty, STYLE.width, STYLE.height);
    expect(renderTrajectory(empty, t, STYLE)).toContain("placeholder");
    const single: Trajectory = { points: [[1, 1]], actions: [[0, 0]] };
    expect(renderTrajectory(single, t, STYLE)).toBe(placeholderGlyph(STYLE.width, STYLE.height));
  });

  it("time gradient moves from cool to warm", () => {
    expect(timeColor(0)).not.toEqual(timeColor(1));
    const early = timeColor(0).match(/rgb\((\d+),/);
    const late = timeColor(1).match(/rgb\((\d+),/);
    expect(Number(late![1])).toBeGreaterThan(Number(early![1]));
  });

  it("never mutates the trajectory data", () => {
    const traj = straight();
    const snapshot = JSON.parse(JSON.stringify(traj));
    const t = pairTransform(traj, traj, STYLE.width, STYLE.height);
    renderTrajectory(traj, t, STYLE);
    expect(traj).toEqual(snapshot);
  });
});
