/** Pure SVG element builders for trajectory views.
 *
 * Everything here returns markup strings so it can be unit-tested without a
 * DOM; the trajectory data itself is never modified.
 */

import { Box, Transform, boundingBox, fitTransform, toScreen } from "./geometry.js";
import { Trajectory } from "./types.js";

/** Time-gradient color: early timesteps cool blue, late timesteps warm red. */
export const timeColor = (fraction: number): string => {
  const f = Math.max(0, Math.min(1, fraction));
  const r = Math.round(40 + 200 * f);
  const g = Math.round(80 + 40 * (1 - f));
  const b = Math.round(220 - 170 * f);
  return `rgb(${r},${g},${b})`;
};

const seg = (p: [number, number], q: [number, number], color: string, width: number): string =>
  `<line x1="${p[0].toFixed(2)}" y1="${p[1].toFixed(2)}" x2="${q[0].toFixed(2)}" y2="${q[1].toFixed(2)}" ` +
  `stroke="${color}" stroke-width="${width}" stroke-linecap="round"/>`;

export const placeholderGlyph = (width: number, height: number): string =>
  `<g class="placeholder"><circle cx="${width / 2}" cy="${height / 2}" r="10" fill="none" stroke="#999" ` +
  `stroke-dasharray="3 3"/><text x="${width / 2}" y="${height / 2 + 3}" text-anchor="middle" ` +
  `font-size="8" fill="#999">n/a</text></g>`;

export interface RenderStyle {
  width: number;
  height: number;
  strokeWidth?: number;
  glyphEvery?: number; // velocity glyph stride in timesteps
  glyphScale?: number;
}

/** Trajectory as time-gradient segments + velocity glyphs + start/end markers. */
export const renderTrajectory = (traj: Trajectory, t: Transform, style: RenderStyle): string => {
  const pts = traj.points;
  if (pts.length < 2) return placeholderGlyph(style.width, style.height);
  const sw = style.strokeWidth ?? 2.2;
  const stride = style.glyphEvery ?? 3;
  const glyphScale = style.glyphScale ?? 0.35;
  const parts: string[] = [];
  const screen = pts.map(([x, y]) => toScreen(t, x, y));
  for (let i = 0; i + 1 < screen.length; i++) {
    parts.push(seg(screen[i], screen[i + 1], timeColor(i / (pts.length - 1)), sw));
  }
  for (let i = 0; i < pts.length; i += stride) {
    const [ax, ay] = traj.actions[i] ?? [0, 0];
    const tip = toScreen(t, pts[i][0] + glyphScale * ax, pts[i][1] + glyphScale * ay);
    parts.push(seg(screen[i], tip, "rgba(60,60,60,0.45)", 1));
  }
  const [sx, sy] = screen[0];
  const [ex, ey] = screen[screen.length - 1];
  parts.push(`<circle cx="${sx.toFixed(2)}" cy="${sy.toFixed(2)}" r="4" fill="#1a7f37"/>`);
  parts.push(
    `<rect x="${(ex - 3.5).toFixed(2)}" y="${(ey - 3.5).toFixed(2)}" width="7" height="7" fill="#b91c1c"/>`
  );
  return `<g class="trajectory">${parts.join("")}</g>`;
};

/** Fit both pair members into one shared viewport scale (comparability). */
export const pairTransform = (a: Trajectory, b: Trajectory, width: number, height: number): Transform => {
  const box: Box = boundingBox([a.points, b.points]) ?? { minX: -1, minY: -1, maxX: 1, maxY: 1 };
  return fitTransform(box, width, height);
};

export const trajectorySvg = (traj: Trajectory, t: Transform, style: RenderStyle): string =>
  `<svg viewBox="0 0 ${style.width} ${style.height}" width="${style.width}" height="${style.height}" ` +
  `xmlns="http://www.w3.org/2000/svg">${renderTrajectory(traj, t, style)}</svg>`;

/** Sparkline for the live adaptation loss. */
export const lossSparkline = (losses: number[], width = 280, height = 60): string => {
  if (losses.length < 2) return `<svg width="${width}" height="${height}"></svg>`;
  const lo = Math.min(...losses);
  const hi = Math.max(...losses);
  const span = Math.max(hi - lo, 1e-12);
  const pts = losses
    .map((v, i) => {
      const x = (i / (losses.length - 1)) * (width - 4) + 2;
      const y = height - 2 - ((v - lo) / span) * (height - 4);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
  return (
    `<svg width="${width}" height="${height}" xmlns="http://www.w3.org/2000/svg">` +
    `<polyline points="${pts}" fill="none" stroke="#2563eb" stroke-width="1.5"/></svg>`
  );
};
