/** Deterministic left/right placement per pair, so no side is systematically "a".
 *
 * Seeded by the pair id alone: the same pair renders the same way on every
 * client and across reloads, which keeps the randomization auditable.
 */

export const hashString = (s: string): number => {
  // FNV-1a, 32-bit
  let h = 0x811c9dc5;
  for (let i = 0; i < s.length; i++) {
    h ^= s.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
};

export interface Placement {
  left: "a" | "b";
  right: "a" | "b";
}

export const placementFor = (pairId: string): Placement =>
  hashString(pairId) % 2 === 0 ? { left: "a", right: "b" } : { left: "b", right: "a" };

/** The server-side winner key for a click on the given side. */
export const winnerForSide = (pairId: string, side: "left" | "right"): "a" | "b" =>
  placementFor(pairId)[side];
