/** Viewport fitting: world coordinates -> SVG pixels, equal aspect ratio. */

export interface Box {
  minX: number;
  minY: number;
  maxX: number;
  maxY: number;
}

export interface Transform {
  scale: number;
  tx: number;
  ty: number;
}

export const boundingBox = (pointSets: [number, number][][]): Box | null => {
  let minX = Infinity,
    minY = Infinity,
    maxX = -Infinity,
    maxY = -Infinity;
  for (const points of pointSets) {
    for (const [x, y] of points) {
      if (x < minX) minX = x;
      if (y < minY) minY = y;
      if (x > maxX) maxX = x;
      if (y > maxY) maxY = y;
    }
  }
  if (!isFinite(minX)) return null;
  return { minX, minY, maxX, maxY };
};

/** One scale for both axes (fitted to the tighter one), centered, y flipped. */
export const fitTransform = (box: Box, width: number, height: number, pad = 12): Transform => {
  const spanX = Math.max(box.maxX - box.minX, 1e-9);
  const spanY = Math.max(box.maxY - box.minY, 1e-9);
  const scale = Math.min((width - 2 * pad) / spanX, (height - 2 * pad) / spanY);
  const cx = (box.minX + box.maxX) / 2;
  const cy = (box.minY + box.maxY) / 2;
  return { scale, tx: width / 2 - scale * cx, ty: height / 2 + scale * cy };
};

export const toScreen = (t: Transform, x: number, y: number): [number, number] => [
  t.scale * x + t.tx,
  -t.scale * y + t.ty,
];
