/**
 * Run-length encoded region masks, matching the backend wire format:
 * row-major runs, alternating background / foreground, background first.
 */

export interface RleMask {
  size: [number, number]; // [height, width]
  order: "row-major";
  counts: number[];
}

export function npixels(mask: RleMask): number {
  return mask.size[0] * mask.size[1];
}

export function area(mask: RleMask): number {
  let total = 0;
  for (let i = 1; i < mask.counts.length; i += 2) total += mask.counts[i];
  return total;
}

/** Decode to a flat row-major Uint8Array (1 = foreground). */
export function decode(mask: RleMask): Uint8Array {
  const total = npixels(mask);
  const out = new Uint8Array(total);
  let pos = 0;
  let value = 0;
  for (const run of mask.counts) {
    if (run < 0 || !Number.isInteger(run)) {
      throw new Error(`invalid run length ${run}`);
    }
    if (value === 1) out.fill(1, pos, pos + run);
    pos += run;
    value = 1 - value;
  }
  if (pos !== total) {
    throw new Error(`runs cover ${pos} pixels, expected ${total}`);
  }
  return out;
}

/** Encode a flat row-major bitmap; inverse of decode. */
export function encode(bitmap: Uint8Array, height: number, width: number): RleMask {
  if (bitmap.length !== height * width) {
    throw new Error(`bitmap length ${bitmap.length} != ${height}x${width}`);
  }
  const counts: number[] = [];
  let value = 0;
  let run = 0;
  for (let i = 0; i < bitmap.length; i++) {
    const v = bitmap[i] ? 1 : 0;
    if (v === value) {
      run++;
    } else {
      counts.push(run);
      value = v;
      run = 1;
    }
  }
  counts.push(run);
  return { size: [height, width], order: "row-major", counts };
}

export function sameMask(a: RleMask, b: RleMask): boolean {
  return (
    a.size[0] === b.size[0] &&
    a.size[1] === b.size[1] &&
    a.counts.length === b.counts.length &&
    a.counts.every((c, i) => c === b.counts[i])
  );
}

export interface Rgba {
  r: number;
  g: number;
  b: number;
  a: number; // 0..255
}

/**
 * Paint a mask into an RGBA pixel buffer (4 bytes per pixel, row-major),
 * the layout canvas ImageData expects. Pixels outside the mask are left
 * untouched so overlays can stack.
 */
export function paintOverlay(
  mask: RleMask,
  color: Rgba,
  buffer?: Uint8ClampedArray,
): Uint8ClampedArray {
  const total = npixels(mask);
  const out = buffer ?? new Uint8ClampedArray(total * 4);
  if (out.length !== total * 4) {
    throw new Error(`buffer length ${out.length} != ${total * 4}`);
  }
  const bitmap = decode(mask);
  for (let i = 0; i < total; i++) {
    if (!bitmap[i]) continue;
    const o = i * 4;
    out[o] = color.r;
    out[o + 1] = color.g;
    out[o + 2] = color.b;
    out[o + 3] = color.a;
  }
  return out;
}
