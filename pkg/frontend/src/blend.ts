// Client-side alpha blending for the live opacity slider. Pure pixel math on
// RGBA buffers so it is testable outside a browser; the canvas layer in
// app.ts only moves ImageData in and out.

export function clampOpacity(value: number): number {
  if (Number.isNaN(value)) return 0;
  return Math.min(1, Math.max(0, value));
}

/**
 * Blend overlay onto base at the given opacity: out = (1-a)*base + a*overlay,
 * rounded half away from zero per channel. Alpha stays opaque. Buffers must
 * be equally sized RGBA.
 */
export function blendPixels(
  base: Uint8ClampedArray,
  overlay: Uint8ClampedArray,
  opacity: number,
): Uint8ClampedArray {
  if (base.length !== overlay.length || base.length % 4 !== 0) {
    throw new Error(
      `buffer sizes differ or are not RGBA: ${base.length} vs ${overlay.length}`,
    );
  }
  const a = clampOpacity(opacity);
  const out = new Uint8ClampedArray(base.length);
  for (let i = 0; i < base.length; i += 4) {
    for (let c = 0; c < 3; c++) {
      out[i + c] = Math.floor((1 - a) * base[i + c] + a * overlay[i + c] + 0.5);
    }
    out[i + 3] = 255;
  }
  return out;
}
