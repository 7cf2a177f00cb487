// Pure pixel compositing for the annotation layer. No canvas involved: the
// input is the decoded server mask plus the click list, the output is a
// straight-alpha RGBA buffer the shell hands to putImageData. Keeping this
// arithmetic DOM-free is what makes the interaction loop testable.

import { ClickPoint } from "./api.js";

export interface MaskBitmap {
  width: number;
  height: number;
  // one byte per pixel, 0 = background, 255 = foreground
  alpha: Uint8Array;
}

export const MASK_COLOR = { r: 43, g: 108, b: 255 }; // blue fill
export const POSITIVE_COLOR = { r: 34, g: 197, b: 94 }; // green marker
export const NEGATIVE_COLOR = { r: 225, g: 29, b: 72 }; // red marker
export const MARKER_RADIUS = 5; // px, mirrors the prompt rasterization

export function emptyMask(width: number, height: number): MaskBitmap {
  return { width, height, alpha: new Uint8Array(width * height) };
}

export function maskIsBlank(mask: MaskBitmap | null): boolean {
  if (!mask) return true;
  return mask.alpha.every((v) => v === 0);
}

/** Composite mask tint + click markers into an RGBA buffer (straight alpha). */
export function composeOverlay(
  width: number,
  height: number,
  mask: MaskBitmap | null,
  clicks: ClickPoint[],
  maskOpacity: number,
  markerRadius = MARKER_RADIUS,
): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(width * height * 4);

  if (mask) {
    if (mask.width !== width || mask.height !== height) {
      throw new Error(
        `mask ${mask.width}x${mask.height} does not match image ${width}x${height}`,
      );
    }
    const a = Math.round(Math.min(1, Math.max(0, maskOpacity)) * 255);
    for (let p = 0; p < width * height; p++) {
      if (mask.alpha[p] !== 0) {
        const q = p * 4;
        out[q] = MASK_COLOR.r;
        out[q + 1] = MASK_COLOR.g;
        out[q + 2] = MASK_COLOR.b;
        out[q + 3] = a;
      }
    }
  }

  // markers stamp over the tint at full alpha, later clicks on top
  const r2 = markerRadius * markerRadius;
  for (const click of clicks) {
    const color = click.positive ? POSITIVE_COLOR : NEGATIVE_COLOR;
    const i0 = Math.max(0, click.i - markerRadius);
    const i1 = Math.min(height - 1, click.i + markerRadius);
    const j0 = Math.max(0, click.j - markerRadius);
    const j1 = Math.min(width - 1, click.j + markerRadius);
    for (let i = i0; i <= i1; i++) {
      for (let j = j0; j <= j1; j++) {
        const di = i - click.i;
        const dj = j - click.j;
        if (di * di + dj * dj > r2) continue;
        const q = (i * width + j) * 4;
        out[q] = color.r;
        out[q + 1] = color.g;
        out[q + 2] = color.b;
        out[q + 3] = 255;
      }
    }
  }
  return out;
}
