/** Weak and strong augmentation policies over raw pixel buffers.
 *
 * Weak follows the usual flip+crop convention; strong layers heavier
 * color/geometric distortion plus cutout on top. Both are pure functions of
 * (image, rng) so a seeded stream reproduces every view exactly.
 */

import sharp, { type Sharp } from "sharp";

import { RawImageData } from "./embedder.js";
import { Rng } from "./rng.js";

export type AugmentPolicy = "identity" | "weak" | "strong";

export const POLICY_PARAMS = {
  weak: { flipProb: 0.5, minCropScale: 0.9 },
  strong: {
    flipProb: 0.5,
    minCropScale: 0.6,
    brightness: [0.6, 1.4] as const,
    saturation: [0.5, 1.5] as const,
    hueDegrees: 36,
    cutoutFrac: [0.1, 0.3] as const,
  },
};

function toSharp(img: RawImageData) {
  return sharp(Buffer.from(img.data), {
    raw: { width: img.width, height: img.height, channels: img.channels as 1 | 2 | 3 | 4 },
  });
}

async function toRaw(pipeline: Sharp): Promise<RawImageData> {
  const { data, info } = await pipeline.raw().toBuffer({ resolveWithObject: true });
  return { data: new Uint8Array(data), width: info.width, height: info.height,
           channels: info.channels };
}

function cropBox(img: RawImageData, rng: Rng, minScale: number) {
  const scale = rng.uniform(minScale, 1.0);
  const w = Math.max(1, Math.round(img.width * scale));
  const h = Math.max(1, Math.round(img.height * scale));
  return { left: rng.int(img.width - w + 1), top: rng.int(img.height - h + 1),
           width: w, height: h };
}

function cutout(img: RawImageData, rng: Rng, minFrac: number, maxFrac: number): void {
  const fw = Math.max(1, Math.round(img.width * rng.uniform(minFrac, maxFrac)));
  const fh = Math.max(1, Math.round(img.height * rng.uniform(minFrac, maxFrac)));
  const left = rng.int(img.width - fw + 1);
  const top = rng.int(img.height - fh + 1);
  const fill = rng.int(256);
  for (let y = top; y < top + fh; y++) {
    for (let x = left; x < left + fw; x++) {
      const base = (y * img.width + x) * img.channels;
      for (let c = 0; c < Math.min(img.channels, 3); c++) img.data[base + c] = fill;
    }
  }
}

export async function augment(img: RawImageData, policy: AugmentPolicy,
                              rng: Rng): Promise<RawImageData> {
  if (policy === "identity") return img;
  if (policy === "weak") {
    const p = POLICY_PARAMS.weak;
    let pipe = toSharp(img).extract(cropBox(img, rng, p.minCropScale))
      .resize(img.width, img.height, { fit: "fill" });
    if (rng.bool(p.flipProb)) pipe = pipe.flop();
    return toRaw(pipe);
  }
  const p = POLICY_PARAMS.strong;
  let pipe = toSharp(img).extract(cropBox(img, rng, p.minCropScale))
    .resize(img.width, img.height, { fit: "fill" })
    .modulate({
      brightness: rng.uniform(p.brightness[0], p.brightness[1]),
      saturation: rng.uniform(p.saturation[0], p.saturation[1]),
      hue: Math.round(rng.uniform(-p.hueDegrees, p.hueDegrees)),
    });
  if (rng.bool(p.flipProb)) pipe = pipe.flop();
  const out = await toRaw(pipe);
  cutout(out, rng, p.cutoutFrac[0], p.cutoutFrac[1]);
  return out;
}
