/** Pluggable image/text embedders.
 *
 * The real path is a CLIP-style vision-language model loaded lazily through
 * @xenova/transformers; when that package or its weights are unavailable the
 * deterministic mock embedder keeps the full pipeline runnable and testable.
 */

import { Rng } from "./rng.js";

export interface RawImageData {
  data: Uint8Array; // interleaved, row-major
  width: number;
  height: number;
  channels: number; // 1, 3 or 4
}

export interface Embedder {
  readonly name: string;
  readonly dim: number;
  embedImage(img: RawImageData): Promise<Float64Array>;
  embedText(prompt: string): Promise<Float64Array>;
}

export function l2Normalize(v: Float64Array): Float64Array {
  let sq = 0;
  for (const x of v) sq += x * x;
  const norm = Math.max(Math.sqrt(sq), 1e-12);
  const out = new Float64Array(v.length);
  for (let i = 0; i < v.length; i++) out[i] = v[i] / norm;
  return out;
}

const GRID = 8; // mock pooling grid per channel

/** Deterministic stand-in embedder: average-pools the image onto an 8x8x3
 * grid and applies a fixed seeded random projection. Text prompts go through
 * a character-trigram hash into the same output dimension. No semantics are
 * claimed beyond determinism and unit norm. */
export class MockEmbedder implements Embedder {
  readonly name = "mock";
  readonly dim: number;
  private readonly projection: Float64Array; // (GRID*GRID*3, dim)

  constructor(dim = 64) {
    this.dim = dim;
    const rng = new Rng(0x5eed);
    this.projection = new Float64Array(GRID * GRID * 3 * dim);
    for (let i = 0; i < this.projection.length; i++) {
      this.projection[i] = rng.normal() / Math.sqrt(GRID * GRID * 3);
    }
  }

  private pool(img: RawImageData): Float64Array {
    const feats = new Float64Array(GRID * GRID * 3);
    const counts = new Float64Array(GRID * GRID);
    for (let y = 0; y < img.height; y++) {
      const gy = Math.min(Math.floor((y * GRID) / img.height), GRID - 1);
      for (let x = 0; x < img.width; x++) {
        const gx = Math.min(Math.floor((x * GRID) / img.width), GRID - 1);
        const cell = gy * GRID + gx;
        const base = (y * img.width + x) * img.channels;
        for (let c = 0; c < 3; c++) {
          const channel = Math.min(c, img.channels - 1);
          feats[cell * 3 + c] += img.data[base + channel] / 255;
        }
        counts[cell] += 1;
      }
    }
    for (let cell = 0; cell < GRID * GRID; cell++) {
      const n = Math.max(counts[cell], 1);
      for (let c = 0; c < 3; c++) feats[cell * 3 + c] /= n;
    }
    return feats;
  }

  async embedImage(img: RawImageData): Promise<Float64Array> {
    const feats = this.pool(img);
    const out = new Float64Array(this.dim);
    for (let i = 0; i < feats.length; i++) {
      const row = i * this.dim;
      for (let j = 0; j < this.dim; j++) out[j] += feats[i] * this.projection[row + j];
    }
    return l2Normalize(out);
  }

  async embedText(prompt: string): Promise<Float64Array> {
    const out = new Float64Array(this.dim);
    const s = `^^${prompt.toLowerCase()}$$`;
    for (let i = 0; i + 2 < s.length; i++) {
      let h = 2166136261;
      for (let j = i; j < i + 3; j++) h = Math.imul(h ^ s.charCodeAt(j), 16777619);
      const rng = new Rng(h >>> 0);
      for (let j = 0; j < this.dim; j++) out[j] += rng.normal();
    }
    return l2Normalize(out);
  }
}

const CLIP_MODEL = "Xenova/clip-vit-base-patch32";

/** CLIP ViT-B/32 through transformers.js. Throws a descriptive error when the
 * package is not installed or the weights cannot be fetched. */
export async function createClipEmbedder(): Promise<Embedder> {
  let tf: any;
  try {
    tf = await import("@xenova/transformers");
  } catch (e) {
    throw new Error(
      `@xenova/transformers is not installed (${(e as Error).message}); ` +
        "run `npm install @xenova/transformers` or use --model mock"
    );
  }
  const { AutoTokenizer, AutoProcessor, CLIPTextModelWithProjection,
          CLIPVisionModelWithProjection, RawImage } = tf;
  const tokenizer = await AutoTokenizer.from_pretrained(CLIP_MODEL);
  const processor = await AutoProcessor.from_pretrained(CLIP_MODEL);
  const textModel = await CLIPTextModelWithProjection.from_pretrained(CLIP_MODEL);
  const visionModel = await CLIPVisionModelWithProjection.from_pretrained(CLIP_MODEL);

  return {
    name: "clip-vit-base-patch32",
    dim: 512,
    async embedImage(img: RawImageData): Promise<Float64Array> {
      const raw = new RawImage(new Uint8ClampedArray(img.data), img.width,
                               img.height, img.channels);
      const inputs = await processor(raw);
      const { image_embeds } = await visionModel(inputs);
      return l2Normalize(Float64Array.from(image_embeds.data as Float32Array));
    },
    async embedText(prompt: string): Promise<Float64Array> {
      const inputs = tokenizer([prompt], { padding: true, truncation: true });
      const { text_embeds } = await textModel(inputs);
      return l2Normalize(Float64Array.from(text_embeds.data as Float32Array));
    },
  };
}
