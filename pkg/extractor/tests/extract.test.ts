import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import sharp from "sharp";
import { beforeAll, describe, expect, it } from "vitest";

import { augment } from "../src/augment.js";
import { MockEmbedder, RawImageData, createClipEmbedder } from "../src/embedder.js";
import { validateBundle } from "../src/bundle.js";
import { ExtractionJob, embedText, runExtraction } from "../src/extract.js";
import { Rng } from "../src/rng.js";

const CLASSES = ["red", "green", "blue"];
const SIZE = 16;

function classImage(classIdx: number, imageIdx: number): RawImageData {
  // solid class color with a deterministic per-image texture
  const data = new Uint8Array(SIZE * SIZE * 3);
  const base = [[200, 40, 40], [40, 200, 40], [40, 40, 200]][classIdx];
  for (let i = 0; i < SIZE * SIZE; i++) {
    for (let c = 0; c < 3; c++) {
      data[i * 3 + c] = Math.min(255, base[c] + ((i * 7 + imageIdx * 31 + c * 13) % 40));
    }
  }
  return { data, width: SIZE, height: SIZE, channels: 3 };
}

async function writeDataset(root: string): Promise<void> {
  const perSplit: Record<string, number> = { labeled: 2, unlabeled: 3, retrieved: 1, test: 2 };
  let serial = 0;
  for (const [split, count] of Object.entries(perSplit)) {
    for (let ci = 0; ci < CLASSES.length; ci++) {
      const dir = path.join(root, split, CLASSES[ci]);
      fs.mkdirSync(dir, { recursive: true });
      for (let i = 0; i < count; i++) {
        const img = classImage(ci, serial++);
        await sharp(Buffer.from(img.data), {
          raw: { width: SIZE, height: SIZE, channels: 3 },
        }).png().toFile(path.join(dir, `img_${i}.png`));
      }
    }
  }
}

function job(root: string, out: string, overrides: Partial<ExtractionJob> = {}): ExtractionJob {
  return { imageRoot: root, classNames: CLASSES, template: "a photo of a {}",
           strongViews: 4, outDir: out, seed: 0, ...overrides };
}

function readF32(file: string): Float32Array {
  const buf = fs.readFileSync(file);
  return new Float32Array(buf.buffer, buf.byteOffset, buf.length / 4);
}

let root: string;
let tmp: string;

beforeAll(async () => {
  tmp = fs.mkdtempSync(path.join(os.tmpdir(), "extract-test-"));
  root = path.join(tmp, "images");
  await writeDataset(root);
});

describe("embedText", () => {
  const embedder = new MockEmbedder();

  it("emits one unit-norm row per class in order", async () => {
    const rows = await embedText(embedder, CLASSES, "a photo of a {}");
    expect(rows).toHaveLength(3);
    for (const row of rows) {
      expect(row).toHaveLength(embedder.dim);
      const norm = Math.sqrt(row.reduce((s, x) => s + x * x, 0));
      expect(Math.abs(norm - 1)).toBeLessThan(1e-4);
    }
    const again = await embedText(embedder, CLASSES, "a photo of a {}");
    expect(Array.from(again[0])).toEqual(Array.from(rows[0]));
  });

  it("distinguishes prompts", async () => {
    const [a, b] = await embedText(embedder, ["cat", "dog"], "a photo of a {}");
    expect(Array.from(a)).not.toEqual(Array.from(b));
  });

  it("rejects duplicate class names", async () => {
    await expect(embedText(embedder, ["a", "a"], "x {}")).rejects.toThrow("unique");
  });

  it("rejects a template without placeholder", async () => {
    await expect(embedText(embedder, ["a"], "no slot")).rejects.toThrow("placeholder");
  });
});

describe("augmentation", () => {
  const img = classImage(0, 0);

  it("identity policy returns the image unchanged", async () => {
    const out = await augment(img, "identity", new Rng(5));
    expect(out.data).toEqual(img.data);
  });

  it("is deterministic given the same stream", async () => {
    const a = await augment(img, "strong", new Rng(7));
    const b = await augment(img, "strong", new Rng(7));
    expect(Buffer.from(a.data).equals(Buffer.from(b.data))).toBe(true);
  });

  it("different draws give different strong views", async () => {
    const rng = new Rng(7);
    const a = await augment(img, "strong", rng);
    const b = await augment(img, "strong", rng);
    expect(Buffer.from(a.data).equals(Buffer.from(b.data))).toBe(false);
  });

  it("preserves image shape", async () => {
    const out = await augment(img, "weak", new Rng(3));
    expect([out.width, out.height]).toEqual([img.width, img.height]);
  });
});

describe("runExtraction", () => {
  const embedder = new MockEmbedder();

  it("writes a complete bundle with expected counts", async () => {
    const out = path.join(tmp, "bundle");
    const bundle = await runExtraction(job(root, out), embedder);
    expect(bundle.labeled).toHaveLength(6);
    expect(bundle.unlabeledWeak).toHaveLength(9);
    expect(bundle.unlabeledStrong).toHaveLength(36);
    expect(bundle.retrieved).toHaveLength(3);
    expect(bundle.test).toHaveLength(6);
    // strong blob: N_u * k * d floats, 4 bytes each
    const strong = fs.statSync(path.join(out, "unlabeled.strong.f32"));
    expect(strong.size).toBe(9 * 4 * embedder.dim * 4);
    const manifest = JSON.parse(fs.readFileSync(path.join(out, "manifest.json"), "utf-8"));
    expect(manifest.counts).toEqual({ labeled: 6, unlabeled: 9, retrieved: 3, test: 6 });
    expect(manifest.provenance.model).toBe("mock");
  });

  it("emits unit-norm rows at stored precision", async () => {
    const out = path.join(tmp, "bundle-norm");
    await runExtraction(job(root, out), embedder);
    for (const blob of ["labeled.f32", "unlabeled.weak.f32", "unlabeled.strong.f32",
                        "text.f32"]) {
      const flat = readF32(path.join(out, blob));
      for (let r = 0; r < flat.length / embedder.dim; r++) {
        let sq = 0;
        for (let j = 0; j < embedder.dim; j++) sq += flat[r * embedder.dim + j] ** 2;
        expect(Math.abs(Math.sqrt(sq) - 1)).toBeLessThan(1e-4);
      }
    }
  });

  it("reproduces identical blobs for the same seed", async () => {
    const a = path.join(tmp, "det-a");
    const b = path.join(tmp, "det-b");
    await runExtraction(job(root, a, { seed: 11 }), embedder);
    await runExtraction(job(root, b, { seed: 11 }), embedder);
    for (const f of fs.readdirSync(a)) {
      expect(fs.readFileSync(path.join(a, f)).equals(fs.readFileSync(path.join(b, f))),
             f).toBe(true);
    }
  });

  it("changes augmentation draws with the seed", async () => {
    const a = path.join(tmp, "seed-a");
    const b = path.join(tmp, "seed-b");
    await runExtraction(job(root, a, { seed: 1 }), embedder);
    await runExtraction(job(root, b, { seed: 2 }), embedder);
    const sa = fs.readFileSync(path.join(a, "unlabeled.strong.f32"));
    const sb = fs.readFileSync(path.join(b, "unlabeled.strong.f32"));
    expect(sa.equals(sb)).toBe(false);
  });

  it("skips unreadable images with a warning", async () => {
    const broken = path.join(tmp, "broken-root");
    await writeDataset(broken);
    fs.writeFileSync(path.join(broken, "labeled", "red", "junk.png"), "not a png");
    const out = path.join(tmp, "bundle-broken");
    const bundle = await runExtraction(job(broken, out), embedder);
    expect(bundle.labeled).toHaveLength(6); // junk file skipped, rest embedded
  });

  it("rejects invalid jobs", async () => {
    await expect(runExtraction(job(root, path.join(tmp, "x"), { strongViews: 0 }),
                               embedder)).rejects.toThrow(">= 1");
    await expect(runExtraction(job(root, path.join(tmp, "x"),
                                   { classNames: ["a", "a"] }),
                               embedder)).rejects.toThrow("unique");
  });
});

describe("validateBundle", () => {
  it("rejects out-of-range labels and bad strong counts", () => {
    const row = new Float64Array(4);
    const base = {
      numClasses: 2, dim: 4, strongViews: 1, classNames: ["a", "b"],
      labeled: [row], labeledLabels: [0], unlabeledWeak: [], unlabeledStrong: [],
      unlabeledTruth: null, retrieved: [], retrievedLabels: [],
      test: [row], testLabels: [1], text: [row, row],
    };
    expect(() => validateBundle({ ...base, testLabels: [2] })).toThrow("out of range");
    expect(() => validateBundle({ ...base, unlabeledStrong: [row] }))
      .toThrow("strongViews");
  });
});

describe("engine interoperability", () => {
  it("produces a directory the training engine loads and validates", async () => {
    const out = path.join(tmp, "bundle-interop");
    await runExtraction(job(root, out), new MockEmbedder());
    const code = [
      "import sys",
      "from swiftssl.data import load_bundle",
      `b = load_bundle(${JSON.stringify(out)})`,
      "b.validate()",
      "print(b.num_classes, b.dim, b.strong_views)",
    ].join("\n");
    let stdout: string;
    try {
      stdout = execFileSync("python3", ["-c", code], { encoding: "utf-8" });
    } catch (e: any) {
      if (e.code === "ENOENT") return; // engine not installed here
      throw new Error(e.stderr ?? String(e));
    }
    expect(stdout.trim()).toBe("3 64 4");
  });
});

describe("real vision-language model", () => {
  it("stage-1 smoke pattern with real embeddings", async (ctx) => {
    let embedder;
    try {
      embedder = await createClipEmbedder();
    } catch {
      ctx.skip(); // model package/weights not reachable in this environment
      return;
    }
    const text = await embedText(embedder, ["a red square", "a green square"],
                                 "an image of {}");
    expect(text[0]).toHaveLength(512);
  }, 120_000);
});
