/** Walks a class-per-folder image root, embeds weak/strong views and
 * class-name prompts, and writes the engine's bundle container.
 *
 * Expected layout under the image root (splits may be absent or empty):
 *
 *   root/labeled/<class>/*.png     few-shot labeled split
 *   root/unlabeled/<class>/*.png   unlabeled pool (folder name = hidden truth)
 *   root/retrieved/<class>/*.png   noisy retrieved split
 *   root/test/<class>/*.png        evaluation split
 */

import * as fs from "node:fs";
import * as path from "node:path";
import sharp from "sharp";

import { augment, POLICY_PARAMS } from "./augment.js";
import { Embedder, RawImageData } from "./embedder.js";
import { BundleData, writeBundle } from "./bundle.js";
import { Rng } from "./rng.js";

export interface ExtractionJob {
  imageRoot: string;
  classNames: string[];
  template: string; // must contain one "{}" placeholder
  strongViews: number;
  outDir: string;
  seed: number;
}

export function validateJob(job: ExtractionJob): void {
  if (job.strongViews < 1) throw new Error("strong views must be >= 1");
  if (job.classNames.length === 0) throw new Error("class list is empty");
  if (new Set(job.classNames).size !== job.classNames.length) {
    throw new Error("class names must be unique");
  }
  if (!job.template.includes("{}")) {
    throw new Error(`template must contain a {} placeholder: "${job.template}"`);
  }
}

export function readClassFile(file: string): string[] {
  return fs.readFileSync(file, "utf-8")
    .split("\n").map((l) => l.trim()).filter((l) => l.length > 0);
}

async function readImage(file: string): Promise<RawImageData | null> {
  try {
    const { data, info } = await sharp(file).raw()
      .toBuffer({ resolveWithObject: true });
    return { data: new Uint8Array(data), width: info.width,
             height: info.height, channels: info.channels };
  } catch (e) {
    console.warn(`skipping unreadable image ${file}: ${(e as Error).message}`);
    return null;
  }
}

function listImages(dir: string): string[] {
  if (!fs.existsSync(dir)) return [];
  return fs.readdirSync(dir).filter((f) => /\.(png|jpe?g|webp|gif|tiff?)$/i.test(f))
    .sort().map((f) => path.join(dir, f));
}

export async function embedText(embedder: Embedder, classNames: string[],
                                template: string): Promise<Float64Array[]> {
  if (new Set(classNames).size !== classNames.length) {
    throw new Error("class names must be unique");
  }
  if (!template.includes("{}")) {
    throw new Error("template must contain a {} placeholder");
  }
  const rows: Float64Array[] = [];
  for (const name of classNames) {
    rows.push(await embedder.embedText(template.replace("{}", name)));
  }
  return rows;
}

interface SplitResult {
  rows: Float64Array[];
  labels: number[];
  strong: Float64Array[];
}

async function embedSplit(job: ExtractionJob, embedder: Embedder, split: string,
                          rng: Rng, withStrong: boolean): Promise<SplitResult> {
  const rows: Float64Array[] = [];
  const labels: number[] = [];
  const strong: Float64Array[] = [];
  for (let ci = 0; ci < job.classNames.length; ci++) {
    const dir = path.join(job.imageRoot, split, job.classNames[ci]);
    for (const file of listImages(dir)) {
      const img = await readImage(file);
      if (img === null) continue;
      const stream = rng.fork(`${split}/${job.classNames[ci]}/${path.basename(file)}`);
      const weak = await augment(img, "weak", stream);
      rows.push(await embedder.embedImage(weak));
      labels.push(ci);
      if (withStrong) {
        for (let v = 0; v < job.strongViews; v++) {
          const view = await augment(img, "strong", stream);
          strong.push(await embedder.embedImage(view));
        }
      }
    }
  }
  return { rows, labels, strong };
}

export async function runExtraction(job: ExtractionJob,
                                    embedder: Embedder): Promise<BundleData> {
  validateJob(job);
  const rng = new Rng(job.seed);
  const labeled = await embedSplit(job, embedder, "labeled", rng, false);
  const unlabeled = await embedSplit(job, embedder, "unlabeled", rng, true);
  const retrieved = await embedSplit(job, embedder, "retrieved", rng, false);
  const test = await embedSplit(job, embedder, "test", rng, false);
  const text = await embedText(embedder, job.classNames, job.template);

  const bundle: BundleData = {
    numClasses: job.classNames.length,
    dim: embedder.dim,
    strongViews: job.strongViews,
    classNames: job.classNames,
    labeled: labeled.rows,
    labeledLabels: labeled.labels,
    unlabeledWeak: unlabeled.rows,
    unlabeledStrong: unlabeled.strong,
    unlabeledTruth: unlabeled.labels,
    retrieved: retrieved.rows,
    retrievedLabels: retrieved.labels,
    test: test.rows,
    testLabels: test.labels,
    text,
    provenance: {
      model: embedder.name,
      seed: job.seed,
      template: job.template,
      augmentation: POLICY_PARAMS,
    },
  };
  writeBundle(bundle, job.outDir);
  return bundle;
}
