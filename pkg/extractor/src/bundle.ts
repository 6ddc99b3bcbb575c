/** Writes the engine's bundle container: manifest.json plus raw little-endian
 * blobs (float32 embeddings, uint32 labels).
 */

import * as fs from "node:fs";
import * as path from "node:path";

const FORMAT_VERSION = 1;

export interface BundleData {
  numClasses: number;
  dim: number;
  strongViews: number;
  classNames: string[];
  labeled: Float64Array[];
  labeledLabels: number[];
  unlabeledWeak: Float64Array[];
  /** Sample-major: the k views of unlabeled sample i occupy rows i*k..i*k+k-1. */
  unlabeledStrong: Float64Array[];
  unlabeledTruth: number[] | null;
  retrieved: Float64Array[];
  retrievedLabels: number[];
  test: Float64Array[];
  testLabels: number[];
  text: Float64Array[];
  /** Free-form provenance (model id, augmentation params, seed). */
  provenance?: Record<string, unknown>;
}

function f32Blob(rows: Float64Array[], dim: number): Buffer {
  const buf = Buffer.alloc(rows.length * dim * 4);
  let off = 0;
  for (const row of rows) {
    if (row.length !== dim) {
      throw new Error(`embedding row has length ${row.length}, expected ${dim}`);
    }
    for (let j = 0; j < dim; j++) {
      buf.writeFloatLE(row[j], off);
      off += 4;
    }
  }
  return buf;
}

function u32Blob(labels: number[]): Buffer {
  const buf = Buffer.alloc(labels.length * 4);
  labels.forEach((v, i) => buf.writeUInt32LE(v, i * 4));
  return buf;
}

export function validateBundle(b: BundleData): void {
  if (b.numClasses < 2) throw new Error("need at least two classes");
  if (b.classNames.length !== b.numClasses) throw new Error("class name count mismatch");
  if (b.text.length !== b.numClasses) throw new Error("text table must have one row per class");
  if (b.strongViews < 1) throw new Error("strongViews must be >= 1");
  if (b.unlabeledStrong.length !== b.unlabeledWeak.length * b.strongViews) {
    throw new Error("strong view count must be strongViews * unlabeled count");
  }
  const pairs: Array<[Float64Array[], number[] | null, string]> = [
    [b.labeled, b.labeledLabels, "labeled"],
    [b.retrieved, b.retrievedLabels, "retrieved"],
    [b.test, b.testLabels, "test"],
    [b.unlabeledWeak, b.unlabeledTruth, "unlabeled"],
  ];
  for (const [rows, labels, name] of pairs) {
    if (labels === null) continue;
    if (rows.length !== labels.length) throw new Error(`${name} label count mismatch`);
    for (const l of labels) {
      if (!Number.isInteger(l) || l < 0 || l >= b.numClasses) {
        throw new Error(`${name} label ${l} out of range [0, ${b.numClasses})`);
      }
    }
  }
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) return value.map(sortKeys);
  if (value !== null && typeof value === "object") {
    const out: Record<string, unknown> = {};
    for (const k of Object.keys(value).sort()) {
      out[k] = sortKeys((value as Record<string, unknown>)[k]);
    }
    return out;
  }
  return value;
}

export function writeBundle(b: BundleData, outDir: string): void {
  validateBundle(b);
  fs.mkdirSync(outDir, { recursive: true });
  const manifest: Record<string, unknown> = {
    format_version: FORMAT_VERSION,
    dim: b.dim,
    num_classes: b.numClasses,
    strong_views: b.strongViews,
    normalized: true,
    counts: {
      labeled: b.labeled.length,
      unlabeled: b.unlabeledWeak.length,
      retrieved: b.retrieved.length,
      test: b.test.length,
    },
    class_names: b.classNames,
    has_unlabeled_truth: b.unlabeledTruth !== null,
  };
  if (b.provenance) manifest.provenance = b.provenance;
  fs.writeFileSync(path.join(outDir, "manifest.json"),
                   JSON.stringify(sortKeys(manifest), null, 2));
  const write = (name: string, blob: Buffer) =>
    fs.writeFileSync(path.join(outDir, name), blob);
  write("labeled.f32", f32Blob(b.labeled, b.dim));
  write("labeled.labels.u32", u32Blob(b.labeledLabels));
  write("unlabeled.weak.f32", f32Blob(b.unlabeledWeak, b.dim));
  write("unlabeled.strong.f32", f32Blob(b.unlabeledStrong, b.dim));
  if (b.unlabeledTruth !== null) {
    write("unlabeled.truth.u32", u32Blob(b.unlabeledTruth));
  }
  write("retrieved.f32", f32Blob(b.retrieved, b.dim));
  write("retrieved.labels.u32", u32Blob(b.retrievedLabels));
  write("test.f32", f32Blob(b.test, b.dim));
  write("test.labels.u32", u32Blob(b.testLabels));
  write("text.f32", f32Blob(b.text, b.dim));
}
