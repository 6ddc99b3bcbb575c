export { Rng } from "./rng.js";
export { Embedder, MockEmbedder, RawImageData, createClipEmbedder,
         l2Normalize } from "./embedder.js";
export { AugmentPolicy, POLICY_PARAMS, augment } from "./augment.js";
export { BundleData, validateBundle, writeBundle } from "./bundle.js";
export { ExtractionJob, embedText, readClassFile, runExtraction,
         validateJob } from "./extract.js";
