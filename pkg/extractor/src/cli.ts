#!/usr/bin/env node
/** CLI: swift-extract extract --images DIR --classes FILE --template STR
 *                             --views K --out DIR --seed N [--model NAME]
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { createClipEmbedder, Embedder, MockEmbedder } from "./embedder.js";
import { readClassFile, runExtraction } from "./extract.js";

async function pickEmbedder(model: string): Promise<Embedder> {
  if (model === "mock") return new MockEmbedder();
  if (model === "clip") return createClipEmbedder();
  // auto: prefer the real model, degrade loudly to the mock
  try {
    return await createClipEmbedder();
  } catch (e) {
    console.warn(`falling back to mock embedder: ${(e as Error).message}`);
    return new MockEmbedder();
  }
}

export async function main(argv: string[]): Promise<number> {
  const parser = yargs(argv)
    .scriptName("swift-extract")
    .command("extract", "embed an image dataset into a bundle directory",
      (y) => y
        .option("images", { type: "string", demandOption: true,
                            describe: "image root (split/class/file layout)" })
        .option("classes", { type: "string", demandOption: true,
                             describe: "text file, one class name per line" })
        .option("template", { type: "string", default: "a photo of a {}",
                              describe: "prompt template with a {} placeholder" })
        .option("views", { type: "number", default: 4,
                           describe: "strong views per unlabeled image" })
        .option("out", { type: "string", demandOption: true })
        .option("seed", { type: "number", default: 0 })
        .option("model", { type: "string", default: "auto",
                           choices: ["auto", "clip", "mock"] }))
    .demandCommand(1)
    .strict()
    .exitProcess(false);

  const args = await parser.parseAsync();
  try {
    const embedder = await pickEmbedder(args.model as string);
    const bundle = await runExtraction({
      imageRoot: args.images as string,
      classNames: readClassFile(args.classes as string),
      template: args.template as string,
      strongViews: args.views as number,
      outDir: args.out as string,
      seed: args.seed as number,
    }, embedder);
    console.log(
      `wrote bundle to ${args.out} (model=${embedder.name}, d=${bundle.dim}, ` +
      `C=${bundle.numClasses}, L=${bundle.labeled.length}, ` +
      `U=${bundle.unlabeledWeak.length}, R=${bundle.retrieved.length}, ` +
      `test=${bundle.test.length})`);
    return 0;
  } catch (e) {
    console.error(JSON.stringify({ error: (e as Error).message }));
    return 1;
  }
}

const isDirectRun = process.argv[1] !== undefined &&
  import.meta.url.endsWith(process.argv[1].split("/").pop() as string);
if (isDirectRun) {
  main(hideBin(process.argv)).then((code) => { process.exitCode = code; });
}
