#!/usr/bin/env node
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { extract } from "./extract";

const argv = yargs(hideBin(process.argv))
  .scriptName("milfeat-extract")
  .usage("$0 --images DIR --labels SRC --format voc|csv --out archive.milfeat")
  .option("images", { type: "string", demandOption: true, describe: "image directory" })
  .option("labels", { type: "string", demandOption: true, describe: "annotation source (VOC xml dir or CSV file)" })
  .option("format", { choices: ["voc", "csv"] as const, default: "csv" as const })
  .option("out", { type: "string", demandOption: true, describe: "output archive (.milfeat)" })
  .option("gt-out", { type: "string", describe: "ground-truth output (default <stem>.gt.jsonl)" })
  .option("boxes", { type: "number", default: 300, describe: "regions kept per image" })
  .option("dim", { type: "number", default: 2048, describe: "feature dimension" })
  .option("resize", { type: "string", default: "600x1000", describe: "canvas HxW" })
  .option("backbone", { type: "string", default: "stub" })
  .option("classes", { type: "string", describe: "comma-separated class list (default: from annotations)" })
  .option("test-ids", { type: "string", describe: "file of image ids for the test split" })
  .strict()
  .parseSync();

const m = /^(\d+)x(\d+)$/.exec(argv.resize);
if (!m) {
  console.error(`error: --resize must look like 600x1000, got ${argv.resize}`);
  process.exit(1);
}

try {
  const summary = extract({
    imageRoot: argv.images,
    annotationSource: argv.labels,
    annotationFormat: argv.format,
    outPath: argv.out,
    gtOutPath: argv["gt-out"],
    boxesToKeep: argv.boxes,
    featureDim: argv.dim,
    resizeHeight: parseInt(m[1], 10),
    resizeWidth: parseInt(m[2], 10),
    backbone: argv.backbone,
    classNames: argv.classes ? argv.classes.split(",").map((c) => c.trim()) : undefined,
    testIdsFile: argv["test-ids"],
  });
  console.log(
    `wrote ${argv.out}: ${summary.imagesWritten} images, ` +
      `${summary.groundTruthBoxes} ground-truth boxes, ` +
      `classes: ${summary.classNames.join(", ")}`,
  );
  if (summary.imagesSkipped.length > 0) {
    console.log(`skipped (unreadable): ${summary.imagesSkipped.length}`);
  }
  if (summary.imagesUnlabeled.length > 0) {
    console.log(`excluded (no annotations): ${summary.imagesUnlabeled.length}`);
  }
} catch (err) {
  console.error(`error: ${err instanceof Error ? err.message : err}`);
  process.exit(1);
}
