import { execFileSync } from "child_process";
import * as fs from "fs";
import * as path from "path";
import { describe, expect, it } from "vitest";
import { readArchive } from "../src/archive";
import { extract } from "../src/extract";
import { squareImage, tmpDir, writePgm } from "./helpers";

interface Scene {
  dir: string;
  imagesDir: string;
  labelsCsv: string;
}

/**
 * Six synthetic images: three with a textured square ("blob" positives, with
 * boxes) and three flat-noise negatives.
 */
function makeScene(): Scene {
  const dir = tmpDir("scene");
  const imagesDir = path.join(dir, "images");
  fs.mkdirSync(imagesDir);
  const rows: string[] = ["image_id,class_name,x1,y1,x2,y2,ignore"];
  const w = 320;
  const h = 240;
  for (let i = 0; i < 6; i++) {
    const id = `im${i}`;
    if (i < 3) {
      const x = 30 + 40 * i;
      const y = 40 + 20 * i;
      const size = 80;
      writePgm(path.join(imagesDir, `${id}.pgm`), w, h, squareImage(w, h, x, y, size));
      rows.push(`${id},blob,${x},${y},${x + size},${y + size},0`);
    } else {
      // low-contrast background only
      const px = new Uint8Array(w * h);
      for (let j = 0; j < px.length; j++) px[j] = 20 + ((j * 7919) % 5);
      writePgm(path.join(imagesDir, `${id}.pgm`), w, h, px);
      rows.push(`${id},,,,,,`);
    }
  }
  const labelsCsv = path.join(dir, "labels.csv");
  fs.writeFileSync(labelsCsv, rows.join("\n"));
  return { dir, imagesDir, labelsCsv };
}

function runExtract(scene: Scene, out: string, dim = 32) {
  return extract({
    imageRoot: scene.imagesDir,
    annotationSource: scene.labelsCsv,
    annotationFormat: "csv",
    outPath: out,
    boxesToKeep: 40,
    featureDim: dim,
    resizeHeight: 120,
    resizeWidth: 200,
    backbone: "stub",
  });
}

describe("extract", () => {
  it("writes a valid archive with labels, splits and ground truth", () => {
    const scene = makeScene();
    const out = path.join(scene.dir, "scene.milfeat");
    const summary = runExtract(scene, out);
    expect(summary.imagesWritten).toBe(6);
    expect(summary.classNames).toEqual(["blob"]);
    expect(summary.groundTruthBoxes).toBe(3);

    const { manifest, bags } = readArchive(out);
    expect(manifest.images).toHaveLength(6);
    for (const bag of bags) {
      expect(bag.regions.length).toBeGreaterThan(0);
      expect(bag.regions.length).toBeLessThanOrEqual(40);
      const label = bag.labels.blob;
      expect(label === 1 || label === -1).toBe(true);
      for (const r of bag.regions) {
        // boxes are back in the original 320x240 pixel space
        expect(r.box.x2).toBeLessThanOrEqual(320);
        expect(r.box.y2).toBeLessThanOrEqual(240);
        expect(r.box.x1).toBeGreaterThanOrEqual(0);
        expect(r.objectness).toBeGreaterThanOrEqual(0);
        expect(r.objectness).toBeLessThanOrEqual(1);
      }
    }
    const positive = bags.filter((b) => b.labels.blob === 1);
    expect(positive).toHaveLength(3);
  });

  it("is deterministic: same inputs, identical bytes", () => {
    const scene = makeScene();
    const a = path.join(scene.dir, "a.milfeat");
    const b = path.join(scene.dir, "b.milfeat");
    runExtract(scene, a);
    runExtract(scene, b);
    expect(fs.readFileSync(a).equals(fs.readFileSync(b))).toBe(true);
  });

  it("excludes unannotated images with a warning and survives unreadable files", () => {
    const scene = makeScene();
    // an image with no annotation row, plus an annotated-but-corrupt file
    writePgm(path.join(scene.imagesDir, "orphan.pgm"), 50, 50,
             squareImage(50, 50, 10, 10, 20));
    fs.writeFileSync(path.join(scene.imagesDir, "broken.pgm"), "P5 not really");
    fs.appendFileSync(scene.labelsCsv, "\nbroken,,,,,,");
    const out = path.join(scene.dir, "robust.milfeat");
    const summary = runExtract(scene, out);
    expect(summary.imagesWritten).toBe(6);
    expect(summary.imagesUnlabeled).toContain("orphan");
    expect(summary.imagesSkipped).toContain("broken");
  });

  it("assigns the test split from a test-ids file", () => {
    const scene = makeScene();
    const idsFile = path.join(scene.dir, "test_ids.txt");
    fs.writeFileSync(idsFile, "im1\nim4\n");
    const out = path.join(scene.dir, "split.milfeat");
    extract({
      imageRoot: scene.imagesDir,
      annotationSource: scene.labelsCsv,
      annotationFormat: "csv",
      outPath: out,
      boxesToKeep: 20,
      featureDim: 16,
      resizeHeight: 120,
      resizeWidth: 200,
      backbone: "stub",
      testIdsFile: idsFile,
    });
    const { manifest } = readArchive(out);
    const splits = Object.fromEntries(manifest.images.map((i) => [i.image_id, i.split]));
    expect(splits.im1).toBe("test");
    expect(splits.im4).toBe("test");
    expect(splits.im0).toBe("train");
  });

  it("archives feed the Python toolkit end to end", () => {
    let pythonOk = true;
    try {
      execFileSync("python3", ["-c", "import mildet"], { stdio: "ignore" });
    } catch {
      pythonOk = false;
    }
    if (!pythonOk) {
      console.warn("python3 + mildet not importable; skipping integration");
      return;
    }
    const scene = makeScene();
    const out = path.join(scene.dir, "integration.milfeat");
    runExtract(scene, out);
    const model = path.join(scene.dir, "model.json");
    // consume through the toolkit's public CLI only
    execFileSync("python3", [
      "-m", "mildet.cli", "train",
      "--features", out, "--class", "blob",
      "--restarts", "1", "--iters", "10", "--out", model,
    ], { stdio: "pipe" });
    expect(fs.existsSync(model)).toBe(true);
    const dets = path.join(scene.dir, "dets.jsonl");
    execFileSync("python3", [
      "-m", "mildet.cli", "detect",
      "--features", out, "--model", model, "--out", dets,
    ], { stdio: "pipe" });
    const report = path.join(scene.dir, "report");
    execFileSync("python3", [
      "-m", "mildet.cli", "eval",
      "--detections", dets,
      "--gt", out.replace(/\.milfeat$/, ".gt.jsonl"),
      "--features", out,
      "--out", report,
    ], { stdio: "pipe" });
    const doc = JSON.parse(fs.readFileSync(report + ".json", "utf-8"));
    expect(doc.class_names).toEqual(["blob"]);
    expect(doc.detection_ap["0.5"]).toHaveProperty("blob");
  });
});
