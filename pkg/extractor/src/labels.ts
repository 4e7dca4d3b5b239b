/**
 * Image-level label sources: VOC-style XML directories and flat CSV files.
 *
 * VOC: one <image_id>.xml per image; a class is positive when any <object>
 * carries its <name>, every other class is negative. <bndbox> coordinates
 * become ground-truth records.
 *
 * CSV: header `image_id,class_name[,x1,y1,x2,y2[,ignore]]`. A row marks the
 * class present in the image; rows with coordinates also yield a
 * ground-truth box. Images never mentioned get no labels and are excluded.
 */

import * as fs from "fs";
import * as path from "path";
import { XMLParser } from "fast-xml-parser";
import { GroundTruthRecord, ImageLabels, LabelTable } from "./types";

function asArray<T>(v: T | T[] | undefined): T[] {
  if (v === undefined) return [];
  return Array.isArray(v) ? v : [v];
}

export function readVocLabels(dir: string, classNames?: string[]): LabelTable {
  const parser = new XMLParser({ ignoreAttributes: true });
  const files = fs
    .readdirSync(dir)
    .filter((f) => f.endsWith(".xml"))
    .sort();
  const presence = new Map<string, Set<string>>();
  const groundTruth: GroundTruthRecord[] = [];
  const seenClasses = new Set<string>();
  for (const file of files) {
    const imageId = file.replace(/\.xml$/, "");
    const doc = parser.parse(fs.readFileSync(path.join(dir, file), "utf-8"));
    const annotation = doc.annotation ?? {};
    const present = new Set<string>();
    for (const obj of asArray<any>(annotation.object)) {
      const name = String(obj.name);
      present.add(name);
      seenClasses.add(name);
      if (obj.bndbox) {
        const b = obj.bndbox;
        const x1 = Number(b.xmin);
        const y1 = Number(b.ymin);
        const x2 = Number(b.xmax);
        const y2 = Number(b.ymax);
        if (!(x1 < x2 && y1 < y2)) {
          throw new Error(`${file}: degenerate box for ${name}`);
        }
        groundTruth.push({
          image_id: imageId,
          class_name: name,
          box: { x1, y1, x2, y2 },
          ignore: Number(obj.difficult ?? 0) === 1,
        });
      }
    }
    presence.set(imageId, present);
  }
  const classes = classNames ?? [...seenClasses].sort();
  return finalize(presence, classes, groundTruth);
}

export function readCsvLabels(file: string, classNames?: string[]): LabelTable {
  const text = fs.readFileSync(file, "utf-8");
  const lines = text.split(/\r?\n/).filter((l) => l.trim().length > 0);
  if (lines.length === 0) {
    return { classNames: classNames ?? [], byImage: new Map(), groundTruth: [] };
  }
  const header = lines[0].split(",").map((h) => h.trim());
  const col = (name: string) => header.indexOf(name);
  if (col("image_id") < 0 || col("class_name") < 0) {
    throw new Error(`${file}: header must contain image_id,class_name`);
  }
  const presence = new Map<string, Set<string>>();
  const groundTruth: GroundTruthRecord[] = [];
  const seenClasses = new Set<string>();
  for (let i = 1; i < lines.length; i++) {
    const cells = lines[i].split(",").map((c) => c.trim());
    const imageId = cells[col("image_id")];
    const cls = cells[col("class_name")];
    if (!imageId) {
      throw new Error(`${file}:${i + 1}: empty image_id`);
    }
    if (!presence.has(imageId)) presence.set(imageId, new Set());
    if (cls) {
      presence.get(imageId)!.add(cls);
      seenClasses.add(cls);
    }
    const xi = col("x1");
    if (cls && xi >= 0 && cells[xi] !== undefined && cells[xi] !== "") {
      const x1 = Number(cells[col("x1")]);
      const y1 = Number(cells[col("y1")]);
      const x2 = Number(cells[col("x2")]);
      const y2 = Number(cells[col("y2")]);
      if (![x1, y1, x2, y2].every(Number.isFinite) || !(x1 < x2 && y1 < y2)) {
        throw new Error(`${file}:${i + 1}: bad box coordinates`);
      }
      const ig = col("ignore");
      groundTruth.push({
        image_id: imageId,
        class_name: cls,
        box: { x1, y1, x2, y2 },
        ignore: ig >= 0 && ["1", "true"].includes((cells[ig] ?? "").toLowerCase()),
      });
    }
  }
  const classes = classNames ?? [...seenClasses].sort();
  return finalize(presence, classes, groundTruth);
}

function finalize(
  presence: Map<string, Set<string>>,
  classes: string[],
  groundTruth: GroundTruthRecord[],
): LabelTable {
  const byImage = new Map<string, ImageLabels>();
  for (const [imageId, present] of presence) {
    const labels: Record<string, number> = {};
    for (const cls of classes) labels[cls] = present.has(cls) ? 1 : -1;
    byImage.set(imageId, { labels });
  }
  return { classNames: classes, byImage, groundTruth };
}

export function readLabels(
  source: string,
  format: "voc" | "csv",
  classNames?: string[],
): LabelTable {
  return format === "voc"
    ? readVocLabels(source, classNames)
    : readCsvLabels(source, classNames);
}
