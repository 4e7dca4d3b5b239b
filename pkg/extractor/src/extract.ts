/**
 * The extraction pipeline: images -> resized canvas -> backbone proposals ->
 * boxes mapped back to original pixels -> MILFEAT archive + ground truth.
 */

import * as fs from "fs";
import * as path from "path";
import { ArchiveWriter, groundTruthPath, writeGroundTruth } from "./archive";
import { createBackbone } from "./backbone";
import { imageId, isSupportedImage, loadImage, resize } from "./images";
import { readLabels } from "./labels";
import { Box, ExtractionConfig, RegionProposal } from "./types";

export interface ExtractionSummary {
  imagesWritten: number;
  imagesSkipped: string[];
  imagesUnlabeled: string[];
  groundTruthBoxes: number;
  classNames: string[];
}

function clampBox(b: Box, width: number, height: number): Box {
  const x1 = Math.min(Math.max(b.x1, 0), width - 1);
  const y1 = Math.min(Math.max(b.y1, 0), height - 1);
  const x2 = Math.max(Math.min(b.x2, width), x1 + 1e-3);
  const y2 = Math.max(Math.min(b.y2, height), y1 + 1e-3);
  return { x1, y1, x2, y2 };
}

export function extract(cfg: ExtractionConfig): ExtractionSummary {
  if (cfg.boxesToKeep < 1) throw new Error("boxesToKeep must be >= 1");
  const backbone = createBackbone(cfg.backbone, cfg.featureDim);
  const table = readLabels(cfg.annotationSource, cfg.annotationFormat, cfg.classNames);
  if (table.classNames.length === 0) {
    throw new Error("annotation source yields no classes");
  }
  const testIds = new Set<string>(
    cfg.testIdsFile
      ? fs
          .readFileSync(cfg.testIdsFile, "utf-8")
          .split(/\r?\n/)
          .map((l) => l.trim())
          .filter(Boolean)
      : [],
  );

  const files = fs
    .readdirSync(cfg.imageRoot)
    .filter(isSupportedImage)
    .sort();
  const summary: ExtractionSummary = {
    imagesWritten: 0,
    imagesSkipped: [],
    imagesUnlabeled: [],
    groundTruthBoxes: 0,
    classNames: table.classNames,
  };

  const writer = new ArchiveWriter(
    cfg.outPath,
    table.classNames,
    cfg.featureDim,
    path.basename(cfg.imageRoot),
  );
  const writtenIds = new Set<string>();
  try {
    for (const file of files) {
      const id = imageId(file);
      const entry = table.byImage.get(id);
      if (!entry) {
        console.warn(`warning: ${file}: no annotation entry, excluded`);
        summary.imagesUnlabeled.push(id);
        continue;
      }
      let regions: RegionProposal[];
      let origW: number;
      let origH: number;
      try {
        const img = loadImage(path.join(cfg.imageRoot, file));
        origW = img.width;
        origH = img.height;
        const canvas = resize(img, cfg.resizeWidth, cfg.resizeHeight);
        regions = backbone.propose(canvas, cfg.boxesToKeep).regions;
      } catch (err) {
        console.warn(`warning: ${file}: unreadable (${err}), skipped`);
        summary.imagesSkipped.push(id);
        continue;
      }
      // map canvas boxes back to original pixel space, clamp objectness
      const sx = origW / cfg.resizeWidth;
      const sy = origH / cfg.resizeHeight;
      const mapped = regions.map((r) => ({
        box: clampBox(
          { x1: r.box.x1 * sx, y1: r.box.y1 * sy, x2: r.box.x2 * sx, y2: r.box.y2 * sy },
          origW,
          origH,
        ),
        objectness: Math.min(Math.max(r.objectness, 0), 1),
        feature: r.feature,
      }));
      if (mapped.length === 0) {
        console.warn(`warning: ${file}: backbone proposed no regions, skipped`);
        summary.imagesSkipped.push(id);
        continue;
      }
      writer.add(id, mapped, entry.labels, testIds.has(id) ? "test" : "train");
      writtenIds.add(id);
      summary.imagesWritten++;
    }
    writer.close();
  } catch (err) {
    writer.abort();
    throw err;
  }

  const gts = table.groundTruth.filter((g) => writtenIds.has(g.image_id));
  writeGroundTruth(gts, cfg.gtOutPath ?? groundTruthPath(cfg.outPath));
  summary.groundTruthBoxes = gts.length;
  return summary;
}
