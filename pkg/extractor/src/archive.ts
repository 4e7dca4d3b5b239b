/**
 * MILFEAT archive writer (and a reader used by the tests).
 *
 * Byte layout, little-endian throughout:
 *   magic "MILFEAT" | version u8 | feature_dim u32
 *   per image, at the offset stored in the manifest:
 *     region_count u32
 *     region_count records of [x1 y1 x2 y2 objectness feature[M]] float32
 *
 * The manifest is a JSON document next to the blob
 * (`<stem>.manifest.json`), ground truth is JSON-lines (`<stem>.gt.jsonl`).
 */

import * as fs from "fs";
import { Box, GroundTruthRecord, RegionProposal } from "./types";

export const MAGIC = "MILFEAT";
export const FORMAT_VERSION = 1;
const HEADER_SIZE = MAGIC.length + 1 + 4;
const FIXED_FLOATS = 5; // x1 y1 x2 y2 objectness

export interface ManifestImage {
  image_id: string;
  split: string;
  labels: Record<string, number>;
  region_count: number;
  offset: number;
}

export interface Manifest {
  format_version: number;
  dataset_name: string;
  class_names: string[];
  feature_dim: number;
  images: ManifestImage[];
}

export function manifestPath(blobPath: string): string {
  return stem(blobPath) + ".manifest.json";
}

export function groundTruthPath(blobPath: string): string {
  return stem(blobPath) + ".gt.jsonl";
}

function stem(blobPath: string): string {
  return blobPath.endsWith(".milfeat")
    ? blobPath.slice(0, -".milfeat".length)
    : blobPath;
}

export class ArchiveWriter {
  private fd: number;
  private tmpPath: string;
  private offset: number;
  private images: ManifestImage[] = [];
  private closed = false;

  constructor(
    private path: string,
    private classNames: string[],
    private featureDim: number,
    private datasetName = "dataset",
  ) {
    this.tmpPath = path + ".tmp";
    this.fd = fs.openSync(this.tmpPath, "w");
    const header = Buffer.alloc(HEADER_SIZE);
    header.write(MAGIC, 0, "ascii");
    header.writeUInt8(FORMAT_VERSION, MAGIC.length);
    header.writeUInt32LE(featureDim, MAGIC.length + 1);
    fs.writeSync(this.fd, header);
    this.offset = HEADER_SIZE;
  }

  add(
    imageId: string,
    regions: RegionProposal[],
    labels: Record<string, number>,
    split = "train",
  ): void {
    if (regions.length === 0) {
      throw new Error(`image ${imageId}: archives require at least one region`);
    }
    for (const cls of this.classNames) {
      if (!(cls in labels)) {
        throw new Error(`image ${imageId}: missing label for class ${cls}`);
      }
    }
    const k = regions.length;
    const recordFloats = FIXED_FLOATS + this.featureDim;
    const block = Buffer.alloc(4 + k * recordFloats * 4);
    block.writeUInt32LE(k, 0);
    let pos = 4;
    for (const r of regions) {
      if (r.feature.length !== this.featureDim) {
        throw new Error(
          `image ${imageId}: feature dim ${r.feature.length} != ${this.featureDim}`,
        );
      }
      block.writeFloatLE(r.box.x1, pos);
      block.writeFloatLE(r.box.y1, pos + 4);
      block.writeFloatLE(r.box.x2, pos + 8);
      block.writeFloatLE(r.box.y2, pos + 12);
      block.writeFloatLE(r.objectness, pos + 16);
      pos += 20;
      for (let i = 0; i < this.featureDim; i++) {
        block.writeFloatLE(r.feature[i], pos);
        pos += 4;
      }
    }
    fs.writeSync(this.fd, block);
    const orderedLabels: Record<string, number> = {};
    for (const cls of this.classNames) orderedLabels[cls] = labels[cls];
    this.images.push({
      image_id: imageId,
      split,
      labels: orderedLabels,
      region_count: k,
      offset: this.offset,
    });
    this.offset += block.length;
  }

  close(): void {
    if (this.closed) return;
    fs.closeSync(this.fd);
    fs.renameSync(this.tmpPath, this.path);
    const manifest: Manifest = {
      format_version: FORMAT_VERSION,
      dataset_name: this.datasetName,
      class_names: this.classNames,
      feature_dim: this.featureDim,
      images: this.images,
    };
    const mPath = manifestPath(this.path);
    fs.writeFileSync(mPath + ".tmp", JSON.stringify(manifest, null, 2));
    fs.renameSync(mPath + ".tmp", mPath);
    this.closed = true;
  }

  abort(): void {
    if (this.closed) return;
    fs.closeSync(this.fd);
    if (fs.existsSync(this.tmpPath)) fs.unlinkSync(this.tmpPath);
    this.closed = true;
  }
}

export function writeGroundTruth(records: GroundTruthRecord[], path: string): void {
  const lines = records.map((g) =>
    JSON.stringify({
      class_name: g.class_name,
      ignore: g.ignore,
      image_id: g.image_id,
      x1: g.box.x1,
      x2: g.box.x2,
      y1: g.box.y1,
      y2: g.box.y2,
    }),
  );
  fs.writeFileSync(path + ".tmp", lines.length ? lines.join("\n") + "\n" : "");
  fs.renameSync(path + ".tmp", path);
}

export interface ReadRegion {
  box: Box;
  objectness: number;
  feature: Float32Array;
}

export interface ReadBag {
  imageId: string;
  split: string;
  labels: Record<string, number>;
  regions: ReadRegion[];
}

/** Test-side reader: verifies the writer against the documented layout. */
export function readArchive(path: string): { manifest: Manifest; bags: ReadBag[] } {
  const manifest: Manifest = JSON.parse(fs.readFileSync(manifestPath(path), "utf-8"));
  const blob = fs.readFileSync(path);
  if (blob.toString("ascii", 0, MAGIC.length) !== MAGIC) {
    throw new Error(`${path}: bad magic`);
  }
  if (blob.readUInt8(MAGIC.length) !== FORMAT_VERSION) {
    throw new Error(`${path}: unsupported version`);
  }
  const dim = blob.readUInt32LE(MAGIC.length + 1);
  if (dim !== manifest.feature_dim) {
    throw new Error(`${path}: blob dim ${dim} != manifest ${manifest.feature_dim}`);
  }
  const bags: ReadBag[] = [];
  for (const entry of manifest.images) {
    let pos = entry.offset;
    const k = blob.readUInt32LE(pos);
    if (k !== entry.region_count) {
      throw new Error(`image ${entry.image_id}: region count mismatch`);
    }
    pos += 4;
    const regions: ReadRegion[] = [];
    for (let j = 0; j < k; j++) {
      const box: Box = {
        x1: blob.readFloatLE(pos),
        y1: blob.readFloatLE(pos + 4),
        x2: blob.readFloatLE(pos + 8),
        y2: blob.readFloatLE(pos + 12),
      };
      const objectness = blob.readFloatLE(pos + 16);
      pos += 20;
      const feature = new Float32Array(dim);
      for (let i = 0; i < dim; i++) {
        feature[i] = blob.readFloatLE(pos);
        pos += 4;
      }
      regions.push({ box, objectness, feature });
    }
    bags.push({
      imageId: entry.image_id,
      split: entry.split,
      labels: entry.labels,
      regions,
    });
  }
  return { manifest, bags };
}
