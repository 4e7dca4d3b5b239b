import * as fs from "fs";
import * as path from "path";
import { describe, expect, it } from "vitest";
import {
  ArchiveWriter,
  groundTruthPath,
  manifestPath,
  readArchive,
  writeGroundTruth,
} from "../src/archive";
import { RegionProposal } from "../src/types";
import { tmpDir } from "./helpers";

function region(x1: number, y1: number, x2: number, y2: number, obj: number,
                feature: number[]): RegionProposal {
  return { box: { x1, y1, x2, y2 }, objectness: obj, feature: Float32Array.from(feature) };
}

describe("ArchiveWriter", () => {
  it("lays out bytes exactly as documented", () => {
    const dir = tmpDir("arch");
    const out = path.join(dir, "t.milfeat");
    const w = new ArchiveWriter(out, ["c"], 2, "unit");
    w.add("img0", [region(1, 2, 3, 4, 0.5, [1.5, -2.25])], { c: 1 });
    w.close();

    const blob = fs.readFileSync(out);
    // header: magic + version + dim
    expect(blob.toString("ascii", 0, 7)).toBe("MILFEAT");
    expect(blob.readUInt8(7)).toBe(1);
    expect(blob.readUInt32LE(8)).toBe(2);
    // image block at offset 12: K then 7 float32 values
    expect(blob.readUInt32LE(12)).toBe(1);
    const floats = [1, 2, 3, 4, 0.5, 1.5, -2.25];
    floats.forEach((v, i) => {
      expect(blob.readFloatLE(16 + 4 * i)).toBeCloseTo(v, 6);
    });
    expect(blob.length).toBe(12 + 4 + 7 * 4);

    const manifest = JSON.parse(fs.readFileSync(manifestPath(out), "utf-8"));
    expect(manifest.format_version).toBe(1);
    expect(manifest.feature_dim).toBe(2);
    expect(manifest.class_names).toEqual(["c"]);
    expect(manifest.images[0]).toEqual({
      image_id: "img0",
      split: "train",
      labels: { c: 1 },
      region_count: 1,
      offset: 12,
    });
  });

  it("blob size follows the layout arithmetic (2 bags, M=4, K=3)", () => {
    const dir = tmpDir("arch");
    const out = path.join(dir, "sized.milfeat");
    const w = new ArchiveWriter(out, ["c"], 4, "unit");
    for (let i = 0; i < 2; i++) {
      const regions = [0, 1, 2].map((k) =>
        region(k, 0, k + 1, 1, 0.25, [0.5, 1, 2, 4]),
      );
      w.add(`img${i}`, regions, { c: i === 0 ? 1 : -1 });
    }
    w.close();
    expect(fs.statSync(out).size).toBe(12 + 2 * (4 + 3 * (4 + 1 + 4) * 4));
  });

  it("round-trips through the reader bit-exactly", () => {
    const dir = tmpDir("arch");
    const out = path.join(dir, "rt.milfeat");
    const w = new ArchiveWriter(out, ["a", "b"], 3, "unit");
    const feats = [
      [0.1, -0.2, 0.3],
      [9.75, 0.015625, -3],
    ];
    w.add("first", [region(0, 0, 5, 5, 0.125, feats[0])], { a: 1, b: -1 }, "train");
    w.add("second", [region(2, 2, 8, 9, 1.0, feats[1])], { a: -1, b: 1 }, "test");
    w.close();

    const { manifest, bags } = readArchive(out);
    expect(manifest.images.map((i) => i.image_id)).toEqual(["first", "second"]);
    expect(bags[0].labels).toEqual({ a: 1, b: -1 });
    expect(bags[1].split).toBe("test");
    // float32 round trip is exact
    expect(Array.from(bags[0].regions[0].feature)).toEqual(
      Array.from(Float32Array.from(feats[0])),
    );
    expect(bags[1].regions[0].objectness).toBe(1.0);
    expect(bags[1].regions[0].box).toEqual({ x1: 2, y1: 2, x2: 8, y2: 9 });
  });

  it("rejects a missing class label", () => {
    const dir = tmpDir("arch");
    const w = new ArchiveWriter(path.join(dir, "x.milfeat"), ["a", "b"], 2, "unit");
    expect(() => w.add("img", [region(0, 0, 1, 1, 0, [1, 2])], { a: 1 })).toThrow(
      /missing label/,
    );
    w.abort();
  });

  it("rejects a feature dim mismatch", () => {
    const dir = tmpDir("arch");
    const w = new ArchiveWriter(path.join(dir, "x.milfeat"), ["a"], 3, "unit");
    expect(() => w.add("img", [region(0, 0, 1, 1, 0, [1, 2])], { a: 1 })).toThrow(
      /feature dim/,
    );
    w.abort();
  });
});

describe("writeGroundTruth", () => {
  it("emits one JSON record per line", () => {
    const dir = tmpDir("gt");
    const out = path.join(dir, "x.gt.jsonl");
    writeGroundTruth(
      [
        { image_id: "a", class_name: "cat", box: { x1: 1, y1: 2, x2: 3, y2: 4 }, ignore: false },
        { image_id: "b", class_name: "dog", box: { x1: 0, y1: 0, x2: 9, y2: 9 }, ignore: true },
      ],
      out,
    );
    const lines = fs.readFileSync(out, "utf-8").trim().split("\n");
    expect(lines).toHaveLength(2);
    const rec = JSON.parse(lines[0]);
    expect(rec).toEqual({
      image_id: "a", class_name: "cat", x1: 1, y1: 2, x2: 3, y2: 4, ignore: false,
    });
    expect(groundTruthPath("/d/x.milfeat")).toBe("/d/x.gt.jsonl");
  });
});
