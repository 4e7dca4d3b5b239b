/** Image loading: PNG, JPEG and binary PPM/PGM, decoded to [0,1] luminance. */

import * as fs from "fs";
import * as path from "path";
import { GrayImage } from "./types";

export const SUPPORTED_EXTENSIONS = [".png", ".jpg", ".jpeg", ".ppm", ".pgm"];

export function isSupportedImage(file: string): boolean {
  return SUPPORTED_EXTENSIONS.includes(path.extname(file).toLowerCase());
}

export function imageId(file: string): string {
  return path.basename(file).replace(/\.[^.]+$/, "");
}

function toGray(
  width: number,
  height: number,
  rgba: Uint8Array,
  channels: number,
): GrayImage {
  const data = new Float32Array(width * height);
  for (let i = 0; i < width * height; i++) {
    const o = i * channels;
    // Rec. 601 luma
    const y = 0.299 * rgba[o] + 0.587 * rgba[o + 1] + 0.114 * rgba[o + 2];
    data[i] = y / 255.0;
  }
  return { width, height, data };
}

function loadPng(file: string): GrayImage {
  const { PNG } = require("pngjs");
  const png = PNG.sync.read(fs.readFileSync(file));
  return toGray(png.width, png.height, png.data, 4);
}

function loadJpeg(file: string): GrayImage {
  const jpeg = require("jpeg-js");
  const img = jpeg.decode(fs.readFileSync(file), { useTArray: true });
  return toGray(img.width, img.height, img.data, 4);
}

/** Binary P5 (gray) / P6 (rgb), 8-bit. */
function loadPnm(file: string): GrayImage {
  const buf = fs.readFileSync(file);
  let pos = 0;
  const token = (): string => {
    while (pos < buf.length) {
      const c = String.fromCharCode(buf[pos]);
      if (c === "#") {
        while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      } else if (/\s/.test(c)) {
        pos++;
      } else {
        break;
      }
    }
    const start = pos;
    while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) pos++;
    return buf.toString("ascii", start, pos);
  };
  const magic = token();
  if (magic !== "P5" && magic !== "P6") {
    throw new Error(`${file}: only binary PGM (P5) / PPM (P6) supported`);
  }
  const width = parseInt(token(), 10);
  const height = parseInt(token(), 10);
  const maxval = parseInt(token(), 10);
  if (!(width > 0 && height > 0) || maxval > 255) {
    throw new Error(`${file}: unsupported PNM header`);
  }
  pos++; // single whitespace after maxval
  const data = new Float32Array(width * height);
  if (magic === "P5") {
    for (let i = 0; i < width * height; i++) data[i] = buf[pos + i] / maxval;
  } else {
    for (let i = 0; i < width * height; i++) {
      const o = pos + i * 3;
      data[i] =
        (0.299 * buf[o] + 0.587 * buf[o + 1] + 0.114 * buf[o + 2]) / maxval;
    }
  }
  return { width, height, data };
}

export function loadImage(file: string): GrayImage {
  const ext = path.extname(file).toLowerCase();
  if (ext === ".png") return loadPng(file);
  if (ext === ".jpg" || ext === ".jpeg") return loadJpeg(file);
  if (ext === ".ppm" || ext === ".pgm") return loadPnm(file);
  throw new Error(`${file}: unsupported image type`);
}

/** Bilinear resize to exactly width x height. */
export function resize(img: GrayImage, width: number, height: number): GrayImage {
  const out = new Float32Array(width * height);
  const sx = img.width / width;
  const sy = img.height / height;
  for (let y = 0; y < height; y++) {
    const fy = Math.min((y + 0.5) * sy - 0.5, img.height - 1);
    const y0 = Math.max(Math.floor(fy), 0);
    const y1 = Math.min(y0 + 1, img.height - 1);
    const wy = fy - y0;
    for (let x = 0; x < width; x++) {
      const fx = Math.min((x + 0.5) * sx - 0.5, img.width - 1);
      const x0 = Math.max(Math.floor(fx), 0);
      const x1 = Math.min(x0 + 1, img.width - 1);
      const wx = fx - x0;
      const a = img.data[y0 * img.width + x0];
      const b = img.data[y0 * img.width + x1];
      const c = img.data[y1 * img.width + x0];
      const d = img.data[y1 * img.width + x1];
      out[y * width + x] =
        a * (1 - wx) * (1 - wy) + b * wx * (1 - wy) + c * (1 - wx) * wy + d * wx * wy;
    }
  }
  return { width, height, data: out };
}
