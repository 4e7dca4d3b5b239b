import * as fs from "fs";
import * as path from "path";

/** Write an 8-bit binary PGM (P5). pixels: row-major values in [0,255]. */
export function writePgm(
  file: string,
  width: number,
  height: number,
  pixels: Uint8Array,
): void {
  const header = Buffer.from(`P5\n${width} ${height}\n255\n`, "ascii");
  fs.writeFileSync(file, Buffer.concat([header, Buffer.from(pixels)]));
}

/** Dark background with a bright textured square at (x, y, size). */
export function squareImage(
  width: number,
  height: number,
  x: number,
  y: number,
  size: number,
): Uint8Array {
  const px = new Uint8Array(width * height);
  px.fill(24);
  for (let yy = y; yy < Math.min(y + size, height); yy++) {
    for (let xx = x; xx < Math.min(x + size, width); xx++) {
      // checkerboard texture so local contrast is high inside the square
      px[yy * width + xx] = (xx + yy) % 2 === 0 ? 230 : 120;
    }
  }
  return px;
}

export function tmpDir(name: string): string {
  const dir = path.join(fs.mkdtempSync(path.join(require("os").tmpdir(), name + "-")));
  return dir;
}
