export interface Box {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

export interface RegionProposal {
  box: Box; // original-image pixel coordinates
  objectness: number; // clamped to [0,1] before writing
  feature: Float32Array;
}

export interface GrayImage {
  width: number;
  height: number;
  /** row-major luminance in [0,1] */
  data: Float32Array;
}

export interface BackboneResult {
  regions: RegionProposal[];
}

export interface Backbone {
  readonly name: string;
  readonly featureDim: number;
  /** Propose regions on an already-resized canvas; boxes in canvas coordinates. */
  propose(image: GrayImage, boxesToKeep: number): BackboneResult;
}

export interface ExtractionConfig {
  imageRoot: string;
  /** canvas the backbone sees; boxes are mapped back to original pixels */
  resizeHeight: number; // default 600
  resizeWidth: number; // default 1000
  boxesToKeep: number; // default 300
  backbone: string; // registry identifier
  featureDim: number;
  annotationSource: string;
  annotationFormat: "voc" | "csv";
  classNames?: string[];
  testIdsFile?: string;
  outPath: string; // .milfeat
  gtOutPath?: string; // .gt.jsonl
}

export interface ImageLabels {
  /** class -> +1 / -1 */
  labels: Record<string, number>;
}

export interface GroundTruthRecord {
  image_id: string;
  class_name: string;
  box: Box;
  ignore: boolean;
}

export interface LabelTable {
  classNames: string[];
  /** image_id -> labels; images absent here are excluded from the archive */
  byImage: Map<string, ImageLabels>;
  groundTruth: GroundTruthRecord[];
}
