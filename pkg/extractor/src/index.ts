export { ArchiveWriter, readArchive, writeGroundTruth, manifestPath, groundTruthPath } from "./archive";
export { createBackbone, StubBackbone } from "./backbone";
export { extract } from "./extract";
export { loadImage, resize } from "./images";
export { readLabels, readCsvLabels, readVocLabels } from "./labels";
export * from "./types";
