import json
import struct

import numpy as np
import pytest

from mildet.archive import (
    StreamingDataset,
    ground_truth_path,
    manifest_path,
    read_archive,
    read_ground_truth,
    read_manifest,
    iter_archive,
    write_archive,
    write_ground_truth,
)
from mildet.core import BoundingBox, FeatureBag, Region
from mildet.errors import (
    ArchiveError,
    BadMagic,
    CorruptOffset,
    InconsistentDims,
    ParseError,
    VersionUnsupported,
)
from mildet.evaluation import GroundTruthBox
from mildet.mil import RegionStack
from mildet.synth import CONCEPT_CLASS, SynthConfig, generate


def random_bags(rng, n=4, kmax=5, dim=6, classes=("a", "b")):
    # values at float32 precision throughout: the blob's native precision
    f32 = lambda v: float(np.float32(v))
    bags = []
    for i in range(n):
        k = int(rng.integers(1, kmax + 1))
        regions = []
        for _ in range(k):
            x1 = f32(rng.uniform(0, 50))
            y1 = f32(rng.uniform(0, 50))
            regions.append(Region(
                box=BoundingBox(x1, y1, f32(x1 + rng.uniform(1, 20)),
                                f32(y1 + rng.uniform(1, 20))),
                objectness=f32(rng.uniform()),
                feature=rng.normal(size=dim).astype(np.float32),
            ))
        labels = {c: int(rng.choice([1, -1])) for c in classes}
        bags.append(FeatureBag(image_id=f"img{i:03d}", regions=tuple(regions),
                               labels=labels))
    return bags


def bags_equal(a, b):
    if a.image_id != b.image_id or a.labels != b.labels or len(a) != len(b):
        return False
    for ra, rb in zip(a.regions, b.regions):
        if ra.box.as_tuple() != rb.box.as_tuple():
            return False
        if ra.objectness != rb.objectness:
            return False
        if not np.array_equal(ra.feature, rb.feature):
            return False
    return True


class TestRoundTrip:
    def test_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        bags = random_bags(rng)
        path = str(tmp_path / "t.milfeat")
        write_archive(bags, {"img000": "test"}, ["a", "b"], path)
        loaded = read_archive(path)
        assert len(loaded) == len(bags)
        for x, y in zip(bags, loaded):
            assert bags_equal(x, y)

    def test_empty_archive(self, tmp_path):
        path = str(tmp_path / "empty.milfeat")
        write_archive([], None, ["a"], path, feature_dim=8)
        assert read_archive(path) == []
        m = read_manifest(path)
        assert m.feature_dim == 8 and m.images == ()

    def test_blob_size_arithmetic(self, tmp_path):
        # 2 bags, M=4, K=3: header 12 + 2*(4 + 3*(4+1+4)*4) bytes
        rng = np.random.default_rng(1)
        bags = []
        for i in range(2):
            regions = tuple(
                Region(box=BoundingBox(0, 0, 1, 1), objectness=0.5,
                       feature=rng.normal(size=4).astype(np.float32))
                for _ in range(3)
            )
            bags.append(FeatureBag(f"i{i}", regions, {"a": 1 if i == 0 else -1}))
        path = str(tmp_path / "sized.milfeat")
        write_archive(bags, None, ["a"], path)
        expected = 12 + 2 * (4 + 3 * (4 + 1 + 4) * 4)
        import os
        assert os.path.getsize(path) == expected

    def test_split_filter(self, tmp_path):
        rng = np.random.default_rng(2)
        bags = random_bags(rng, n=6)
        splits = {b.image_id: ("test" if i % 2 else "train")
                  for i, b in enumerate(bags)}
        path = str(tmp_path / "s.milfeat")
        write_archive(bags, splits, ["a", "b"], path)
        train = read_archive(path, "train")
        test = read_archive(path, "test")
        assert {b.image_id for b in train} == {b.image_id for i, b in enumerate(bags)
                                               if i % 2 == 0}
        assert len(train) + len(test) == len(bags)
        # filter for a missing split is empty but succeeds
        assert read_archive(path, "val") == []

    def test_inconsistent_dims_rejected(self, tmp_path):
        r1 = Region(box=BoundingBox(0, 0, 1, 1), objectness=0.5, feature=np.ones(4))
        r2 = Region(box=BoundingBox(0, 0, 1, 1), objectness=0.5, feature=np.ones(5))
        bags = [FeatureBag("a", (r1,), {"c": 1}), FeatureBag("b", (r2,), {"c": -1})]
        with pytest.raises(InconsistentDims):
            write_archive(bags, None, ["c"], str(tmp_path / "x.milfeat"))

    def test_missing_label_rejected(self, tmp_path):
        r = Region(box=BoundingBox(0, 0, 1, 1), objectness=0.5, feature=np.ones(4))
        bags = [FeatureBag("a", (r,), {"c": 1})]
        with pytest.raises(ArchiveError):
            write_archive(bags, None, ["c", "other"], str(tmp_path / "x.milfeat"))


class TestCorruption:
    def _write(self, tmp_path, n=3):
        rng = np.random.default_rng(3)
        bags = random_bags(rng, n=n)
        path = str(tmp_path / "c.milfeat")
        write_archive(bags, None, ["a", "b"], path)
        return path, bags

    def test_truncated_blob(self, tmp_path):
        path, bags = self._write(tmp_path)
        with open(path, "rb") as fh:
            data = fh.read()
        with open(path, "wb") as fh:
            fh.write(data[:-10])
        with pytest.raises(CorruptOffset) as exc:
            read_archive(path)
        assert exc.value.image_id == bags[-1].image_id

    def test_bad_magic(self, tmp_path):
        path, _ = self._write(tmp_path)
        with open(path, "r+b") as fh:
            fh.write(b"NOTMILF")
        with pytest.raises(BadMagic):
            read_archive(path)

    def test_unsupported_version(self, tmp_path):
        path, _ = self._write(tmp_path)
        with open(path, "r+b") as fh:
            fh.seek(7)
            fh.write(struct.pack("<B", 99))
        with pytest.raises(VersionUnsupported):
            read_archive(path)

    def test_nonmonotonic_offsets(self, tmp_path):
        path, _ = self._write(tmp_path)
        mpath = manifest_path(path)
        doc = json.load(open(mpath))
        doc["images"][1]["offset"] = doc["images"][0]["offset"]
        json.dump(doc, open(mpath, "w"))
        with pytest.raises(CorruptOffset):
            read_archive(path)

    def test_region_count_mismatch(self, tmp_path):
        path, bags = self._write(tmp_path)
        mpath = manifest_path(path)
        doc = json.load(open(mpath))
        doc["images"][0]["region_count"] = doc["images"][0]["region_count"] + 1
        json.dump(doc, open(mpath, "w"))
        with pytest.raises(CorruptOffset) as exc:
            read_archive(path)
        assert exc.value.image_id == bags[0].image_id


class TestStreaming:
    def test_iter_matches_list(self, tmp_path):
        rng = np.random.default_rng(4)
        bags = random_bags(rng, n=5)
        path = str(tmp_path / "s.milfeat")
        write_archive(bags, None, ["a", "b"], path)
        streamed = list(iter_archive(path))
        loaded = read_archive(path)
        assert all(bags_equal(x, y) for x, y in zip(streamed, loaded))

    def test_streaming_dataset_matches_region_stack(self, tmp_path):
        cfg = SynthConfig(n_images=50, k_regions=4, feature_dim=8, seed=5)
        bags, _, _ = generate(cfg)
        path = str(tmp_path / "ds.milfeat")
        write_archive(bags, None, [CONCEPT_CLASS], path)
        stack = RegionStack.from_bags(read_archive(path), CONCEPT_CLASS)
        with StreamingDataset(path, CONCEPT_CLASS) as ds:
            assert ds.n == stack.n and ds.dim == stack.dim
            assert np.array_equal(ds.y, stack.y)
            idx = np.array([3, 17, 44, 8])
            chunks_a = list(ds.iter_chunks(idx))
            chunks_b = list(stack.iter_chunks(idx))
            for (xa, oa, va, ya), (xb, ob, vb, yb) in zip(chunks_a, chunks_b):
                assert np.array_equal(xa, xb)
                assert np.array_equal(oa, ob)
                assert np.array_equal(va, vb)
                assert np.array_equal(ya, yb)

    def test_streaming_training_matches_in_memory(self, tmp_path):
        from mildet.core import TrainConfig
        from mildet.mil import train_restarts

        cfg = SynthConfig(n_images=60, k_regions=3, feature_dim=6, seed=6)
        bags, _, _ = generate(cfg)
        path = str(tmp_path / "t.milfeat")
        write_archive(bags, None, [CONCEPT_CLASS], path)
        tc = TrainConfig(iterations=25, restarts=2, seed=0, batch_size=32)
        mem_scorer, _ = train_restarts(read_archive(path), CONCEPT_CLASS, tc)
        with StreamingDataset(path, CONCEPT_CLASS) as ds:
            disk_scorer, _ = train_restarts(ds, CONCEPT_CLASS, tc)
        assert np.array_equal(mem_scorer.w, disk_scorer.w)
        assert mem_scorer.b == disk_scorer.b
        assert mem_scorer.final_loss == disk_scorer.final_loss


class TestGroundTruthIo:
    def test_round_trip(self, tmp_path):
        gts = [
            GroundTruthBox("i1", "cat", BoundingBox(0, 0, 5, 5)),
            GroundTruthBox("i2", "dog", BoundingBox(1, 2, 3, 4), ignore=True),
            GroundTruthBox("i1", "cat", BoundingBox(10, 10, 20, 30)),
        ]
        path = str(tmp_path / "gt.jsonl")
        write_ground_truth(gts, path)
        loaded = read_ground_truth(path)
        assert loaded == gts

    def test_empty_document(self, tmp_path):
        path = str(tmp_path / "gt.jsonl")
        open(path, "w").close()
        assert read_ground_truth(path) == []

    def test_degenerate_box_parse_error(self, tmp_path):
        path = str(tmp_path / "gt.jsonl")
        rec = {"image_id": "i", "class_name": "c", "x1": 5, "y1": 0, "x2": 5, "y2": 3}
        with open(path, "w") as fh:
            fh.write(json.dumps(rec) + "\n")
        with pytest.raises(ParseError) as exc:
            read_ground_truth(path)
        assert exc.value.line == 1

    def test_bad_json_reports_line(self, tmp_path):
        path = str(tmp_path / "gt.jsonl")
        good = {"image_id": "i", "class_name": "c", "x1": 0, "y1": 0, "x2": 5, "y2": 3}
        with open(path, "w") as fh:
            fh.write(json.dumps(good) + "\n")
            fh.write("{oops\n")
        with pytest.raises(ParseError) as exc:
            read_ground_truth(path)
        assert exc.value.line == 2

    def test_three_record_fixture(self, tmp_path):
        path = str(tmp_path / "gt.jsonl")
        lines = [
            '{"image_id": "a", "class_name": "x", "x1": 1, "y1": 2, "x2": 3, "y2": 4}',
            '{"image_id": "b", "class_name": "y", "x1": 0, "y1": 0, "x2": 9, "y2": 9, "ignore": true}',
            '{"image_id": "c", "class_name": "x", "x1": 5.5, "y1": 6.25, "x2": 7.5, "y2": 8.125}',
        ]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        got = read_ground_truth(path)
        assert len(got) == 3
        assert got[0].box.as_tuple() == (1.0, 2.0, 3.0, 4.0)
        assert got[1].ignore is True
        assert got[2].box.as_tuple() == (5.5, 6.25, 7.5, 8.125)

    def test_synth_gt_paths(self, tmp_path):
        assert ground_truth_path("/x/y/data.milfeat") == "/x/y/data.gt.jsonl"
        assert manifest_path("/x/y/data.milfeat") == "/x/y/data.manifest.json"
