import numpy as np
import pytest

from mildet.errors import InvalidConfig
from mildet.evaluation import EvalConfig, average_precision, detect
from mildet.synth import CONCEPT_CLASS, SynthConfig, generate, region_box


class TestConfig:
    def test_defaults(self):
        cfg = SynthConfig()
        assert (cfg.n_images, cfg.k_regions, cfg.feature_dim) == (2000, 30, 64)
        assert cfg.positive_fraction == 0.3
        assert cfg.objectness_mode == "informative"

    def test_invalid_fraction(self):
        with pytest.raises(InvalidConfig):
            SynthConfig(positive_fraction=0.0)

    def test_invalid_mode(self):
        with pytest.raises(InvalidConfig):
            SynthConfig(objectness_mode="chaotic")

    def test_positives_per_bag_bounded_by_k(self):
        with pytest.raises(InvalidConfig):
            SynthConfig(k_regions=3, positives_per_positive_bag=4)

    def test_direction_must_be_unit(self):
        with pytest.raises(InvalidConfig):
            SynthConfig(feature_dim=4, concept_direction=np.ones(4))


class TestGenerate:
    def test_mil_assumption_exact(self):
        cfg = SynthConfig(n_images=100, k_regions=6, feature_dim=10,
                          positives_per_positive_bag=2, seed=0)
        bags, gts, planted = generate(cfg)
        v = planted.w
        for bag in bags:
            projections = [float(v @ r.feature.astype(np.float64))
                           for r in bag.regions]
            n_planted = sum(1 for p in projections if p > 0)
            if bag.labels[CONCEPT_CLASS] == 1:
                assert n_planted == 2
                assert sorted(projections, reverse=True)[1] >= cfg.concept_margin - 1e-4
            else:
                assert n_planted == 0
                assert max(projections) <= -cfg.concept_margin + 1e-4

    def test_bitwise_regeneration(self):
        cfg = SynthConfig(n_images=40, k_regions=4, feature_dim=8, seed=7)
        a_bags, a_gts, a_planted = generate(cfg)
        b_bags, b_gts, b_planted = generate(cfg)
        assert np.array_equal(a_planted.w, b_planted.w)
        assert a_planted.final_loss == b_planted.final_loss
        assert a_gts == b_gts
        for x, y in zip(a_bags, b_bags):
            assert x.image_id == y.image_id
            for rx, ry in zip(x.regions, y.regions):
                assert np.array_equal(rx.feature, ry.feature)
                assert rx.objectness == ry.objectness

    def test_planted_scorer_perfect_ap(self):
        cfg = SynthConfig(n_images=60, k_regions=5, feature_dim=8, seed=1)
        bags, gts, planted = generate(cfg)
        ecfg = EvalConfig()
        dets = []
        for bag in bags:
            dets.extend(detect(planted, bag, ecfg))
        assert average_precision(dets, gts, ecfg) == 1.0

    def test_fully_positive_bags_limit(self):
        cfg = SynthConfig(n_images=40, k_regions=4, feature_dim=8,
                          positives_per_positive_bag=4, seed=2)
        bags, gts, planted = generate(cfg)
        ecfg = EvalConfig()
        dets = []
        for bag in bags:
            dets.extend(detect(planted, bag, ecfg))
        assert average_precision(dets, gts, ecfg) == 1.0

    def test_boxes_disjoint(self):
        k = 13
        boxes = [region_box(i, k) for i in range(k)]
        from mildet.evaluation import iou
        for i in range(k):
            for j in range(i + 1, k):
                assert iou(boxes[i], boxes[j]) == 0.0

    def test_objectness_modes(self):
        for mode in ("informative", "uniform", "adversarial"):
            cfg = SynthConfig(n_images=30, k_regions=5, feature_dim=6,
                              objectness_mode=mode, seed=3)
            bags, _, planted = generate(cfg)
            for bag in bags:
                for r in bag.regions:
                    assert 0.0 <= r.objectness <= 1.0
            if mode == "adversarial":
                # in positive bags the top-objectness region is never planted
                for bag in bags:
                    if bag.labels[CONCEPT_CLASS] != 1:
                        continue
                    top = max(bag.regions, key=lambda r: r.objectness)
                    assert float(planted.w @ top.feature.astype(np.float64)) < 0

    def test_positive_fraction_counts(self):
        cfg = SynthConfig(n_images=100, k_regions=2, feature_dim=4,
                          positive_fraction=0.3, seed=4)
        bags, _, _ = generate(cfg)
        n_pos = sum(1 for b in bags if b.labels[CONCEPT_CLASS] == 1)
        assert n_pos == 30
