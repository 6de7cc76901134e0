import math

import numpy as np
import pytest

from conceptforge import corpus as cm
from conceptforge import detector as D
from conceptforge.concepts import VisualConcept, learn_dictionary
from conceptforge.corpus import FeatureTensor, LayerSpec
from conceptforge.detector import Detection, detect, grid_to_pixel, nms, \
    score_map, single_filter_detect

from conftest import make_tensor
from oracles import nms_oracle, vgg16_rf_table


def _layer(channels=4):
    return LayerSpec("synth", channels=channels, stride=16, rf_size=100)


def _unit_concept(direction, channels=4, layer=None):
    c = np.zeros(channels)
    c[direction] = 1.0
    return VisualConcept(concept_id=0, centroid=c, member_count=1,
                         layer=layer or _layer(channels))


class TestGridToPixel:
    def test_frozen_offsets_match_recurrence_oracle(self):
        oracle = vgg16_rf_table()
        for name in ("pool3", "pool4", "pool5"):
            layer = cm.VGG16_LAYERS[name]
            expected = oracle[name]
            assert layer.stride == expected["stride"]
            assert layer.rf_size == expected["rf_size"]
            assert D.rf_offset(layer) == expected["offset"]
            x, y = grid_to_pixel(layer, 0, 0)
            assert (x, y) == (expected["offset"], expected["offset"])

    def test_stride_displacement(self):
        pool4 = cm.VGG16_LAYERS["pool4"]
        x1, y1 = grid_to_pixel(pool4, 0, 1)
        x0, y0 = grid_to_pixel(pool4, 0, 0)
        assert (x1 - x0, y1 - y0) == (16.0, 0.0)
        pool5 = cm.VGG16_LAYERS["pool5"]
        assert grid_to_pixel(pool5, 0, 1)[0] - grid_to_pixel(pool5, 0, 0)[0] \
            == 32.0

    def test_row_column_orientation(self):
        pool4 = cm.VGG16_LAYERS["pool4"]
        x, y = grid_to_pixel(pool4, 2, 5)  # i=row -> y, j=column -> x
        assert x == 5 * 16 + 8.0
        assert y == 2 * 16 + 8.0

    def test_out_of_bounds(self):
        pool4 = cm.VGG16_LAYERS["pool4"]
        with pytest.raises(IndexError):
            grid_to_pixel(pool4, -1, 0)
        with pytest.raises(IndexError):
            grid_to_pixel(pool4, 3, 0, grid_size=(3, 3))


class TestScoreMap:
    def test_exact_match_scores_zero(self):
        layer = _layer(4)
        data = np.zeros((2, 2, 4), np.float32)
        data[:, :, 1] = 1.0
        data[0, 0] = [0.0, 5.0, 0.0, 0.0]  # same direction, scaled
        t = FeatureTensor("a", layer, data)
        scores = score_map(_unit_concept(1), t)
        assert scores[0, 0] == 0.0

    def test_orthogonal_unit_scores_minus_sqrt2(self):
        layer = _layer(4)
        data = np.zeros((1, 2, 4), np.float32)
        data[0, 0, 0] = 1.0  # orthogonal to concept direction 1
        data[0, 1, 1] = 1.0
        t = FeatureTensor("a", layer, data)
        scores = score_map(_unit_concept(1), t)
        assert abs(scores[0, 0] + math.sqrt(2.0)) < 1e-15
        assert scores[0, 1] == 0.0

    def test_planted_cell_attains_grid_max(self, tiny_corpus):
        tensors, gts, planted = tiny_corpus
        layer = tensors[0].layer
        concept = VisualConcept(0, planted[0].astype(np.float64), 1, layer)
        by_id = {t.image_id: t for t in tensors}
        for g in gts:
            if g.part_id != "part00":
                continue
            t = by_id[g.image_id]
            scores = score_map(concept, t)
            i = int((g.center[1] - 8.0) / 16)
            j = int((g.center[0] - 8.0) / 16)
            assert scores[i, j] == scores.max()

    def test_invariant_to_positive_rescaling(self):
        t = make_tensor(grid=3, channels=5, seed=1)
        concept = _unit_concept(2, channels=5)
        base = score_map(concept, t)
        scaled = np.array(t.data, copy=True)
        scaled[1, 2] *= 7.5
        t2 = FeatureTensor("a", t.layer, scaled)
        assert np.allclose(score_map(concept, t2), base, atol=1e-12)

    def test_degenerate_cell_is_minus_inf(self):
        layer = _layer(3)
        data = np.ones((2, 2, 3), np.float32)
        data[1, 0] = 0.0
        t = FeatureTensor("a", layer, data)
        scores = score_map(_unit_concept(0, 3), t)
        assert scores[1, 0] == -np.inf

    def test_channel_mismatch(self):
        t = make_tensor(channels=6)
        with pytest.raises(ValueError, match="channel"):
            score_map(_unit_concept(0, channels=4), t)


def _random_detections(rng, n, image_id="im", span=200.0):
    dets = []
    cells = rng.choice(60 * 60, size=n, replace=False)
    for c in cells:
        i, j = divmod(int(c), 60)
        dets.append(Detection(image_id=image_id, concept_id=0,
                              x=j * span / 60, y=i * span / 60,
                              score=float(rng.standard_normal()),
                              grid_pos=(i, j)))
    return dets


class TestNms:
    def test_single_detection_kept(self):
        d = Detection("a", 0, 10.0, 10.0, 1.0, (0, 0))
        assert nms([d], 20.0) == [d]

    def test_two_close_detections(self):
        hi = Detection("a", 0, 10.0, 10.0, 0.9, (0, 0))
        lo = Detection("a", 0, 20.0, 10.0, 0.5, (0, 1))
        assert nms([hi, lo], 20.0) == [hi]

    def test_oracle_equivalence_random(self, rng):
        for _ in range(60):
            n = int(rng.integers(1, 51))
            dets = _random_detections(rng, n)
            kept = nms(dets, 30.0)
            oracle = nms_oracle(
                [(d.score, d.grid_pos[0], d.grid_pos[1], d.x, d.y)
                 for d in dets], 30.0)
            assert [(d.score, d.grid_pos) for d in kept] == \
                   [(s, (i, j)) for s, i, j, _, _ in oracle]

    def test_monotone_transform_invariance(self, rng):
        dets = _random_detections(rng, 40)
        kept = nms(dets, 25.0)
        transformed = [Detection(d.image_id, d.concept_id, d.x, d.y,
                                 math.exp(d.score) * 3 + 1, d.grid_pos)
                       for d in dets]
        kept_t = nms(transformed, 25.0)
        assert [d.grid_pos for d in kept] == [d.grid_pos for d in kept_t]

    def test_output_sorted_descending(self, rng):
        dets = _random_detections(rng, 80)
        kept = nms(dets, 10.0)
        scores = [d.score for d in kept]
        assert scores == sorted(scores, reverse=True)

    def test_mixed_images_rejected(self):
        a = Detection("a", 0, 0.0, 0.0, 1.0, (0, 0))
        b = Detection("b", 0, 0.0, 0.0, 1.0, (0, 0))
        with pytest.raises(ValueError, match="one image"):
            nms([a, b], 10.0)

    def test_bad_radius(self):
        with pytest.raises(ValueError):
            nms([], 0.0)


class TestDetect:
    def test_empty_corpus(self):
        assert detect(_unit_concept(0), []) == []

    def test_scores_non_increasing(self, tiny_corpus):
        tensors, _, planted = tiny_corpus
        layer = tensors[0].layer
        concept = VisualConcept(0, planted[0].astype(np.float64), 1, layer)
        dets = detect(concept, tensors)
        scores = [d.score for d in dets]
        assert scores == sorted(scores, reverse=True)

    def test_planted_locations_in_top_ranks(self):
        spec = cm.SyntheticSpec(n_images=25, grid_w=8, grid_h=8, channels=64,
                                n_planted_concepts=4, placements_per_image=2,
                                noise_sigma=0.05)
        tensors, gts, planted = cm.generate_synthetic_corpus(spec, seed=6)
        layer = tensors[0].layer
        concept = VisualConcept(0, planted[0].astype(np.float64), 1, layer)
        dets = detect(concept, tensors)
        part_gts = [g for g in gts if g.part_id == "part00"]
        top = dets[:len(part_gts)]
        for g in part_gts:
            assert any(d.image_id == g.image_id
                       and math.hypot(d.x - g.center[0], d.y - g.center[1]) <= 56.0
                       for d in top)

    def test_degenerate_cells_never_emitted(self):
        layer = _layer(3)
        data = np.ones((2, 2, 3), np.float32)
        data[0, 1] = 0.0
        t = FeatureTensor("a", layer, data)
        dets = detect(_unit_concept(0, 3), [t], nms_radius=1.0)
        assert all(d.grid_pos != (0, 1) for d in dets)


class TestSingleFilter:
    def test_constant_zero_channel(self):
        layer = _layer(3)
        data = np.zeros((4, 4, 3), np.float32)
        data[:, :, 0] = 1.0  # keeps cells non-degenerate
        t = FeatureTensor("a", layer, data)
        dets = single_filter_detect(2, [t], layer, nms_radius=32.0)
        assert all(d.score == 0.0 for d in dets)
        oracle = nms_oracle([(0.0, i, j, j * 16 + 8.0, i * 16 + 8.0)
                             for i in range(4) for j in range(4)], 32.0)
        assert len(dets) == len(oracle)

    def test_planted_spike_top_scored(self):
        layer = _layer(3)
        rng = np.random.default_rng(2)
        data = rng.random((5, 5, 3)).astype(np.float32)
        data[3, 2, 1] = 50.0
        t = FeatureTensor("a", layer, data)
        dets = single_filter_detect(1, [t], layer)
        assert dets[0].grid_pos == (3, 2)
        assert dets[0].score == pytest.approx(50.0)

    def test_channel_out_of_range(self):
        t = make_tensor(channels=4)
        with pytest.raises(IndexError, match="channel"):
            single_filter_detect(4, [t], t.layer)

    def test_l2_mode_differs_from_raw(self):
        t = make_tensor(grid=5, channels=4, seed=9)
        raw = single_filter_detect(0, [t], t.layer, nms_radius=1.0)
        l2 = single_filter_detect(0, [t], t.layer, nms_radius=1.0,
                                  l2_normalized=True)
        raw_scores = {d.grid_pos: d.score for d in raw}
        l2_scores = {d.grid_pos: d.score for d in l2}
        assert raw_scores != l2_scores


class TestDetectionFiles:
    def test_roundtrip_and_stable_rewrite(self, tmp_path, rng):
        dets = sorted(_random_detections(rng, 30),
                      key=lambda d: -d.score)
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        D.write_detections(dets, p1, header={"layer": "synth"})
        back = D.read_detections(p1)
        assert len(back) == len(dets)
        D.write_detections(back, p2, header={"layer": "synth"})
        assert p1.read_bytes() == p2.read_bytes()
        order_a = [(d.image_id, round(d.x, 3), round(d.y, 3)) for d in dets]
        order_b = [(d.image_id, round(d.x, 3), round(d.y, 3)) for d in back]
        assert order_a == order_b

    def test_rejects_spaces_in_image_id(self, tmp_path):
        d = Detection("has space", 0, 1.0, 2.0, 3.0, (0, 0))
        with pytest.raises(ValueError, match="space"):
            D.write_detections([d], tmp_path / "x.txt")

    def test_malformed_line(self, tmp_path):
        p = tmp_path / "x.txt"
        p.write_text("img 1 2 3\n")
        with pytest.raises(ValueError, match="5 fields"):
            D.read_detections(p)


class TestDetectDictionary:
    def test_matches_per_concept_detect(self, tiny_corpus):
        tensors, _, _ = tiny_corpus
        layer = tensors[0].layer
        d = learn_dictionary(tensors, layer, k=6, seed=0, per_image=36)
        combined = D.detect_dictionary(d, tensors, threads=4)
        for concept in d.concepts:
            solo = detect(concept, tensors)
            assert combined[concept.concept_id] == solo
