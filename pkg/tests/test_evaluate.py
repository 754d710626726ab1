"""AP evaluation against the brute-force oracle and hand-traced cases."""

import numpy as np

from oracles import ap_brute_force
from sacqdet.data import generate_dataset
from sacqdet.detector import Detector, DetectorConfig
from sacqdet.evaluate import (IOU_THRESHOLDS, ApReport, average_precision,
                              evaluate_ap)
from sacqdet.qa import QaConfig


def _random_case(rng, max_dets=8, max_gts=4):
    n_det = int(rng.integers(1, max_dets + 1))
    n_gt = int(rng.integers(1, max_gts + 1))
    dets, gts = [], []
    for _ in range(n_det):
        c = rng.uniform(0.2, 0.8, size=2)
        s = rng.uniform(0.05, 0.3, size=2)
        dets.append((float(rng.random()), np.array([*c, *s])))
    for _ in range(n_gt):
        c = rng.uniform(0.2, 0.8, size=2)
        s = rng.uniform(0.05, 0.3, size=2)
        gts.append(np.array([*c, *s]))
    return dets, gts


class TestAveragePrecisionOracle:
    def test_agrees_with_brute_force_100_cases(self):
        rng = np.random.default_rng(99)
        for case in range(100):
            dets, gts = _random_case(rng)
            thr = float(rng.choice([0.3, 0.5, 0.75, 0.9]))
            pooled = [(0, score, box) for score, box in dets]
            got = average_precision(pooled, {0: gts}, thr)
            want = ap_brute_force(dets, gts, thr)
            assert abs(got - want) < 1e-9, f"case {case}: {got} vs {want}"

    def test_multi_image_pooling(self):
        # one perfect detection per image; the pooled curve is still exact
        box = np.array([0.5, 0.5, 0.2, 0.2])
        dets = [(0, 0.9, box), (1, 0.8, box)]
        gts = {0: [box], 1: [box]}
        assert average_precision(dets, gts, 0.5) == 1.0

    def test_cross_image_matches_forbidden(self):
        box = np.array([0.5, 0.5, 0.2, 0.2])
        # detection lives in image 1 but the only truth is in image 0
        dets = [(1, 0.9, box)]
        gts = {0: [box], 1: []}
        assert average_precision(dets, gts, 0.5) == 0.0


class TestHandTracedCases:
    def test_single_exact_prediction(self):
        box = np.array([0.5, 0.5, 0.2, 0.2])
        assert average_precision([(0, 0.99, box)], {0: [box]}, 0.5) == 1.0

    def test_no_overlap_is_zero(self):
        det = np.array([0.2, 0.2, 0.1, 0.1])
        gt = np.array([0.8, 0.8, 0.1, 0.1])
        assert average_precision([(0, 0.9, det)], {0: [gt]}, 0.5) == 0.0

    def test_three_preds_two_targets_trace(self):
        # ranked: hit, miss, hit -> precisions 1, 1/2, 2/3 at recalls
        # 1/2, 1/2, 1; interpolated AP = (51*1 + 50*(2/3)) / 101
        g1 = np.array([0.3, 0.3, 0.2, 0.2])
        g2 = np.array([0.7, 0.7, 0.2, 0.2])
        far = np.array([0.1, 0.9, 0.05, 0.05])
        dets = [(0, 0.9, g1), (0, 0.8, far), (0, 0.7, g2)]
        want = (51 * 1.0 + 50 * (2 / 3)) / 101
        got = average_precision(dets, {0: [g1, g2]}, 0.5)
        assert abs(got - want) < 1e-12

    def test_no_ground_truth_is_nan(self):
        det = np.array([0.5, 0.5, 0.2, 0.2])
        assert np.isnan(average_precision([(0, 0.9, det)], {0: []}, 0.5))


class TestEvaluateAp:
    def test_report_fields_and_threshold_grid(self):
        assert len(IOU_THRESHOLDS) == 10
        assert IOU_THRESHOLDS[0] == 0.5
        assert IOU_THRESHOLDS[-1] == 0.95

    def test_untrained_model_runs(self):
        scenes = generate_dataset(2, seed=0, image_size=32)
        model = Detector(DetectorConfig(d=16, q=4, heads=2, encoder_layers=1,
                                        decoder_layers=1, roi_size=3,
                                        amp_depth=1), seed=0,
                         dtype=np.float32)
        report = evaluate_ap(model, scenes, QaConfig(enabled=False))
        assert isinstance(report, ApReport)
        assert 0.0 <= report.ap <= 1.0
        assert report.num_images == 2
        assert set(report.as_dict()) == {"ap", "ap50", "ap75", "per_class",
                                         "merges", "num_images"}

    def test_merge_counter_increments_when_qa_collapses(self):
        # two identical queries merge at inference, so the counter moves
        scenes = generate_dataset(1, seed=3, image_size=32)
        model = Detector(DetectorConfig(d=16, q=4, heads=2, encoder_layers=1,
                                        decoder_layers=1, roi_size=3,
                                        amp_depth=1, sacq_global=False,
                                        sacq_local=False), seed=0,
                         dtype=np.float32)
        model.params["ref_logits"].data[:] = 0.0  # identical queries
        report = evaluate_ap(model, scenes,
                             QaConfig(enabled=True, t_b=0.5, t_c=10.0))
        assert report.merges > 0
