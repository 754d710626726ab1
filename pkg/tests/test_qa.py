import math

import numpy as np
import pytest

from sacqdet import tensor as T
from sacqdet.qa import (QaConfig, aggregate, box_iou_matrix,
                        build_merge_groups, class_similarity, qa_apply)
from sacqdet.structures import PredictionSet
from sacqdet.tensor import ConfigurationError, Tensor, check_gradients

from oracles import (connected_components_dfs, iou_matrix_loops,
                     symmetric_kl_loops)


def preds(probs, boxes):
    return PredictionSet(probs=Tensor(np.asarray(probs, dtype=np.float64)),
                         boxes=Tensor(np.asarray(boxes, dtype=np.float64)))


def random_instance(rng, q=None, m=None):
    q = q or int(rng.integers(2, 9))
    m = m or int(rng.integers(2, 6))
    probs = rng.random((q, m))
    centers = rng.random((q, 2)) * 0.6 + 0.2
    sizes = rng.random((q, 2)) * 0.3 + 0.05
    # plant some near-duplicates so merges actually occur
    for i in range(1, q, 3):
        if rng.random() < 0.5:
            probs[i] = probs[i - 1] + rng.normal(0, 1e-6, size=m)
            centers[i] = centers[i - 1] + rng.normal(0, 1e-4, size=2)
            sizes[i] = sizes[i - 1]
    boxes = np.concatenate([centers, sizes], axis=1)
    return np.clip(probs, 1e-6, 1.0), np.clip(boxes, 0.01, 1.0)


class TestClassSimilarity:
    def test_identical_rows_zero(self):
        p = np.array([[0.2, 0.8], [0.2, 0.8]])
        s = class_similarity(p)
        np.testing.assert_allclose(s, 0.0, atol=1e-12)

    def test_hand_computed_pair(self):
        # symmetric KL of [0.5,0.5] vs [0.9,0.1]
        expected = (0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
                    + 0.9 * math.log(0.9 / 0.5) + 0.1 * math.log(0.1 / 0.5))
        s = class_similarity(np.array([[0.5, 0.5], [0.9, 0.1]]))
        assert abs(s[0, 1] - expected) < 1e-10
        assert abs(expected - 0.8789) < 1e-4

    def test_symmetry_random(self):
        rng = np.random.default_rng(0)
        s = class_similarity(rng.random((6, 4)))
        np.testing.assert_allclose(s, s.T, atol=1e-12)
        np.testing.assert_allclose(np.diag(s), 0.0, atol=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ConfigurationError):
            class_similarity(np.ones((3, 1)))

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            probs = rng.random((5, 3))
            np.testing.assert_allclose(class_similarity(probs, 1e-8),
                                       symmetric_kl_loops(probs, 1e-8),
                                       atol=1e-10)


class TestBoxIou:
    def test_identical_boxes(self):
        b = np.array([[0.5, 0.5, 0.2, 0.2]] * 2)
        np.testing.assert_allclose(box_iou_matrix(b), 1.0)

    def test_disjoint_boxes(self):
        b = np.array([[0.2, 0.2, 0.1, 0.1], [0.8, 0.8, 0.1, 0.1]])
        s = box_iou_matrix(b)
        assert s[0, 1] == 0.0 and s[1, 0] == 0.0

    def test_hand_computed_overlap(self):
        # corners (0,0,2,2) and (1,1,3,3): intersection 1, union 7
        b = np.array([[1.0, 1.0, 2.0, 2.0], [2.0, 2.0, 2.0, 2.0]])
        s = box_iou_matrix(b)
        np.testing.assert_allclose(s[0, 1], 1.0 / 7.0, atol=1e-12)

    def test_zero_area_guard(self):
        b = np.array([[0.5, 0.5, 0.0, 0.0], [0.5, 0.5, 0.0, 0.0]])
        s = box_iou_matrix(b)
        np.testing.assert_allclose(s, 0.0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            boxes = np.concatenate([rng.random((6, 2)),
                                    rng.random((6, 2)) * 0.4 + 0.05], axis=1)
            np.testing.assert_allclose(box_iou_matrix(boxes),
                                       iou_matrix_loops(boxes), atol=1e-10)


class TestBuildMergeGroups:
    def cfg(self, t_c=0.5, t_b=0.5):
        return QaConfig(t_c=t_c, t_b=t_b)

    def edges_to_matrices(self, q, edges):
        s_cls = np.ones((q, q))
        s_box = np.zeros((q, q))
        for i, j in edges:
            s_cls[i, j] = s_cls[j, i] = 0.0
            s_box[i, j] = s_box[j, i] = 1.0
        return s_cls, s_box

    def test_no_edges_all_singletons(self):
        s_cls, s_box = self.edges_to_matrices(5, [])
        assert build_merge_groups(s_cls, s_box, self.cfg()) == \
            [[0], [1], [2], [3], [4]]

    def test_chain_merges_transitively(self):
        s_cls, s_box = self.edges_to_matrices(4, [(0, 1), (1, 2)])
        groups = build_merge_groups(s_cls, s_box, self.cfg())
        assert groups == connected_components_dfs(4, [(0, 1), (1, 2)])
        assert groups[0] == [0, 1, 2]

    def test_two_pairs_plus_singletons(self):
        edges = [(0, 3), (1, 4)]
        s_cls, s_box = self.edges_to_matrices(6, edges)
        groups = build_merge_groups(s_cls, s_box, self.cfg())
        assert groups == connected_components_dfs(6, edges)
        assert [0, 3] in groups and [1, 4] in groups

    def test_both_criteria_required(self):
        s_cls = np.zeros((2, 2))  # class criterion passes
        s_box = np.zeros((2, 2))  # box criterion fails
        assert build_merge_groups(s_cls, s_box, self.cfg()) == [[0], [1]]


class TestAggregate:
    def test_singleton_passthrough(self):
        p = preds([[0.6, 0.4]], [[0.5, 0.5, 0.2, 0.2]])
        out = aggregate(p, [[0]])
        np.testing.assert_array_equal(out.probs.data, p.probs.data)
        np.testing.assert_array_equal(out.boxes.data, p.boxes.data)

    def test_pair_mean(self):
        p = preds([[0.6, 0.4], [0.8, 0.2]],
                  [[0.4, 0.4, 0.2, 0.2], [0.6, 0.6, 0.4, 0.4]])
        out = aggregate(p, [[0, 1]])
        np.testing.assert_allclose(out.probs.data, [[0.7, 0.3]], atol=1e-12)
        np.testing.assert_allclose(out.boxes.data, [[0.5, 0.5, 0.3, 0.3]],
                                   atol=1e-12)

    def test_triple_matches_summation_oracle(self):
        rng = np.random.default_rng(3)
        probs, boxes = rng.random((5, 3)), rng.random((5, 4))
        out = aggregate(preds(probs, boxes), [[0, 2, 4], [1], [3]])
        np.testing.assert_allclose(out.probs.data[0],
                                   (probs[0] + probs[2] + probs[4]) / 3,
                                   atol=1e-12)
        np.testing.assert_allclose(out.boxes.data[0],
                                   (boxes[0] + boxes[2] + boxes[4]) / 3,
                                   atol=1e-12)

    def test_gradient_distributes_equally(self):
        rng = np.random.default_rng(4)
        mix = Tensor(rng.standard_normal((2, 3)))

        def f(probs_t):
            p = PredictionSet(probs=probs_t, boxes=Tensor(np.zeros((4, 4))))
            out = aggregate(p, [[0, 1, 2], [3]])
            return T.sum_all(T.mul(out.probs, mix))

        x = Tensor(rng.random((4, 3)), requires_grad=True)
        report = check_gradients(f, x, eps=1e-5, tol=1e-4)
        assert report.passed, str(report)
        # analytic: members of the triple receive 1/3 of the group grad
        x.zero_grad()
        T.backward(f(x))
        np.testing.assert_allclose(x.grad[0], mix.data[0] / 3, atol=1e-12)
        np.testing.assert_allclose(x.grad[3], mix.data[1], atol=1e-12)


class TestQaApply:
    def test_disabled_is_identity(self):
        rng = np.random.default_rng(5)
        probs, boxes = random_instance(rng, q=6, m=3)
        plan = qa_apply(preds(probs, boxes), QaConfig(enabled=False))
        assert plan.groups == [[i] for i in range(6)]
        np.testing.assert_array_equal(plan.merged.probs.data, probs)

    def test_impossible_tb_is_identity(self):
        rng = np.random.default_rng(6)
        probs, boxes = random_instance(rng, q=6, m=3)
        plan = qa_apply(preds(probs, boxes), QaConfig(t_b=1.5))
        assert plan.groups == [[i] for i in range(6)]

    def test_duplicates_merge(self):
        probs = np.array([[0.9, 0.1], [0.9, 0.1], [0.1, 0.9]])
        boxes = np.array([[0.5, 0.5, 0.2, 0.2]] * 2 + [[0.8, 0.8, 0.1, 0.1]])
        plan = qa_apply(preds(probs, boxes), QaConfig())
        assert plan.groups == [[0, 1], [2]]
        assert plan.num_merges == 1

    def test_partition_validity_random(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            probs, boxes = random_instance(rng)
            plan = qa_apply(preds(probs, boxes), QaConfig(t_c=1e-4, t_b=0.8))
            flat = sorted(i for g in plan.groups for i in g)
            assert flat == list(range(probs.shape[0]))
            assert plan.merged.probs.shape[0] == len(plan.groups)

    def test_monotone_in_tb(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            probs, boxes = random_instance(rng)
            loose = qa_apply(preds(probs, boxes), QaConfig(t_c=1e-3, t_b=0.6))
            tight = qa_apply(preds(probs, boxes), QaConfig(t_c=1e-3, t_b=0.9))
            # raising t_b refines the partition: every tight group sits
            # inside one loose group
            loose_label = {}
            for gi, g in enumerate(loose.groups):
                for i in g:
                    loose_label[i] = gi
            for g in tight.groups:
                assert len({loose_label[i] for i in g}) == 1
            assert tight.num_merges <= loose.num_merges

    def test_brute_force_equivalence_500(self):
        rng = np.random.default_rng(9)
        cfg = QaConfig(t_c=1e-3, t_b=0.7)
        for _ in range(500):
            probs, boxes = random_instance(rng)
            q = probs.shape[0]
            plan = qa_apply(preds(probs, boxes), cfg)
            s_cls = symmetric_kl_loops(probs, cfg.epsilon)
            s_box = iou_matrix_loops(boxes)
            edges = [(i, j) for i in range(q) for j in range(i + 1, q)
                     if s_cls[i, j] < cfg.t_c and s_box[i, j] > cfg.t_b]
            assert plan.groups == connected_components_dfs(q, edges)
            for gi, members in enumerate(plan.groups):
                np.testing.assert_allclose(plan.merged.probs.data[gi],
                                           probs[members].mean(axis=0),
                                           atol=1e-12)
                np.testing.assert_allclose(plan.merged.boxes.data[gi],
                                           boxes[members].mean(axis=0),
                                           atol=1e-12)

    def test_idempotent_on_identical_members(self):
        probs = np.array([[0.7, 0.3]] * 3)
        boxes = np.array([[0.5, 0.5, 0.2, 0.2]] * 3)
        cfg = QaConfig()
        plan = qa_apply(preds(probs, boxes), cfg)
        assert plan.groups == [[0, 1, 2]]
        again = qa_apply(plan.merged, cfg)
        assert again.groups == [[0]]
        np.testing.assert_allclose(again.merged.probs.data, [[0.7, 0.3]],
                                   atol=1e-12)

    def test_bounds_preserved(self):
        rng = np.random.default_rng(10)
        probs, boxes = random_instance(rng)
        plan = qa_apply(preds(probs, boxes), QaConfig(t_c=1e-2, t_b=0.5))
        assert np.all(plan.merged.probs.data <= 1.0)
        assert np.all(plan.merged.probs.data >= 0.0)
        assert np.all(plan.merged.boxes.data >= 0.0)
        assert np.all(plan.merged.boxes.data <= 1.0)
