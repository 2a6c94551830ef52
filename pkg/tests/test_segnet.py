"""Segmentation network structure, shapes, and behavior."""

import math

import numpy as np
import pytest

from fashionseg import metrics, ops, segnet
from fashionseg.errors import ShapeError, ValueRangeError
from fashionseg.segnet import SegNet, SegNetConfig, predict_mask, seg_loss
from fashionseg.tensor import Tensor


class TestConfig:
    def test_full_channels(self):
        assert SegNetConfig.full().channels() == [64, 128, 256, 512, 512]

    def test_mini_channels(self):
        assert SegNetConfig.mini().channels() == [8, 16]

    def test_unknown_preset(self):
        with pytest.raises(ValueRangeError):
            SegNetConfig.from_preset("huge")

    def test_invalid_config(self):
        with pytest.raises(ValueRangeError):
            SegNetConfig(stages=3, convs_per_stage=(1, 1)).validate()


@pytest.fixture(scope="module")
def full_net():
    return SegNet(SegNetConfig.full(), seed=0)


@pytest.fixture(scope="module")
def mini_net():
    return SegNet(SegNetConfig.mini(), seed=1)


class TestFullStructure:
    @pytest.fixture
    def net(self, full_net):
        return full_net

    def test_layer_counts(self, net):
        d = net.describe()
        assert d["encoder_convs"] == 13
        assert d["poolings"] == 5
        assert d["decoder_convs"] == 13
        assert d["side_branches"] == 4
        assert d["fusion_convs"] == 1

    def test_branch_upsample_factors(self, net):
        assert net.describe()["branch_upsample_factors"] == [16, 8, 4, 2]

    def test_branch_reduce_to_single_channel(self, net):
        for s in net.branch_stages:
            w = net.registry.get("branch/stage%d/reduce/weight" % (s + 1))
            assert w.shape[0] == 1 and w.shape[2:] == (1, 1)

    def test_fusion_input_channels(self, net):
        assert net.registry.get("fuse/conv/weight").shape == (1, 5, 1, 1)

    def test_full_forward_shapes(self, net):
        x = Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 32, 32)))
        fused, scales = net.forward(x, mode="infer")
        assert fused.shape == (1, 1, 32, 32)
        assert len(scales) == 5
        for sm in scales:
            assert sm.shape == (1, 1, 32, 32)


class TestMiniBehavior:
    @pytest.fixture
    def net(self, mini_net):
        return mini_net

    def test_counts(self, net):
        d = net.describe()
        assert d["encoder_convs"] == 2
        assert d["decoder_convs"] == 2
        assert d["side_branches"] == 1
        assert d["branch_upsample_factors"] == [2]

    def test_output_shape(self, net):
        x = Tensor(np.random.default_rng(2).uniform(0, 1, (2, 3, 64, 64)))
        fused, scales = net.forward(x, mode="infer")
        assert fused.shape == (2, 1, 64, 64)
        assert len(scales) == 2

    def test_infer_deterministic_and_stateless(self, net):
        x = Tensor(np.random.default_rng(3).uniform(0, 1, (1, 3, 16, 16)))
        before = {n: net.registry.get(n).data.copy() for n in net.registry.names()}
        a, _ = net.forward(x, mode="infer")
        b, _ = net.forward(x, mode="infer")
        np.testing.assert_array_equal(a.data, b.data)
        for n, v in before.items():
            np.testing.assert_array_equal(net.registry.get(n).data, v)

    def test_train_mode_updates_running_stats(self):
        net = SegNet(SegNetConfig.mini(), seed=4)
        x = Tensor(np.random.default_rng(4).uniform(0, 1, (2, 3, 16, 16)))
        rm = net.registry.get("enc/stage1/conv0/bn/running_mean")
        before = rm.data.copy()
        net.forward(x, mode="train")
        assert not np.array_equal(rm.data, before)

    def test_indivisible_input_rejected(self, net):
        with pytest.raises(ShapeError):
            net.forward(Tensor(np.zeros((1, 3, 18, 16))))

    def test_wrong_channel_count_rejected(self, net):
        with pytest.raises(ShapeError):
            net.forward(Tensor(np.zeros((1, 1, 16, 16))))

    def test_fused_output_depends_on_branch(self, net):
        # zeroing the branch upsample weight must change the fused map
        x = Tensor(np.random.default_rng(5).uniform(0, 1, (1, 3, 16, 16)))
        base, _ = net.forward(x, mode="infer")
        name = "branch/stage%d/up/weight" % (net.branch_stages[0] + 1)
        w = net.registry.get(name)
        saved = w.data.copy()
        try:
            w.data[...] = 0.0
            changed, _ = net.forward(x, mode="infer")
        finally:
            w.data[...] = saved
        assert not np.array_equal(base.data, changed.data)


class TestSegLoss:
    def test_zero_logits_closed_form(self):
        # f = 0 gives log(2) per pixel regardless of the target
        f = Tensor(np.zeros((1, 1, 2, 2)))
        y = Tensor(np.array([[[[1.0, 0.0], [0.0, 1.0]]]]))
        loss = seg_loss(f, y)
        assert math.isclose(float(loss.data), 4 * math.log(2), rel_tol=1e-12)

    def test_confident_correct_is_near_zero(self):
        f = Tensor(np.full((1, 1, 2, 2), 20.0))
        y = Tensor(np.ones((1, 1, 2, 2)))
        assert float(seg_loss(f, y).data) < 1e-6

    def test_sum_reduction_scales_with_batch(self):
        rng = np.random.default_rng(6)
        f1 = rng.uniform(-2, 2, (1, 1, 3, 3))
        y1 = (rng.uniform(0, 1, f1.shape) > 0.5).astype(np.float64)
        single = float(seg_loss(Tensor(f1), Tensor(y1)).data)
        double = float(seg_loss(Tensor(np.concatenate([f1, f1])),
                                Tensor(np.concatenate([y1, y1]))).data)
        assert math.isclose(double, 2 * single, rel_tol=1e-12)


class TestPrediction:
    def test_threshold_ties_go_to_background(self):
        pred = predict_mask(np.array([[0.49, 0.5, 0.51]]), threshold=0.5)
        np.testing.assert_array_equal(pred.mask, [[0.0, 0.0, 1.0]])

    def test_composes_with_iou(self):
        probs = np.array([[0.9, 0.1], [0.8, 0.2]])
        truth = np.array([[1, 0], [1, 0]])
        pred = predict_mask(probs)
        assert metrics.iou(pred.mask, truth) == 1.0

    def test_predict_outputs_probabilities(self):
        net = SegNet(SegNetConfig.mini(), seed=7)
        x = Tensor(np.random.default_rng(7).uniform(0, 1, (1, 3, 16, 16)))
        pred = net.predict(x)
        assert pred.prob_map.min() >= 0.0 and pred.prob_map.max() <= 1.0
        assert set(np.unique(pred.mask)) <= {0.0, 1.0}
