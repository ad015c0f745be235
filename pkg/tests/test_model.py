import numpy as np
import pytest

from ntrack.kernels import activation_forward, conv2d_forward
from ntrack.model import (DEFAULT_MAC_BUDGET, ModelGraph, OutputMaps, build_reference_fcnn, conv,
                          forward, forward_batch, pointwise)
from ntrack.planner import count_macs
from ntrack.train import HyperParams, composite_loss, train


@pytest.fixture(scope="module")
def ref():
    return build_reference_fcnn(seed=0)


def test_trivial_conv_cases():
    out = conv2d_forward(np.full((1, 1, 1), 5.0), np.ones((1, 1, 1, 1)), np.zeros(1))
    assert out.item() == 5.0
    out = conv2d_forward(np.ones((1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))
    assert out.shape == (1, 1, 1) and out.item() == 9.0


def test_activation_examples():
    assert activation_forward(np.array([-2.0, 3.0]), "relu").tolist() == [0.0, 3.0]
    assert activation_forward(np.array([0.0]), "sigmoid").item() == 0.5
    x = np.array([-1.5, 2.0])
    np.testing.assert_array_equal(activation_forward(x, "linear"), x)


def test_reference_macs_by_hand(ref):
    per_layer = [80 * 80 * 8 * 9 * 1, 40 * 40 * 16 * 9 * 8, 20 * 20 * 32 * 9 * 16,
                 20 * 20 * 32 * 9 * 32, 20 * 20 * 3 * 1 * 32]
    assert per_layer[0] == 460_800
    assert count_macs(ref) == sum(per_layer) == 7_872_000
    assert count_macs(ref) <= DEFAULT_MAC_BUDGET == 9_481_927


def test_reference_shapes_and_size(ref):
    assert ref.output_shape == (3, 20, 20)
    assert ref.param_count() == 15_235


def test_budget_is_enforced():
    with pytest.raises(ValueError, match="budget"):
        build_reference_fcnn(mac_budget=7_000_000)


def test_forward_ranges_and_determinism(ref, rng):
    img = rng.random((160, 160)).astype(np.float32)
    a, b = forward(ref, img), forward(ref, img)
    for m in (a.led_map, a.depth_map, a.position_map):
        assert m.shape == (20, 20)
    assert np.all((a.led_map > 0) & (a.led_map < 1))
    assert np.all((a.position_map > 0) & (a.position_map < 1))
    np.testing.assert_array_equal(a.to_tensor(), b.to_tensor())


def test_forward_equals_manual_composition(ref, rng):
    x = rng.random((1, 160, 160)).astype(np.float32)
    h = x
    for i, layer in enumerate(ref.layers):
        if layer.is_conv:
            w, b = ref.params[i]
            h = conv2d_forward(h, w, b, layer.stride, layer.padding)
        else:
            h = activation_forward(h, layer.activation)
    want = np.stack([activation_forward(h[c], k) for c, k in enumerate(ref.head_activations)])
    np.testing.assert_array_equal(forward(ref, x).to_tensor(), want)


def test_forward_rejects_wrong_shape(ref):
    with pytest.raises(ValueError):
        forward(ref, np.zeros((1, 80, 80), np.float32))


def test_validate_catches_param_mismatch():
    m = ModelGraph([conv(1, 3, stride=8), pointwise(3, 3)], mac_budget=10**9)
    m.params = {0: (np.zeros((3, 1, 3, 3), np.float32), np.zeros(3, np.float32)),
                1: (np.zeros((3, 4, 1, 1), np.float32), np.zeros(3, np.float32))}
    with pytest.raises(ValueError, match="layer 1"):
        m.validate()


def test_output_maps_round_trip(rng):
    t = rng.random((3, 20, 20))
    np.testing.assert_array_equal(OutputMaps.from_tensor(t).to_tensor(), t)


def _sample():
    from ntrack.sim.datagen import generate_samples
    return generate_samples(1, seed=5)


def test_overfit_single_sample():
    images, anns = _sample()
    model = build_reference_fcnn(seed=1)
    _, curve = train(model, images, anns, HyperParams(lr=0.01, lr_decay=1.0), steps=200)
    assert curve[-1] < 0.1 * curve[0]


def test_training_is_seed_deterministic():
    images, anns = _sample()
    hp = HyperParams(seed=3)
    _, c1 = train(build_reference_fcnn(seed=1), images, anns, hp, steps=5)
    _, c2 = train(build_reference_fcnn(seed=1), images, anns, hp, steps=5)
    np.testing.assert_array_equal(c1, c2)


def test_zero_learning_rate_leaves_params():
    images, anns = _sample()
    model = build_reference_fcnn(seed=1)
    before = model.copy()
    train(model, images, anns, HyperParams(lr=0.0), steps=3)
    for i, (w, b) in model.params.items():
        np.testing.assert_array_equal(w, before.params[i][0])
        np.testing.assert_array_equal(b, before.params[i][1])


def test_depth_loss_is_masked_to_target_cells(rng):
    pred = rng.random((2, 3, 20, 20))
    gt = np.zeros((2, 3, 20, 20))
    gt[:, 2, 5, 5] = 1.0
    gt[:, 1, 5, 5] = 1.5
    loss, grad = composite_loss(pred, gt)
    assert np.count_nonzero(grad[:, 1]) == 2  # only the masked cells carry depth gradient
    off = pred.copy()
    off[:, 1, 0, 0] += 10.0  # depth far off-target does not change the loss
    assert composite_loss(off, gt)[0] == pytest.approx(loss)
