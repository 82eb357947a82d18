import math

import gradcases
import numpy as np
import pytest

from lungkit.errors import BundleFormatError, ShapeError, TrainingError
from lungkit.phantoms import blob_images, circle_phantoms
from lungkit.tinynet import (
    ModelBundle,
    Network,
    TrainConfig,
    adam_update,
    batchnorm_apply,
    bce_loss,
    build_mini_cnn,
    build_mini_unet,
    conv2d_apply,
    conv2d_grad,
    dense_apply,
    dropout_apply,
    extract_features,
    init_weights,
    load_bundle,
    maxpool2d_apply,
    predict,
    save_bundle,
    tconv2d_apply,
    train_model,
)
from lungkit.tinynet.bundle import dumps_container, loads_container

# -- layer examples ------------------------------------------------------------------------


def test_conv_examples():
    x = np.ones((1, 1, 3, 3))
    w = np.ones((1, 1, 3, 3))
    assert conv2d_apply(x, w, np.zeros(1), padding="valid").ravel().tolist() == [9.0]
    same = conv2d_apply(x, w, np.zeros(1), padding="same")[0, 0]
    assert same.tolist() == [[4, 6, 4], [6, 9, 6], [4, 6, 4]]


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(2, 3, 5, 4))
    w = np.eye(3).reshape(3, 3, 1, 1)
    assert np.allclose(conv2d_apply(x, w, np.zeros(3)), x, rtol=0, atol=1e-12)


def test_conv_zero_upstream(rng):
    x, w = rng.normal(size=(1, 2, 4, 4)), rng.normal(size=(3, 2, 3, 3))
    for g in conv2d_grad(x, w, np.zeros((1, 3, 4, 4))):
        assert not np.any(g)


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        conv2d_apply(np.ones((1, 2, 3, 3)), np.ones((1, 3, 3, 3)), np.zeros(1))


def test_tconv_examples():
    out = tconv2d_apply(np.full((1, 1, 1, 1), 2.5), np.ones((1, 1, 2, 2)))
    assert out.shape == (1, 1, 2, 2) and np.all(out == 2.5)
    assert not tconv2d_apply(np.zeros((1, 2, 3, 3)), np.ones((2, 4, 2, 2))).any()


def test_maxpool_examples():
    out, route = maxpool2d_apply(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert out.item() == 4.0 and route.item() == 3
    _, route = maxpool2d_apply(np.full((1, 1, 2, 2), 7.0))
    assert route.item() == 0


def test_dense_examples():
    x = np.array([[1.0, 2.0]])
    assert dense_apply(x, np.eye(2), np.zeros(2)).tolist() == [[1.0, 2.0]]
    assert dense_apply(x, np.array([[1.0], [1.0]]), np.array([0.5])).tolist() == [[3.5]]


def test_dropout_modes(rng):
    x = rng.normal(size=(3, 4))
    assert dropout_apply(x, 0.5, "infer")[0] is x
    assert np.array_equal(dropout_apply(x, 0.0, "train", rng)[0], x)
    big = np.ones(100_000)
    y, _ = dropout_apply(big, 0.5, "train", np.random.default_rng(0))
    assert 0.98 <= y.mean() / big.mean() <= 1.02
    with pytest.raises(ValueError):
        dropout_apply(x, 0.5, "train", None)


def test_batchnorm_normalizes(rng):
    x = rng.normal(3, 5, size=(8, 3, 4, 4))
    y, _ = batchnorm_apply(x, np.ones(3), np.zeros(3), "train", np.zeros(3), np.ones(3))
    assert np.allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    assert np.allclose(y.var(axis=(0, 2, 3)), 1, atol=1e-4)
    z, _ = batchnorm_apply(x, np.full(3, 2.0), np.full(3, 3.0), "train", np.zeros(3), np.ones(3))
    assert np.allclose(z.mean(axis=(0, 2, 3)), 3, atol=1e-12)
    assert np.allclose(z.std(axis=(0, 2, 3)), 2, atol=1e-4)


def test_batchnorm_running_stats_and_small_batch(rng):
    x = rng.normal(2, 1, size=(6, 2))
    rm, rv = np.zeros(2), np.ones(2)
    batchnorm_apply(x, np.ones(2), np.zeros(2), "train", rm, rv)
    assert np.allclose(rm, 0.1 * x.mean(axis=0))
    assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=0))
    with pytest.raises(ShapeError):
        batchnorm_apply(x[:1], np.ones(2), np.zeros(2), "train", rm, rv)


def test_bce_values():
    assert bce_loss(np.array([1.0, 0.0]), np.array([1, 0])) <= 1.2e-7
    assert bce_loss(np.array([0.5]), np.array([1])) == pytest.approx(math.log(2), abs=1e-12)


def test_adam_first_step_is_signed_lr():
    # the first step is lr * |g| / (|g| + eps), within 1e-6 * lr of lr once |g| >= 1e-2
    g = np.array([3.0, -0.02, 0.01])
    p, _, _ = adam_update(np.zeros(3), g, np.zeros(3), np.zeros(3), 1, lr=0.01)
    assert np.all(np.abs(np.abs(p) - 0.01) <= 1e-6 * 0.01)
    assert np.array_equal(np.sign(p), -np.sign(g))


def test_adam_zero_gradient_keeps_param():
    p, m, v = adam_update(np.array([1.5]), np.zeros(1), np.zeros(1), np.zeros(1), 1)
    assert p[0] == 1.5 and m[0] == 0 and v[0] == 0


def test_adam_two_steps_by_hand():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    p, m, v = np.array([1.0]), np.zeros(1), np.zeros(1)
    p, m, v = adam_update(p, np.array([0.5]), m, v, 1, lr, b1, b2, eps)
    p, m, v = adam_update(p, np.array([-0.2]), m, v, 2, lr, b1, b2, eps)
    m1, v1 = 0.1 * 0.5, 0.001 * 0.25
    p1 = 1.0 - lr * (m1 / 0.1) / (math.sqrt(v1 / 0.001) + eps)
    m2, v2 = 0.9 * m1 + 0.1 * -0.2, 0.999 * v1 + 0.001 * 0.04
    p2 = p1 - lr * (m2 / (1 - 0.81)) / (math.sqrt(v2 / (1 - 0.999**2)) + eps)
    assert abs(p[0] - p2) <= 1e-12


@pytest.mark.parametrize("seed", range(4))
def test_layer_gradients(seed):
    for name, analytic, numeric in gradcases.all_cases(seed, shapes=5):
        assert gradcases.passes(analytic, numeric), (name, gradcases.compare(analytic, numeric))


@pytest.mark.parametrize("builder", ["unet", "cnn"])
def test_network_backward_matches_finite_differences(builder):
    rng = np.random.default_rng(1)
    if builder == "unet":
        spec = build_mini_unet(2, 2, (1, 8, 8), batchnorm=True)
        y = (rng.random((3, 1, 8, 8)) < 0.5).astype(float)
    else:
        spec = build_mini_cnn((1, 8, 8), (2, 3), 4, batchnorm=True)
        y = np.array([[0.0], [1.0], [1.0]])
    net = Network(spec, seed=2, dtype=np.float64)
    x = rng.normal(size=(3, 1, 8, 8))
    buffers = {k: v.copy() for k, v in net.weights.items() if "running" in k}

    def loss():
        for k, v in buffers.items():
            net.weights[k][...] = v
        return net.loss_and_grads(x, y, np.random.default_rng(9))[0]

    _, grads = net.loss_and_grads(x, y, np.random.default_rng(9))
    pick = np.random.default_rng(0)
    for name, g in grads.items():
        flat = net.weights[name].reshape(-1)
        for i in pick.choice(flat.size, min(flat.size, 10), replace=False):
            old = flat[i]
            flat[i] = old + 1e-5
            fp = loss()
            flat[i] = old - 1e-5
            fm = loss()
            flat[i] = old
            assert gradcases.passes(g.reshape(-1)[i], (fp - fm) / 2e-5), (name, i)


# -- builders ------------------------------------------------------------------------------


def test_unet_shapes():
    spec = build_mini_unet(3, 16, (1, 64, 64))
    shapes = spec.shapes()
    assert shapes[-1] == (1, 64, 64)
    skips = [spec.index(x.params["source"]) for x in spec.layers if x.kind == "concat_skip"]
    assert sorted(shapes[i][1] for i in skips) == [16, 32, 64]
    assert {shapes[i][0] for i in skips} == {16, 32, 64}
    out = Network(spec).forward(np.random.default_rng(0).normal(size=(2, 1, 64, 64)))
    assert out.shape == (2, 1, 64, 64) and np.all((out > 0) & (out < 1))


def test_unet_rejects_indivisible_input():
    with pytest.raises(ShapeError):
        build_mini_unet(3, 4, (1, 36, 36))


TABLE_ROWS = [
    "Conv2D (32 filters, 3x3, ReLU)",
    "MaxPooling2D (2x2)",
    "Dropout (0.3)",
    "Conv2D (64 filters, 3x3, ReLU)",
    "MaxPooling2D (2x2)",
    "Dropout (0.3)",
    "Conv2D (128 filters, 3x3, ReLU)",
    "MaxPooling2D (2x2)",
    "Dropout (0.3)",
    "Conv2D (256 filters, 3x3, ReLU)",
    "MaxPooling2D (2x2)",
    "Dropout (0.3)",
    "Flatten",
    "Dense (256 neurons, ReLU)",
    "Dropout (0.5)",
    "Dense (1 neuron, Sigmoid)",
]


def test_full_width_cnn_matches_reference_architecture():
    spec = build_mini_cnn((1, 128, 128), (32, 64, 128, 256), 256)
    assert spec.describe() == TABLE_ROWS
    assert spec.shapes()[spec.index("flatten")] == (256 * 8 * 8,)


def test_toy_cnn_feature_length():
    spec = build_mini_cnn((1, 32, 32))
    assert spec.shapes()[spec.index("flatten")] == (512,)
    assert spec.weight_shapes()["fc.w"] == (512, 64)
    bundle = ModelBundle(spec, init_weights(spec, 0))
    x = np.random.default_rng(0).random((1, 1, 32, 32))
    feats = extract_features(bundle, np.concatenate([x, x]))
    assert feats.shape == (2, 512) and np.array_equal(feats[0], feats[1])


def test_spec_dict_round_trip():
    spec = build_mini_unet(2, 4, (1, 16, 16), batchnorm=True)
    from lungkit.tinynet import NetworkSpec

    assert NetworkSpec.from_dict(spec.to_dict()) == spec


def test_init_weights_bounds():
    spec = build_mini_cnn((1, 16, 16), (4, 8), 8, batchnorm=True)
    w = init_weights(spec, 5)
    assert np.abs(w["conv0.w"]).max() <= math.sqrt(6 / (9 + 36))
    assert not w["fc.b"].any() and np.all(w["bn0.gamma"] == 1) and np.all(w["bn0.running_var"] == 1)
    assert all(np.array_equal(w[k], v) for k, v in init_weights(spec, 5).items())


# -- training ------------------------------------------------------------------------------


def test_training_is_reproducible_and_reports_history():
    x, y = blob_images(16, 16, seed=4)
    spec = build_mini_cnn((1, 16, 16), (4, 8), 8)
    cfg = TrainConfig(lr=3e-3, batch_size=4, max_epochs=4, val_fraction=0.25, seed=3)
    a, hist = train_model(spec, (x, y), cfg)
    b, _ = train_model(spec, (x, y), cfg)
    assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)
    assert [h["epoch"] for h in hist] == list(range(1, len(hist) + 1))
    assert a.meta["best_val_loss"] == min(h["val_loss"] for h in hist)
    assert np.array_equal(predict(a, x), predict(a, x))


def test_patience_zero_stops_after_first_non_improving_epoch():
    x, y = blob_images(16, 16, seed=1)
    spec = build_mini_cnn((1, 16, 16), (4,), 4)
    _, hist = train_model(spec, (x, y), TrainConfig(lr=1.0, batch_size=8, max_epochs=30, patience=0, val_fraction=0.25))
    losses = [h["val_loss"] for h in hist]
    # every epoch but the last improved on the best so far
    assert all(losses[i] < min(losses[:i], default=np.inf) - 1e-6 for i in range(len(losses) - 1))
    assert len(hist) == 30 or losses[-1] >= min(losses[:-1]) - 1e-6


def test_training_rejects_bad_inputs():
    spec = build_mini_cnn((1, 16, 16), (4,), 4)
    with pytest.raises(ShapeError):
        train_model(spec, (np.zeros((4, 1, 8, 8)), np.zeros(4)))
    with pytest.raises(TrainingError):
        train_model(spec, (np.zeros((0, 1, 16, 16)), np.zeros(0)))
    with pytest.raises(ValueError):
        TrainConfig(val_fraction=1.0)


def test_segmentation_training_step_reduces_loss():
    imgs, masks = circle_phantoms(4, 16, seed=0)
    spec = build_mini_unet(2, 4, (1, 16, 16))
    _, hist = train_model(spec, (imgs[:, None] / 255.0, masks), TrainConfig(lr=3e-3, batch_size=2, max_epochs=5, val_fraction=0))
    assert hist[-1]["train_loss"] < hist[0]["train_loss"]


# -- persistence ---------------------------------------------------------------------------


def _bundle():
    spec = build_mini_cnn((1, 16, 16), (4, 8), 8, batchnorm=True)
    return ModelBundle(spec, init_weights(spec, 11), {"seed": 11, "note": "ü"})


def test_bundle_round_trip(tmp_path):
    b = _bundle()
    save_bundle(b, tmp_path / "a.lkmb")
    loaded = load_bundle(tmp_path / "a.lkmb")
    save_bundle(loaded, tmp_path / "b.lkmb")
    assert (tmp_path / "a.lkmb").read_bytes() == (tmp_path / "b.lkmb").read_bytes()
    assert loaded.meta == b.meta
    x = np.random.default_rng(0).random((3, 1, 16, 16))
    assert np.array_equal(predict(b, x), predict(loaded, x))


def test_bundle_layout(tmp_path):
    save_bundle(_bundle(), tmp_path / "a.lkmb")
    data = (tmp_path / "a.lkmb").read_bytes()
    assert data[:4] == b"LKMB"
    assert int.from_bytes(data[4:8], "little") == 1
    hlen = int.from_bytes(data[8:16], "little")
    import json

    header = json.loads(data[16 : 16 + hlen])
    assert all(e["dtype"] == "<f4" for e in header["tensors"].values())
    assert len(data) == 16 + hlen + sum(e["length"] for e in header["tensors"].values())


def test_bundle_errors(tmp_path):
    save_bundle(_bundle(), tmp_path / "a.lkmb")
    data = (tmp_path / "a.lkmb").read_bytes()
    with pytest.raises(BundleFormatError, match="magic mismatch"):
        loads_container(b"XXXX" + data[4:])
    with pytest.raises(BundleFormatError, match="truncated payload"):
        loads_container(data[:-4])
    with pytest.raises(BundleFormatError, match="version unsupported"):
        loads_container(data[:4] + (2).to_bytes(4, "little") + data[8:])
    bad = dumps_container({}, {"t": np.zeros(3, np.float32)}).replace(b'"length":12', b'"length":16')
    with pytest.raises(BundleFormatError, match="shape table inconsistent"):
        loads_container(bad)
