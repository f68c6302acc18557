import numpy as np
import pytest

from toolsense.cae import (
    CaeConfig,
    CaeError,
    build,
    decode,
    desk_config,
    encode,
    load_model,
    loss,
    loss_and_grads,
    paper_config,
    reconstruct,
    reconstruction_error,
    save_model,
    train,
)
from toolsense.numerics import finite_diff_grad, spawn_rng
from toolsense.numerics.gradcheck import relative_error

FULL_SCALE_ROWS = [
    ((128, 96, 3), (64, 48, 32)),
    ((64, 48, 32), (32, 24, 64)),
    ((32, 24, 64), (16, 12, 128)),
    ((16, 12, 128), (8, 6, 256)),
    ((8, 6, 256), (4, 3, 512)),
    (6144, 254),
    (254, 15),
    (15, 254),
    (254, 6144),
    ((4, 3, 512), (8, 6, 256)),
    ((8, 6, 256), (16, 12, 128)),
    ((16, 12, 128), (32, 24, 64)),
    ((32, 24, 64), (64, 48, 32)),
    ((64, 48, 32), (128, 96, 3)),
]


def tiny_config(**overrides):
    base = dict(input_shape=(8, 8, 1), conv_channels=(2, 4), fc_widths=(),
                bottleneck=3, seed=1)
    base.update(overrides)
    return CaeConfig(**base)


def off_kink(model, seed=0):
    """Small random biases so no ReLU preactivation sits exactly at zero."""
    rng = spawn_rng(seed, "offkink")
    for i in range(len(model.biases)):
        model.biases[i] = rng.normal(size=model.biases[i].shape) * 0.05
    return model


class TestBuild:
    def test_full_scale_preset_layer_shapes(self):
        model = build(paper_config())
        assert model.layer_shapes() == FULL_SCALE_ROWS

    def test_full_scale_flatten_width(self):
        model = build(paper_config())
        assert model.encoder[4].out_shape == (512, 3, 4)
        assert model.encoder[5].in_shape == (6144,)

    def test_desk_config_chain(self):
        model = build(desk_config())
        shapes = model.layer_shapes()
        assert shapes[0] == ((32, 24, 3), (16, 12, 8))
        assert shapes[2] == ((8, 6, 16), (4, 3, 32))
        # flatten of the desk conv stack is 4*3*32
        assert shapes[3] == (384, 64)
        assert shapes[4] == (64, 15)
        assert model.config.bottleneck == 15

    def test_halving_arithmetic(self):
        from toolsense.numerics import conv_output_extent
        assert conv_output_extent(128, 4, 2, 1) == 64

    def test_decoder_inverts_encoder_shape(self):
        for cfg in (desk_config(), tiny_config(),
                    CaeConfig(input_shape=(16, 16, 2), conv_channels=(4, 8),
                              fc_widths=(10,), bottleneck=4)):
            model = build(cfg)
            assert model.decoder[-1].out_shape == model.encoder[0].in_shape

    def test_bottleneck_sigmoid_others_relu(self):
        model = build(desk_config())
        acts = [spec.activation for spec in model.layers]
        assert acts[model.bottleneck_index] == "sigmoid"
        assert acts[-1] == "sigmoid"
        middle = acts[:model.bottleneck_index] + acts[model.bottleneck_index + 1:-1]
        assert set(middle) == {"relu"}

    def test_inconsistent_chain_rejected(self):
        with pytest.raises(Exception):
            build(CaeConfig(input_shape=(5, 5, 1), conv_channels=(2, 2, 2),
                            fc_widths=(), bottleneck=2))


class TestEncode:
    def test_outputs_strictly_inside_unit_interval(self):
        model = build(tiny_config())
        rng = spawn_rng(1, "enc")
        img = rng.uniform(0, 255, size=(1, 8, 8))
        feats = encode(model, img)
        assert feats.shape == (3,)
        assert np.all(feats > 0.0) and np.all(feats < 1.0)

    def test_deterministic(self):
        model = build(tiny_config())
        rng = spawn_rng(2, "enc")
        img = rng.uniform(0, 255, size=(1, 8, 8))
        np.testing.assert_array_equal(encode(model, img), encode(model, img))

    def test_shape_mismatch(self):
        model = build(tiny_config())
        with pytest.raises(CaeError):
            encode(model, np.zeros((3, 8, 8)))

    def test_batched_matches_single(self):
        model = build(tiny_config())
        rng = spawn_rng(3, "enc")
        imgs = rng.uniform(0, 255, size=(4, 1, 8, 8))
        batched = encode(model, imgs)
        for i in range(4):
            np.testing.assert_allclose(batched[i], encode(model, imgs[i]), atol=1e-12)


class TestLoss:
    def test_identical_pair_is_zero(self):
        x = np.full((1, 2, 2), 100.0)
        assert reconstruction_error(x, x) == 0.0

    def test_uniform_difference_formula(self):
        n = 48
        x = np.zeros((3, 4, 4))
        y = x + 0.1 * 255.0
        assert reconstruction_error(y, x) == pytest.approx(0.005 * n)

    def test_model_loss_matches_manual(self):
        model = build(tiny_config())
        rng = spawn_rng(4, "loss")
        batch = rng.uniform(0, 255, size=(3, 1, 8, 8))
        recon = reconstruct(model, batch)
        assert loss(model, batch) == pytest.approx(
            reconstruction_error(recon, batch), rel=1e-12)

    def test_decode_inverts_encode_shapes(self):
        model = build(desk_config())
        rng = spawn_rng(5, "dec")
        img = rng.uniform(0, 255, size=(3, 24, 32))
        out = decode(model, encode(model, img))
        assert out.shape == img.shape


class TestGradients:
    def test_full_model_gradient_check(self):
        model = off_kink(build(tiny_config()))
        rng = spawn_rng(0, "cae-gc")
        batch = rng.uniform(0, 255, size=(2, 1, 8, 8))
        _, gws, gbs = loss_and_grads(model, batch)
        for i in range(len(model.layers)):
            def loss_w(p, i=i):
                m2 = model.copy()
                m2.weights[i] = p
                return loss(m2, batch)

            def loss_b(p, i=i):
                m2 = model.copy()
                m2.biases[i] = p
                return loss(m2, batch)

            assert relative_error(
                gws[i], finite_diff_grad(loss_w, model.weights[i].copy(), h=1e-6)) < 1e-5
            assert relative_error(
                gbs[i], finite_diff_grad(loss_b, model.biases[i].copy(), h=1e-6)) < 1e-5


class TestTrain:
    def test_zero_epochs_noop(self):
        model = build(tiny_config(epochs=0))
        rng = spawn_rng(6, "train")
        imgs = rng.uniform(0, 255, size=(4, 1, 8, 8))
        trained, history = train(model, imgs)
        assert history == []
        for a, b in zip(trained.weights, model.weights):
            np.testing.assert_array_equal(a, b)

    def test_single_repeated_image_overfits(self):
        rng = spawn_rng(7, "train")
        img = rng.uniform(0, 255, size=(1, 8, 8))
        imgs = np.stack([img, img])
        cfg = CaeConfig(input_shape=(8, 8, 1), conv_channels=(4, 8), fc_widths=(16,),
                        bottleneck=3, epochs=500, learning_rate=0.05, batch_size=2,
                        lr_decay_every=250, seed=3)
        trained, history = train(build(cfg), imgs, cfg)
        per_pixel = history[-1] / (imgs.shape[0] * 64)
        assert per_pixel < 1e-3

    def test_deterministic_given_seed(self):
        rng = spawn_rng(8, "train")
        imgs = rng.uniform(0, 255, size=(6, 1, 8, 8))
        cfg = tiny_config(epochs=10, learning_rate=0.01, batch_size=4)
        t1, h1 = train(build(cfg), imgs, cfg)
        t2, h2 = train(build(cfg), imgs, cfg)
        assert h1 == h2
        for a, b in zip(t1.weights, t2.weights):
            np.testing.assert_array_equal(a, b)

    def test_needs_two_images(self):
        model = build(tiny_config())
        with pytest.raises(CaeError):
            train(model, np.zeros((1, 1, 8, 8)))


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        model = off_kink(build(tiny_config()), seed=9)
        path = tmp_path / "m.cae"
        save_model(path, model)
        loaded = load_model(path)
        assert loaded.config == model.config
        for a, b in zip(loaded.weights, model.weights):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(loaded.biases, model.biases):
            np.testing.assert_array_equal(a, b)

    def test_rewrite_is_byte_identical(self, tmp_path):
        model = build(tiny_config())
        p1, p2 = tmp_path / "a.cae", tmp_path / "b.cae"
        save_model(p1, model)
        save_model(p2, load_model(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_golden_file(self, tmp_path):
        import pathlib
        golden = pathlib.Path(__file__).parent / "golden" / "tiny.cae"
        model = load_model(golden)
        regen = tmp_path / "regen.cae"
        save_model(regen, model)
        assert regen.read_bytes() == golden.read_bytes()
        assert model.config.bottleneck == 3
