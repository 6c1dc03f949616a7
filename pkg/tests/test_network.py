import math

import numpy as np
import pytest

from deflash.nn import (Checkpoint, CheckpointError, NetworkSpec, build_network, images_to_tensor,
                        import_encoder_weights, load_checkpoint, read_tensors, save_checkpoint, tensor_to_images,
                        truncated_normal, write_tensors, xavier_bound)

SMALL = NetworkSpec(width_multiplier=1 / 16)


def test_architecture_counts():
    spec = NetworkSpec()
    layers = spec.layers()
    enc = [l for l in layers if l.kind == "conv" and l.name.startswith("enc")]
    assert len(enc) == 13
    assert sum(l.kind == "maxpool" for l in layers) == 5
    assert sum(l.kind == "deconv" for l in layers) == 5
    assert sum(l.kind == "concat" for l in layers) == 5
    assert layers[-1].kind == "sigmoid"
    assert spec.widths == (64, 128, 256, 512, 512)
    assert NetworkSpec(width_multiplier=0.125).widths == (8, 16, 32, 64, 64)


def test_full_width_parameter_count():
    # 13 VGG-16 convolutions hold 14,714,688 parameters
    shapes = NetworkSpec().parameter_shapes()
    enc = sum(math.prod(s) for k, s in shapes.items() if k.startswith("enc"))
    assert enc == 14_714_688


def test_forward_shape_and_range(rng):
    net = build_network(NetworkSpec(width_multiplier=0.125, final_gamma=1.0), seed=0)
    x = rng.random((2, 3, 64, 64)).astype(np.float32)
    y = net.forward(x, "train")
    assert y.shape == x.shape and y.dtype == np.float32
    assert np.all((y > 0) & (y < 1))


def test_fresh_network_predicts_midpoint(rng):
    net = build_network(NetworkSpec(width_multiplier=0.125), seed=0)
    y = net.forward(rng.random((1, 3, 32, 32)).astype(np.float32))
    np.testing.assert_array_equal(y, 0.5)


def test_non_divisible_input_rejected():
    net = build_network(SMALL)
    with pytest.raises(ValueError, match="32"):
        net.forward(np.zeros((1, 3, 48, 40), np.float32))


def test_bad_width_multiplier():
    with pytest.raises(ValueError):
        NetworkSpec(width_multiplier=0)
    with pytest.raises(ValueError):
        NetworkSpec(width_multiplier=1e-3)


def test_seed_determinism():
    a, b, c = build_network(SMALL, seed=3), build_network(SMALL, seed=3), build_network(SMALL, seed=4)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert not np.array_equal(a.params["enc1_1.w"], c.params["enc1_1.w"])


def test_truncated_normal_bounds(rng):
    s = truncated_normal(rng, (200_000,), 0.1)
    assert np.abs(s).max() <= 0.2
    assert abs(s.mean()) < 1e-3
    # variance of a normal truncated at two sigma is 0.7737 sigma^2
    assert s.std() == pytest.approx(0.1 * math.sqrt(0.7737), rel=0.01)


def test_init_distributions():
    net = build_network(NetworkSpec(width_multiplier=0.125), seed=0)
    assert xavier_bound(27, 3) == pytest.approx(0.4472, abs=1e-4)
    in_ch = net.params["head.w"].shape[1]
    assert np.abs(net.params["head.w"]).max() <= xavier_bound(in_ch * 9, 27)
    for k, v in net.params.items():
        if k.endswith(".w") and k != "head.w":
            assert np.abs(v).max() <= 0.2 + 1e-7
        if k.endswith(".b") or k.endswith(".beta"):
            assert not v.any()


def test_eval_leaves_running_stats(rng):
    net = build_network(SMALL)
    before = {k: v.copy() for k, v in net.buffers.items()}
    net.forward(rng.random((2, 3, 32, 32)).astype(np.float32), "eval")
    assert all(np.array_equal(before[k], net.buffers[k]) for k in before)
    net.forward(rng.random((2, 3, 32, 32)).astype(np.float32), "train")
    assert any(not np.array_equal(before[k], net.buffers[k]) for k in before)


def _jvp_error(net, x, rng, h=1e-7):
    r = rng.standard_normal(x.shape)

    def f(n):
        return float(np.sum(n.copy().forward(x, "train") * r))

    work = net.copy()
    y = work.forward(x, "train")
    grads, gx = work.backward(r)
    v = {k: rng.standard_normal(p.shape) for k, p in net.params.items()}
    vx = rng.standard_normal(x.shape)
    analytic = sum(float(np.sum(grads[k] * v[k])) for k in v) + float(np.sum(gx * vx))
    plus, minus = net.copy(), net.copy()
    for k in v:
        plus.params[k] += h * v[k]
        minus.params[k] -= h * v[k]
    xp, xm = x + h * vx, x - h * vx
    num = (float(np.sum(plus.copy().forward(xp, "train") * r)) -
           float(np.sum(minus.copy().forward(xm, "train") * r))) / (2 * h)
    return abs(analytic - num) / max(abs(analytic), abs(num))


def _jitter_offsets(net, rng):
    # zero betas put a 1x1 single-sample batch norm output exactly on the LeakyReLU kink
    for k in net.params:
        if k.endswith(".b") or k.endswith(".beta"):
            net.params[k] = 0.05 * rng.standard_normal(net.params[k].shape)


def test_full_network_directional_derivative(rng):
    net = build_network(NetworkSpec(width_multiplier=1 / 16, final_gamma=1.0), seed=1, dtype=np.float64)
    _jitter_offsets(net, rng)
    x = rng.random((1, 3, 32, 32))
    assert _jvp_error(net, x, rng) < 1e-3


def test_full_network_directional_derivative_batch(rng):
    net = build_network(NetworkSpec(width_multiplier=1 / 16, final_gamma=0.7), seed=2, dtype=np.float64)
    _jitter_offsets(net, rng)
    x = rng.random((2, 3, 64, 32))
    assert _jvp_error(net, x, rng) < 1e-3


def test_image_tensor_layout(rng):
    imgs = [rng.random((4, 6, 3)).astype(np.float32) for _ in range(2)]
    t = images_to_tensor(imgs)
    assert t.shape == (2, 3, 4, 6)
    assert t[1, 2, 3, 5] == imgs[1][3, 5, 2]
    back = tensor_to_images(t)
    assert all(np.array_equal(a, b) for a, b in zip(imgs, back))


def test_checkpoint_round_trip(tmp_path, rng):
    net = build_network(SMALL, seed=5)
    net.forward(rng.random((2, 3, 32, 32)).astype(np.float32), "train")
    opt = ({"step": 3, "lr": 1e-4}, {"m/head.w": rng.random((3, 2, 3, 3)).astype(np.float32)})
    path = tmp_path / "a.ckpt"
    save_checkpoint(Checkpoint(net, 7, opt, {"encoding": "C"}), path)
    back = load_checkpoint(path)
    assert back.step == 7 and back.meta == {"encoding": "C"}
    assert back.network.spec == net.spec
    for k in net.params:
        assert back.network.params[k].tobytes() == net.params[k].tobytes()
    for k in net.buffers:
        assert back.network.buffers[k].tobytes() == net.buffers[k].tobytes()
    assert back.optimizer[0] == opt[0]
    assert back.optimizer[1]["m/head.w"].tobytes() == opt[1]["m/head.w"].tobytes()
    x = rng.random((1, 3, 32, 32)).astype(np.float32)
    assert net.forward(x).tobytes() == back.network.forward(x).tobytes()
    assert not list(tmp_path.glob("*.tmp"))


def test_checkpoint_header(tmp_path):
    path = tmp_path / "t.bin"
    write_tensors(path, {"a": np.arange(6, dtype=np.float32).reshape(2, 3)}, {"k": 1})
    raw = path.read_bytes()
    assert raw[:8] == b"DFLSHCK1"
    tensors, meta = read_tensors(path)
    np.testing.assert_array_equal(tensors["a"], np.arange(6).reshape(2, 3))
    assert meta["k"] == 1


def test_checkpoint_corrupt(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + b"\0" * 20)
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    good = tmp_path / "good.ckpt"
    save_checkpoint(Checkpoint(build_network(SMALL)), good)
    good.write_bytes(good.read_bytes()[:-10])
    with pytest.raises(CheckpointError):
        load_checkpoint(good)


def test_checkpoint_shape_mismatch(tmp_path):
    net = build_network(SMALL)
    net.params["head.w"] = net.params["head.w"][:, :1]
    path = tmp_path / "x.ckpt"
    save_checkpoint(Checkpoint(net), path)
    with pytest.raises(CheckpointError, match="head.w"):
        load_checkpoint(path)


def test_import_encoder_weights(tmp_path):
    src = build_network(SMALL, seed=1)
    path = tmp_path / "enc.ckpt"
    save_checkpoint(Checkpoint(src), path)
    dst = build_network(SMALL, seed=2)
    names = import_encoder_weights(dst, path)
    assert len([n for n in names if n.endswith(".w")]) == 13
    assert np.array_equal(dst.params["enc3_2.w"], src.params["enc3_2.w"])
    assert not np.array_equal(dst.params["dec3.conv.w"], src.params["dec3.conv.w"])
    other = tmp_path / "wide.ckpt"
    save_checkpoint(Checkpoint(build_network(NetworkSpec(width_multiplier=0.125))), other)
    with pytest.raises(CheckpointError):
        import_encoder_weights(build_network(SMALL), other)
