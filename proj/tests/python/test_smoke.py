import json
import math

import numpy as np
import pytest

import omnipose

TOY_CONFIG = {
    "input_size": [32, 32],
    "seed": 3,
    "backbone": {"stem_channels": 4, "branches": [{"channels": 4, "divisor": 4}, {"channels": 6, "divisor": 8}]},
    "wasp": {"num_joints": 2, "dilations": [1, 2], "branch_channels": 4, "llf_channels": 3},
}


def reference_conv(x, w, b, stride, dilation, padding):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    ow = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    y = np.zeros((n, o, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = xp[:, :, i * stride : i * stride + dilation * (kh - 1) + 1 : dilation,
                       j * stride : j * stride + dilation * (kw - 1) + 1 : dilation]
            y[:, :, i, j] = np.einsum("nckl,ockl->no", patch, w) + b
    return y


def test_conv2d_matches_numpy_reference():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (2, 3, 11, 9))
    w = rng.uniform(-1, 1, (4, 3, 3, 3))
    b = rng.uniform(-1, 1, 4)
    y = omnipose.conv2d(x, w, b, stride=(2, 2), dilation=(2, 2), padding=(1, 1))
    np.testing.assert_allclose(y, reference_conv(x, w, b, 2, 2, 1), rtol=1e-12, atol=1e-12)


def test_transposed_conv_is_the_adjoint():
    rng = np.random.default_rng(1)
    w = rng.uniform(-1, 1, (3, 2, 3, 3))
    x = rng.uniform(-1, 1, (1, 2, 8, 8))
    y = omnipose.conv2d(x, w, stride=(2, 2), padding=(1, 1))
    v = rng.uniform(-1, 1, y.shape)
    back = omnipose.transposed_conv2d(v, w, stride=(2, 2), padding=(1, 1), output_padding=(1, 1))
    assert back.shape == x.shape
    assert math.isclose(float(np.sum(y * v)), float(np.sum(x * back)), rel_tol=1e-12)


def test_modulate_range():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 2, (1, 3, 10, 12))
    y = omnipose.modulate(x)
    for c in range(3):
        assert abs(y[0, c].max() - x[0, c].max()) <= 1e-12
        assert abs(y[0, c].min()) <= 1e-12


def test_codec_round_trip():
    kps = np.array([[37.0, 22.0, 2], [0.0, 0.0, 0]])
    maps, mask = omnipose.encode(kps, 16, 16)
    assert maps.shape == (2, 16, 16)
    assert mask == [True, False]
    decoded, conf = omnipose.decode(maps)
    assert abs(decoded[0, 0] - 37.0) < 0.4 and abs(decoded[0, 1] - 22.0) < 0.4
    assert decoded[1, 2] == 0 and conf[1] == 0.0


def test_metrics():
    gt = np.array([[0.0, 0.0, 2], [5.0, 5.0, 2]])
    pred = np.array([[1.0, 0.0, 2], [5.0, 7.0, 2]])
    assert abs(omnipose.oks(pred, gt, 100.0, [0.1, 0.2]) - math.exp(-0.5)) <= 1e-9
    assert omnipose.pckh([gt, None], [gt, gt], [10.0, 10.0])["mean"] == 0.5
    report = omnipose.oks_ap([(gt, 1, 0.9)], [(gt, 1, 2500.0)], [0.1, 0.2])
    assert report["ap"] == 1.0 and report["ar"] == 1.0


def test_model_forward_and_weights(tmp_path):
    model = omnipose.Model(json.dumps(TOY_CONFIG))
    image = np.random.default_rng(3).uniform(0, 1, (1, 3, 32, 32))
    y = model.forward(image)
    assert y.shape == (1, 2, 8, 8)
    np.testing.assert_array_equal(y, omnipose.Model(json.dumps(TOY_CONFIG)).forward(image))
    assert not omnipose.Model(json.dumps(TOY_CONFIG), zero_init=True).forward(image).any()
    model.save_weights(tmp_path / "w")
    other = omnipose.Model(json.dumps(TOY_CONFIG), zero_init=True)
    other.load_weights(tmp_path / "w")
    np.testing.assert_array_equal(other.forward(image), y)
    assert model.parameter_count > 0


def test_tensor_files(tmp_path):
    a = np.arange(24, dtype=np.float64).reshape(2, 3, 4) / 7
    omnipose.write_tensor(tmp_path / "a.omt", a)
    np.testing.assert_array_equal(omnipose.read_tensor(tmp_path / "a.omt"), a)
    (tmp_path / "bad.omt").write_bytes(b"OMNI")
    with pytest.raises(OSError, match="at byte 4"):
        omnipose.read_tensor(tmp_path / "bad.omt")


def test_evaluate_and_count(tmp_path):
    gt = {
        "categories": [{"keypoints": ["a", "b"], "k_i": [0.1, 0.1]}],
        "annotations": [{"id": 1, "image_id": 1, "keypoints": [3, 4, 2, 9, 9, 1], "area": 400, "head_size": 6}],
    }
    pred = json.loads(json.dumps(gt))
    pred["annotations"][0]["score"] = 0.7
    (tmp_path / "gt.json").write_text(json.dumps(gt))
    (tmp_path / "pred.json").write_text(json.dumps(pred))
    assert omnipose.evaluate(tmp_path / "pred.json", tmp_path / "gt.json")["mean"] == 1.0
    assert omnipose.evaluate(tmp_path / "pred.json", tmp_path / "gt.json", metric="oks-ap")["ap"] == 1.0

    (tmp_path / "model.json").write_text(json.dumps(TOY_CONFIG))
    counts = omnipose.count(tmp_path / "model.json")
    assert counts["params"] == omnipose.Model(json.dumps(TOY_CONFIG)).parameter_count
    assert counts["lite_vs_standard"]["lite_params"] < counts["params"]


def test_errors_and_selftest():
    with pytest.raises(ValueError):
        omnipose.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))
    with pytest.raises(omnipose.SchemaError):
        omnipose.Model('{"wasp": {"dilations": "x"}}')
    failures, report = omnipose.selftest()
    assert failures == 0, report
