import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ramit.model import TASKS, ModelConfig, build_model
from ramit.pipeline.data import (
    MisalignedPair,
    NormStats,
    PatchTooLarge,
    Rng,
    augment,
    awgn_degrade,
    box_downsample,
    crop_back,
    crop_patch,
    dihedral,
    dihedral_inverse,
    pad_to_multiple,
)
from ramit.pipeline.metrics import NotRgb, gaussian_window, psnr, rgb_to_y, ssim
from ramit.pipeline.netpbm import (
    CorruptHeader,
    ImageBuffer,
    TruncatedData,
    UnsupportedFormat,
    decode,
    encode,
    load_image,
    save_image,
)
from ramit.pipeline.synthetic import test_card as make_card
from ramit.pipeline.train import (
    EmptyDataset,
    Sample,
    TrainSchedule,
    load_manifest,
    restore,
    train_loop,
)

# -- netpbm -------------------------------------------------------------------


def test_white_p6_bytes():
    raw = encode(ImageBuffer.from_array(np.ones((3, 1, 2))))
    assert raw == b"P6\n2 1\n255\n" + b"\xff" * 6
    # the header text is 11 bytes: "P6" LF "2 1" LF "255" LF
    assert len(raw) == 11 + 6


@pytest.mark.parametrize("channels", [1, 3])
def test_save_load_byte_identical(tmp_path, channels):
    img = ImageBuffer.from_array(make_card(24, channels))
    path = str(tmp_path / "a.pnm")
    save_image(img, path)
    again = load_image(path)
    assert again == img
    save_image(again, str(tmp_path / "b.pnm"))
    assert (tmp_path / "a.pnm").read_bytes() == (tmp_path / "b.pnm").read_bytes()


def test_decode_accepts_comments_and_spacing():
    img = decode(b"P5 # gray\n2\t1\n# max\n255\n\x00\x80")
    assert (img.width, img.height, img.channels, img.samples) == (2, 1, 1, b"\x00\x80")


@pytest.mark.parametrize("raw,err", [
    (b"P6\n1 1\n65535\n" + bytes(6), UnsupportedFormat),
    (b"P3\n1 1\n255\n0 0 0", UnsupportedFormat),
    (b"P6\n1 x\n255\n" + bytes(3), CorruptHeader),
    (b"P6\n2 2\n255\n" + bytes(5), TruncatedData),
    (b"P6\n2 2", CorruptHeader),
])
def test_decode_errors(raw, err):
    with pytest.raises(err):
        decode(raw)


@given(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3]), st.data())
def test_array_round_trip(w, h, c, data):
    samples = data.draw(st.binary(min_size=w * h * c, max_size=w * h * c))
    img = ImageBuffer(w, h, c, samples)
    assert ImageBuffer.from_array(img.to_array()) == img
    assert decode(encode(img)) == img


# -- degradation --------------------------------------------------------------


def test_awgn_zero_sigma_is_identity():
    hq = make_card(16)
    np.testing.assert_array_equal(awgn_degrade(hq, 0.0, Rng(0)), hq)


def test_awgn_statistics():
    hq = np.zeros((1, 1000, 1000))
    noise = awgn_degrade(hq, 25.0, Rng(3, "noise"))
    assert abs(noise.std() - 25 / 255) <= 0.02 * 25 / 255
    assert abs(noise.mean()) < 1e-3


def test_awgn_is_deterministic_and_unclipped():
    hq = np.ones((3, 8, 8))
    a = awgn_degrade(hq, 50.0, Rng(1, "n"))
    b = awgn_degrade(hq, 50.0, Rng(1, "n"))
    np.testing.assert_array_equal(a, b)
    assert a.max() > 1.0


def test_awgn_rejects_out_of_range():
    with pytest.raises(ValueError):
        awgn_degrade(np.zeros((1, 2, 2)), 60.0, Rng(0))


def test_rng_streams():
    assert Rng(0, "a").uniform() == Rng(0, "a").uniform()
    assert Rng(0, "a").uniform() != Rng(0, "b").uniform()
    parent = Rng(0, "a")
    assert parent.fork(3).uniform() == Rng(0, "a").fork(3).uniform()
    assert parent.fork(3).uniform() != parent.fork(4).uniform()


def test_box_downsample():
    hq = np.arange(16.0).reshape(1, 4, 4)
    np.testing.assert_array_equal(box_downsample(hq, 2)[0], [[2.5, 4.5], [10.5, 12.5]])


# -- augmentation and cropping ------------------------------------------------


def test_dihedral_group_laws(rng):
    x = rng.standard_normal((2, 3, 5))
    np.testing.assert_array_equal(dihedral(x, 0), x)
    np.testing.assert_array_equal(dihedral(dihedral(x, 1), 1), dihedral(x, 2))
    for t in range(8):
        np.testing.assert_array_equal(dihedral(dihedral(x, t), dihedral_inverse(t)), x)


def test_augment_keeps_pairs_aligned(rng):
    lq = rng.standard_normal((3, 4, 6))
    hq = np.repeat(np.repeat(lq, 2, axis=1), 2, axis=2)
    for t in range(8):
        h2, l2 = augment(hq, lq, Rng(0), t)
        np.testing.assert_array_equal(h2, np.repeat(np.repeat(l2, 2, axis=1), 2, axis=2))
    with pytest.raises(MisalignedPair):
        augment(hq[:, :7], lq, Rng(0))


def _coords(h, w, s=1):
    ys, xs = np.meshgrid(np.arange(h * s) // s, np.arange(w * s) // s, indexing="ij")
    return np.stack([ys, xs]).astype(np.float64)


@pytest.mark.parametrize("scale", [1, 2, 3])
def test_crop_coordinate_law(scale):
    lq, hq = _coords(10, 12), _coords(10, 12, scale)
    for k in range(5):
        hp, lp = crop_patch(hq, lq, 4, scale, Rng(k))
        y, x = int(lp[0, 0, 0]), int(lp[1, 0, 0])
        assert hp.shape == (2, 4 * scale, 4 * scale)
        np.testing.assert_array_equal(hp[:, ::scale, ::scale], lp)
        assert (hp[0, 0, 0], hp[1, 0, 0]) == (y, x)


def test_crop_full_image_and_errors():
    lq = np.ones((1, 5, 5))
    hp, lp = crop_patch(lq, lq, 5, 1, Rng(0))
    np.testing.assert_array_equal(lp, lq)
    with pytest.raises(PatchTooLarge):
        crop_patch(lq, lq, 6, 1, Rng(0))


# -- padding ------------------------------------------------------------------


def test_pad_examples(rng):
    x = rng.random((3, 64, 64))
    padded, size = pad_to_multiple(x)
    assert padded is x or np.array_equal(padded, x)
    x = rng.random((3, 65, 70))
    padded, size = pad_to_multiple(x)
    assert padded.shape == (3, 96, 96) and size == (65, 70)
    np.testing.assert_array_equal(crop_back(padded, size), x)
    one = np.full((1, 1, 1), 0.4)
    padded, _ = pad_to_multiple(one)
    assert padded.shape == (1, 32, 32)
    np.testing.assert_array_equal(padded, 0.4)


def test_pad_mirrors():
    x = np.arange(3.0).reshape(1, 1, 3)
    padded, _ = pad_to_multiple(x, 8)
    np.testing.assert_array_equal(padded[0, 0], [0, 1, 2, 2, 1, 0, 0, 1])


@pytest.mark.parametrize("task", TASKS)
def test_restore_shape_round_trip(task):
    cfg = ModelConfig(dim=8, depths=[1, 1, 1, 1], window=4, task=task, scale=2)
    lq = np.random.default_rng(0).random((cfg.in_channels, 21, 18)).astype(np.float32)
    out = restore(build_model(cfg, 0), lq)
    assert out.shape == (cfg.in_channels, 21 * cfg.upscale, 18 * cfg.upscale)
    assert out.min() >= 0 and out.max() <= 1


def test_norm_stats_round_trip(rng):
    ims = [rng.random((3, 4, 4)) for _ in range(3)]
    ns = NormStats.from_images(ims)
    np.testing.assert_allclose(ns.denormalize(ns.normalize(ims[0])), ims[0], atol=1e-12)
    assert NormStats.from_dict(ns.to_dict()) == ns


# -- metrics ------------------------------------------------------------------


def test_bt601_luma():
    assert rgb_to_y(np.ones((3, 1, 1)))[0, 0, 0] == pytest.approx(235.0, abs=1e-3)
    assert rgb_to_y(np.zeros((3, 1, 1)))[0, 0, 0] == pytest.approx(16.0)
    assert rgb_to_y(np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1))[0, 0, 0] == pytest.approx(144.553)
    with pytest.raises(NotRgb):
        rgb_to_y(np.zeros((1, 2, 2)))


def test_psnr_closed_forms(rng):
    a = rng.random((3, 8, 8))
    assert psnr(a, a) == math.inf
    assert psnr(np.zeros((1, 4, 4)), np.full((1, 4, 4), 0.1)) == pytest.approx(20.0)


def _ssim_brute(a, b, peak=1.0):
    win = gaussian_window()
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    vals = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = (win * pa).sum(), (win * pb).sum()
            va = (win * (pa - ma) ** 2).sum()
            vb = (win * (pb - mb) ** 2).sum()
            cov = (win * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_identity_and_inverted_binary():
    a = (make_card(16, 1) > 0.5).astype(np.float64)
    assert ssim(a, a) == pytest.approx(1.0)
    b = 1.0 - a
    s = ssim(a, b)
    assert s <= 0
    assert s == pytest.approx(_ssim_brute(a[0], b[0]), abs=1e-6)


def test_ssim_matches_brute_force(rng):
    a = rng.random((2, 14, 13))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    want = np.mean([_ssim_brute(a[c], b[c]) for c in range(2)])
    assert ssim(a, b) == pytest.approx(want, abs=1e-6)


# -- schedule and training ----------------------------------------------------


def test_lr_schedule():
    sch = TrainSchedule()
    assert sch.lr(0) == 0.0
    assert sch.lr(20) == pytest.approx(0.0004 * 64 / 64)
    assert sch.lr(10) == pytest.approx(0.5 * sch.lr(20))
    assert sch.lr(200) == pytest.approx(0.5 * sch.lr(20))
    assert sch.lr(399) == pytest.approx(sch.lr(20) / 16)
    assert sch.phase(0) == (64, 64) and sch.phase(150) == (96, 32) and sch.phase(250) == (128, 16)
    assert TrainSchedule(phases=[(0, 64, 16)]).base_lr == pytest.approx(0.0016)
    assert TrainSchedule.from_dict(sch.to_dict()) == sch


TINY = ModelConfig(dim=8, depths=[1, 1, 1, 1], window=4, task="derain")


def test_zero_lr_keeps_parameters_and_loss():
    model = build_model(TINY, 0)
    before = [p.data.copy() for p in model.parameters()]
    flat = Sample(np.full((3, 16, 16), 0.5, np.float32), np.full((3, 16, 16), 0.3, np.float32))
    sch = TrainSchedule(epochs=1, warmup_epochs=0, lr_base=0.0, phases=[(0, 16, 1)])
    res = train_loop(model, [flat], sch, Rng(0), steps=4)
    for b, p in zip(before, model.parameters()):
        np.testing.assert_array_equal(b, p.data)
    assert len({row[3] for row in res.trace}) == 1


def test_training_is_deterministic(tmp_path):
    hq = make_card(16)
    runs = []
    for k in range(2):
        model = build_model(ModelConfig(dim=8, depths=[1, 1, 1, 1], window=4, task="color_dn"), 0)
        sch = TrainSchedule(epochs=1, warmup_epochs=0, lr_base=1e-3, phases=[(0, 16, 2)])
        path = str(tmp_path / f"{k}.ckpt")
        res = train_loop(model, [Sample(hq)], sch, Rng(9, "train"), steps=3, checkpoint_path=path)
        runs.append((res.csv(), open(path, "rb").read()))
    assert runs[0] == runs[1]
    assert runs[0][0].splitlines()[0] == "step,epoch,lr,loss"


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        train_loop(build_model(TINY, 0), [], TrainSchedule(), Rng(0))


def test_manifest(tmp_path):
    save_image(ImageBuffer.from_array(make_card(8)), str(tmp_path / "a.ppm"))
    (tmp_path / "m.json").write_text(json.dumps([{"hq_path": "a.ppm", "lq_path": "a.ppm"}]))
    (tmp_path / "e.json").write_text("[]")
    samples = load_manifest(str(tmp_path / "m.json"))
    assert samples[0].hq.shape == (3, 8, 8) and samples[0].lq is not None
    with pytest.raises(EmptyDataset):
        load_manifest(str(tmp_path / "e.json"))
