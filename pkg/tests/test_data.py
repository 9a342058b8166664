import warnings

import cv2
import numpy as np
import pytest

from fasthdr import color
from fasthdr.data import (PairedDataset, PairedSample, degrade, load_pairs, make_batch, synth_dataset, synth_pair,
                          synth_scene, write_dataset)
from fasthdr.errors import DataError
from fasthdr.imageio import read_png, write_png
from fasthdr.model import condition_input


def test_synth_pair_deterministic():
    a, b = synth_pair(7, 48, 40), synth_pair(7, 48, 40)
    assert np.array_equal(a.sdr, b.sdr) and np.array_equal(a.hdr, b.hdr)
    assert a.name == "synth_00007"
    assert not np.array_equal(a.sdr, synth_pair(8, 48, 40).sdr)


def test_synth_pair_quantised_and_in_range():
    s = synth_pair(1, 64, 64)
    assert s.sdr.shape == s.hdr.shape == (3, 64, 64)
    assert np.array_equal(color.dequantize(color.quantize(s.sdr, 8), 8), s.sdr)
    assert np.array_equal(color.dequantize(color.quantize(s.hdr, 16), 16), s.hdr)


def test_sdr_highlights_clipped_where_hdr_is_not():
    for seed in range(5):
        s = synth_pair(seed, 64, 64)
        clipped = (s.sdr >= 1.0).any(axis=0)
        assert clipped.any()
        # inside the clipped region the HDR still varies: information the SDR lost
        assert np.ptp(s.hdr[:, clipped]) > 0.01


def test_sdr_relinearised_differs_from_hdr():
    s = synth_pair(3, 64, 64)
    sdr_lin = color.gamut_709_to_2020(color.gamma709_decode(s.sdr))
    hdr_lin = color.pq_eotf(s.hdr)
    white = np.percentile(color.luma(hdr_lin), 99)
    assert np.abs(sdr_lin * white - hdr_lin).mean() > 0


def test_scene_range_and_degrade_chain():
    scene = synth_scene(np.random.default_rng(0), 32, 32)
    assert scene.min() >= 0 and scene.max() <= 1
    sdr, hdr = degrade(scene)
    np.testing.assert_allclose(hdr, color.pq_oetf(scene), atol=0.5 / 65535 + 1e-7)
    assert sdr.dtype == np.float32 and hdr.dtype == np.float32


def test_paired_sample_validation():
    with pytest.raises(DataError):
        PairedSample(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))
    with pytest.raises(ValueError):
        PairedSample(np.full((3, 4, 4), 2.0), np.zeros((3, 4, 4)))


def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.random((3, 10, 12)).astype(np.float32)
    for bits in (8, 16):
        path = tmp_path / f"x{bits}.png"
        write_png(path, img, bits)
        back, depth = read_png(path)
        assert depth == bits
        assert np.abs(back - img).max() <= 0.5 / (2**bits - 1) + 1e-6


def test_png_channel_order_is_rgb(tmp_path):
    img = np.zeros((3, 2, 2), np.float32)
    img[0] = 1.0  # pure red
    write_png(tmp_path / "r.png", img, 8)
    raw = cv2.imread(str(tmp_path / "r.png"), cv2.IMREAD_UNCHANGED)
    assert raw[0, 0].tolist() == [0, 0, 255]  # stored BGR by the codec
    assert read_png(tmp_path / "r.png")[0][0].min() == 1.0


def test_png_errors(tmp_path):
    with pytest.raises(DataError, match="no such file"):
        read_png(tmp_path / "missing.png")
    (tmp_path / "junk.png").write_bytes(b"not a png")
    with pytest.raises(DataError):
        read_png(tmp_path / "junk.png")
    write_png(tmp_path / "a.png", np.zeros((3, 4, 4)), 8)
    with pytest.raises(DataError, match="16-bit"):
        read_png(tmp_path / "a.png", bits=16)
    cv2.imwrite(str(tmp_path / "gray.png"), np.zeros((4, 4), np.uint8))
    with pytest.raises(DataError, match="3-channel"):
        read_png(tmp_path / "gray.png")


def test_dataset_directory_round_trip(tmp_path):
    samples = synth_dataset(3, 32, seed=2)
    write_dataset(samples, tmp_path)
    assert sorted(p.name for p in (tmp_path / "sdr").iterdir()) == [s.name + ".png" for s in samples]
    loaded = load_pairs(tmp_path)
    for a, b in zip(samples, loaded):
        assert a.name == b.name
        assert np.array_equal(a.sdr, b.sdr) and np.array_equal(a.hdr, b.hdr)


def test_load_pairs_errors(tmp_path):
    with pytest.raises(DataError, match="missing directory"):
        load_pairs(tmp_path)
    write_dataset(synth_dataset(2, 16), tmp_path)
    (tmp_path / "hdr" / "synth_00001.png").unlink()
    with pytest.raises(DataError, match="synth_00001"):
        load_pairs(tmp_path)
    write_png(tmp_path / "hdr" / "synth_00001.png", np.zeros((3, 16, 16)), 8)
    with pytest.raises(DataError, match="16-bit"):
        load_pairs(tmp_path)


def test_make_batch_shapes_alignment_determinism():
    ds = PairedDataset(synth_dataset(4, 80, seed=1))
    sdr, cond, hdr = make_batch(ds, 3, 48, np.random.default_rng(5))
    assert sdr.shape == hdr.shape == (3, 3, 48, 48)
    assert cond.shape == (3, 3, 20, 20)
    # each crop sits at the same coordinates in its SDR and HDR source
    for k in range(3):
        hits = [(i, y, x) for i, s in enumerate(ds.samples) for y in range(33) for x in range(33)
                if np.array_equal(s.sdr[:, y:y + 48, x:x + 48], sdr[k])]
        assert hits
        i, y, x = hits[0]
        assert np.array_equal(ds.samples[i].hdr[:, y:y + 48, x:x + 48], hdr[k])
        assert np.array_equal(ds.condition(i), cond[k])
    again = make_batch(ds, 3, 48, np.random.default_rng(5))
    assert all(np.array_equal(a, b) for a, b in zip((sdr, cond, hdr), again))


def test_condition_input_from_full_image():
    s = synth_pair(0, 64, 96)
    ds = PairedDataset([s])
    expected = cv2.resize(np.moveaxis(s.sdr, 0, -1), (24, 16), interpolation=cv2.INTER_LINEAR)
    np.testing.assert_array_equal(ds.condition(0), np.moveaxis(expected, -1, 0))
    assert condition_input(s.sdr).shape == (3, 16, 24)


def test_make_batch_pads_small_images_with_warning():
    ds = PairedDataset([synth_pair(0, 40, 40)])
    with pytest.warns(UserWarning, match="smaller than crop"):
        sdr, _, hdr = make_batch(ds, 1, 48, np.random.default_rng(0))
    assert sdr.shape == (1, 3, 48, 48)
    assert np.array_equal(sdr[0, :, 40:, :40], np.repeat(ds.samples[0].sdr[:, -1:, :], 8, axis=1))


def test_make_batch_mixed_sizes_gives_condition_list():
    ds = PairedDataset([synth_pair(0, 64, 64), synth_pair(1, 80, 96)])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        _, cond, _ = make_batch(ds, 6, 32, np.random.default_rng(1))
    if isinstance(cond, list):
        assert {c.shape for c in cond} <= {(3, 16, 16), (3, 20, 24)}
    else:
        assert cond.shape[0] == 6


def test_empty_dataset():
    with pytest.raises(DataError):
        PairedDataset([])
