"""On-disk formats: images, disparities, PFM, sparse labels, sequences."""

import os

import numpy as np
import pytest

from stereoadapt import checkpoint
from stereoadapt.errors import (ConfigError, FileFormatError, SequenceError)
from stereoadapt.fileio import (DISP_PNG_SCALE, SequenceReader, StereoFrame,
                                chain_sequences, config_get, read_config,
                                read_disparity_png, read_image_png, read_pfm,
                                read_sparse_labels, write_config,
                                write_disparity_png, write_image_png,
                                write_pfm, write_sequence,
                                write_sparse_labels)

RNG = np.random.default_rng(55)


def frames_for(n, h=16, w=20, with_gt=True, domain=""):
    out = []
    for i in range(n):
        gt = valid = None
        if with_gt:
            gt = RNG.random((h, w)).astype(np.float32) * 20 + 1
            valid = RNG.random((h, w)) > 0.3
        out.append(StereoFrame(left=RNG.random((1, h, w)).astype(np.float32),
                               right=RNG.random((1, h, w)).astype(np.float32),
                               gt=gt, valid=valid, index=i, domain=domain))
    return out


def test_image_png_round_trip(tmp_path):
    img = RNG.random((12, 15)).astype(np.float32)
    p = str(tmp_path / "img.png")
    write_image_png(p, img)
    back = read_image_png(p)
    assert back.shape == (1, 12, 15)
    np.testing.assert_allclose(back[0], img, atol=1.0 / 65535.0)


def test_image_png_rejects_multichannel(tmp_path):
    with pytest.raises(FileFormatError):
        write_image_png(str(tmp_path / "x.png"), np.zeros((3, 4, 4)))


def test_disparity_png_round_trip_and_validity(tmp_path):
    disp = np.array([[0.0, 1.25, 63.996], [12.5, 200.0, 0.5]])
    valid = np.array([[False, True, True], [True, True, True]])
    p = str(tmp_path / "disp.png")
    write_disparity_png(p, disp, valid)
    back, back_valid = read_disparity_png(p)
    np.testing.assert_array_equal(back_valid, valid)
    np.testing.assert_allclose(back[valid], disp[valid],
                               atol=0.5 / DISP_PNG_SCALE)


def test_disparity_png_zero_disparity_cannot_round_trip_as_valid(tmp_path):
    # the encoding reserves 0 for invalid, so a valid zero clamps to 1/256
    p = str(tmp_path / "disp.png")
    write_disparity_png(p, np.array([[0.0]]), np.array([[True]]))
    back, valid = read_disparity_png(p)
    assert valid[0, 0]
    assert back[0, 0] == pytest.approx(1.0 / DISP_PNG_SCALE)


def test_disparity_png_default_validity_is_positive_finite(tmp_path):
    disp = np.array([[0.0, 2.0], [np.nan, 5.0]])
    p = str(tmp_path / "d.png")
    write_disparity_png(p, disp)
    _, valid = read_disparity_png(p)
    np.testing.assert_array_equal(valid, [[False, True], [False, True]])


def test_disparity_png_rejects_8bit(tmp_path):
    from PIL import Image
    p = str(tmp_path / "gray8.png")
    Image.fromarray(np.zeros((4, 4), dtype=np.uint8), mode="L").save(p)
    with pytest.raises(FileFormatError):
        read_disparity_png(p)


def test_pfm_round_trip_gray_and_color(tmp_path):
    gray = RNG.standard_normal((9, 7)).astype(np.float32)
    color = RNG.standard_normal((5, 6, 3)).astype(np.float32)
    pg, pc = str(tmp_path / "g.pfm"), str(tmp_path / "c.pfm")
    write_pfm(pg, gray)
    write_pfm(pc, color)
    back_g, scale_g = read_pfm(pg)
    back_c, _ = read_pfm(pc)
    np.testing.assert_array_equal(back_g, gray)
    np.testing.assert_array_equal(back_c, color)
    assert scale_g == 1.0


def test_pfm_rejects_garbage(tmp_path):
    p = str(tmp_path / "bad.pfm")
    with open(p, "wb") as f:
        f.write(b"P6\n1 1\n-1.0\n\x00\x00\x00\x00")
    with pytest.raises(FileFormatError):
        read_pfm(p)
    with pytest.raises(FileFormatError):
        write_pfm(str(tmp_path / "s.pfm"), np.zeros((2, 2)), scale=0.0)
    with pytest.raises(FileFormatError):
        write_pfm(str(tmp_path / "s.pfm"), np.zeros((2, 2, 2)))


def test_pfm_truncated_payload(tmp_path):
    p = str(tmp_path / "t.pfm")
    write_pfm(p, np.zeros((4, 4), dtype=np.float32))
    blob = open(p, "rb").read()
    with open(p, "wb") as f:
        f.write(blob[:-8])
    with pytest.raises(FileFormatError):
        read_pfm(p)


def test_sparse_labels_round_trip(tmp_path):
    disp = RNG.random((20, 30)).astype(np.float32) * 50
    mask = RNG.random((20, 30)) > 0.8
    p = str(tmp_path / "labels.bin")
    write_sparse_labels(p, disp, mask)
    back_disp, back_mask = read_sparse_labels(p, expected_shape=(20, 30))
    np.testing.assert_array_equal(back_mask, mask)
    np.testing.assert_allclose(back_disp[mask], disp[mask], rtol=1e-6)
    assert (back_disp[~mask] == 0).all()


def test_sparse_labels_empty_mask(tmp_path):
    p = str(tmp_path / "empty.bin")
    write_sparse_labels(p, np.zeros((4, 4), dtype=np.float32),
                        np.zeros((4, 4), dtype=bool))
    disp, mask = read_sparse_labels(p)
    assert not mask.any()
    assert disp.shape == (4, 4)


def test_sparse_labels_shape_contract(tmp_path):
    p = str(tmp_path / "l.bin")
    write_sparse_labels(p, np.ones((4, 4), dtype=np.float32),
                        np.ones((4, 4), dtype=bool))
    with pytest.raises(FileFormatError):
        read_sparse_labels(p, expected_shape=(5, 5))
    with pytest.raises(FileFormatError):
        write_sparse_labels(p, np.ones((4, 5), dtype=np.float32),
                            np.ones((5, 4), dtype=bool))


def test_sparse_labels_truncation_detected(tmp_path):
    p = str(tmp_path / "l.bin")
    write_sparse_labels(p, np.ones((4, 4), dtype=np.float32),
                        np.ones((4, 4), dtype=bool))
    blob = open(p, "rb").read()
    with open(p, "wb") as f:
        f.write(blob[:-4])
    with pytest.raises(FileFormatError):
        read_sparse_labels(p)


def test_config_round_trip_and_parsing(tmp_path):
    p = str(tmp_path / "run.cfg")
    write_config(p, {"alpha": 0.85, "frames": 10, "name": "seq a"})
    cfg = read_config(p)
    assert config_get(cfg, "alpha", float) == 0.85
    assert config_get(cfg, "frames", int) == 10
    assert config_get(cfg, "name", str) == "seq a"
    assert config_get(cfg, "missing", int, default=7) == 7
    with pytest.raises(ConfigError):
        config_get(cfg, "missing", int)
    with pytest.raises(ConfigError):
        config_get(cfg, "name", float)


def test_config_rejects_malformed_lines(tmp_path):
    p = str(tmp_path / "bad.cfg")
    with open(p, "w") as f:
        f.write("# comment\nkey=1\nnoequals\n")
    with pytest.raises(ConfigError):
        read_config(p)
    with open(p, "w") as f:
        f.write("k=1\nk=2\n")
    with pytest.raises(ConfigError):
        read_config(p)


def test_config_bool_parsing(tmp_path):
    p = str(tmp_path / "b.cfg")
    write_config(p, {"on": True, "off": False})
    cfg = read_config(p)
    assert config_get(cfg, "on", bool) is True
    assert config_get(cfg, "off", bool) is False


def test_sequence_round_trip(tmp_path):
    d = str(tmp_path / "seq")
    frames = frames_for(3, domain="X")
    meta = write_sequence(d, frames)
    assert meta["frames"] == 3
    reader = SequenceReader(d)
    assert len(reader) == 3
    got = list(reader)
    assert [f.index for f in got] == [0, 1, 2]
    for orig, back in zip(frames, got):
        np.testing.assert_allclose(back.left, orig.left, atol=1.0 / 65535.0)
        assert back.domain == "X"
        assert back.gt is not None and back.valid is not None
        # nonocc mask survives, intersected with encodable disparities
        assert back.valid.sum() <= orig.valid.sum()


def test_sequence_without_gt(tmp_path):
    d = str(tmp_path / "seq")
    write_sequence(d, frames_for(2, with_gt=False))
    for frame in SequenceReader(d):
        assert frame.gt is None and frame.valid is None


def test_sequence_writer_error_cases(tmp_path):
    with pytest.raises(SequenceError):
        write_sequence(str(tmp_path / "empty"), [])
    bad = frames_for(1) + frames_for(1, h=8, w=8)
    with pytest.raises(SequenceError):
        write_sequence(str(tmp_path / "mixed"), bad)


def test_sequence_reader_error_cases(tmp_path):
    with pytest.raises(SequenceError):
        SequenceReader(str(tmp_path / "nothere"))
    d = str(tmp_path / "noframes")
    os.makedirs(os.path.join(d, "left"))
    with pytest.raises(SequenceError):
        SequenceReader(d)
    os.rmdir(os.path.join(d, "left"))
    with pytest.raises(SequenceError):
        SequenceReader(d)


def test_chain_sequences_renumbers_frames(tmp_path):
    d1, d2 = str(tmp_path / "a"), str(tmp_path / "b")
    write_sequence(d1, frames_for(2, domain="A"))
    write_sequence(d2, frames_for(3, domain="B"))
    stream = list(chain_sequences([d1, d2]))
    assert [f.index for f in stream] == [0, 1, 2, 3, 4]
    assert [f.domain for f in stream] == ["A", "A", "B", "B", "B"]


def test_chain_sequences_rejects_resolution_switch(tmp_path):
    d1, d2 = str(tmp_path / "a"), str(tmp_path / "b")
    write_sequence(d1, frames_for(1))
    write_sequence(d2, frames_for(1, h=8, w=8))
    with pytest.raises(SequenceError):
        list(chain_sequences([d1, d2]))


def test_checkpoint_rejects_corruption(tmp_path):
    p = str(tmp_path / "c.ckpt")
    checkpoint.save_arrays(p, {"a": np.arange(6, dtype=np.float32)})
    back = checkpoint.load_arrays(p)
    np.testing.assert_array_equal(back["a"], np.arange(6, dtype=np.float32))

    blob = open(p, "rb").read()
    with open(p, "wb") as f:
        f.write(b"WRONG" + blob[5:])
    with pytest.raises(FileFormatError):
        checkpoint.load_arrays(p)
    with open(p, "wb") as f:
        f.write(blob[:-6])
    with pytest.raises(FileFormatError):
        checkpoint.load_arrays(p)


def test_checkpoint_rejects_bad_names(tmp_path):
    with pytest.raises(FileFormatError):
        checkpoint.save_arrays(str(tmp_path / "x.ckpt"),
                               {"bad name": np.zeros(1, dtype=np.float32)})
