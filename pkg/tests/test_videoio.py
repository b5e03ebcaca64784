import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from gaitsig.errors import DataError
from gaitsig.evalcli.synth import SynthSpec, generate_synth_dataset
from gaitsig.videoio import (
    DatasetLayout,
    FrameSequence,
    SequenceEntry,
    load_sequence,
    localize_subject,
    resize_sequence,
    write_frame_dir,
    write_gfsq,
)


def bar_sequence(T=30, W=80, H=60, x0=5.0, speed=2.0, width=6):
    frames = np.zeros((T, H, W), dtype=np.float32)
    for t in range(T):
        x = int(round(x0 + speed * t))
        frames[t, :, x:x + width] = 1.0
    return FrameSequence(frames)


# -- FrameSequence ---------------------------------------------------------------


def test_frame_sequence_validation():
    with pytest.raises(DataError):
        FrameSequence(np.zeros((0, 4, 4)))
    with pytest.raises(DataError):
        FrameSequence(np.full((2, 4, 4), 1.5))
    with pytest.raises(DataError):
        FrameSequence(np.full((2, 4, 4), np.nan))


# -- loading ------------------------------------------------------------------------


def test_frame_directory_count(tmp_path):
    rng = np.random.default_rng(0)
    write_frame_dir(tmp_path / "seq", rng.random((100, 12, 16)))
    seq = load_sequence(tmp_path / "seq")
    assert len(seq) == 100 and seq.frames.shape[1:] == (12, 16)


def test_frame_directory_order_and_luma(tmp_path):
    d = tmp_path / "seq"
    d.mkdir()
    # written out of order, RGB: ordering by index and luminance conversion
    for i, rgb in [(2, (0, 0, 255)), (1, (255, 0, 0))]:
        Image.new("RGB", (4, 3), rgb).save(d / ("frame_%06d.png" % i))
    seq = load_sequence(d)
    assert seq.frames[0, 0, 0] == pytest.approx(0.299, abs=1e-6)
    assert seq.frames[1, 0, 0] == pytest.approx(0.114, abs=1e-6)


def test_corrupt_frame_named(tmp_path):
    write_frame_dir(tmp_path / "seq", np.zeros((3, 4, 4)))
    (tmp_path / "seq" / "frame_000002.png").write_bytes(b"not a png")
    with pytest.raises(DataError, match="frame_000002"):
        load_sequence(tmp_path / "seq")


def test_inconsistent_frame_size(tmp_path):
    write_frame_dir(tmp_path / "seq", np.zeros((2, 4, 4)))
    Image.new("L", (5, 4)).save(tmp_path / "seq" / "frame_000003.png")
    with pytest.raises(DataError, match="size"):
        load_sequence(tmp_path / "seq")


def test_missing_path(tmp_path):
    with pytest.raises(DataError):
        load_sequence(tmp_path / "nope")


@pytest.mark.parametrize("dtype", ["f4", "u1"])
def test_gfsq_roundtrip(tmp_path, dtype):
    frames = np.random.default_rng(1).random((5, 6, 7)).astype(np.float32)
    write_gfsq(tmp_path / "a.gfsq", frames, dtype=dtype)
    raw = (tmp_path / "a.gfsq").read_bytes()
    assert raw[:4] == b"GFSQ" and np.frombuffer(raw[4:16], "<u4").tolist() == [7, 6, 5]
    back = load_sequence(tmp_path / "a.gfsq").frames
    assert np.allclose(back, frames, atol=0 if dtype == "f4" else 0.5 / 255 + 1e-7)


def test_gfsq_bad_payload(tmp_path):
    write_gfsq(tmp_path / "a.gfsq", np.zeros((2, 3, 3)))
    (tmp_path / "a.gfsq").write_bytes((tmp_path / "a.gfsq").read_bytes()[:-3])
    with pytest.raises(DataError):
        load_sequence(tmp_path / "a.gfsq")


def test_synth_dump_dimensions(tmp_path):
    spec = SynthSpec(n_subjects=1, frames=60, width=64, height=48, sequences={"N": ["N1"]})
    lay = generate_synth_dataset(spec, tmp_path, fmt="png")
    seq = load_sequence(lay.entries[0].path, layout=lay)
    assert len(seq) == 60 and (seq.width, seq.height) == (64, 48)


def test_layout_roundtrip_and_select(tmp_path):
    entries = [SequenceEntry("a", "N", "N1", "a/N1.gfsq", {"direction": 1}),
               SequenceEntry("b", "B", "B1", "b/B1.gfsq")]
    DatasetLayout(tmp_path, entries, {"a": {"gender": "F"}}).save(tmp_path / "layout.json")
    lay = DatasetLayout.load(tmp_path)
    assert [e.sequence for e in lay.select(scenarios=["B"])] == ["B1"]
    assert lay.entries[0].meta == {"direction": 1}
    assert lay.resolve(lay.entries[0]) == os.path.join(str(tmp_path), "a/N1.gfsq")


def test_layout_missing(tmp_path):
    with pytest.raises(DataError):
        DatasetLayout.load(tmp_path)


# -- resizing -------------------------------------------------------------------------


def test_resize_640x480():
    seq = FrameSequence(np.random.default_rng(0).random((2, 480, 640)).astype(np.float32))
    out = resize_sequence(seq, 80, 60)
    assert out.frames.shape == (2, 60, 80)


def test_resize_identity_bit_exact():
    seq = FrameSequence(np.random.default_rng(0).random((3, 60, 80)).astype(np.float32))
    assert np.array_equal(resize_sequence(seq).frames, seq.frames)


@settings(max_examples=25, deadline=None)
@given(st.integers(8, 200), st.integers(8, 200), st.floats(0.0, 1.0))
def test_resize_preserves_constants(w, h, value):
    seq = FrameSequence(np.full((2, h, w), value, dtype=np.float32))
    out = resize_sequence(seq)
    assert out.frames.shape == (2, 60, 80)
    assert np.allclose(out.frames, np.float32(value), atol=1e-6)


def test_resize_idempotent_and_count_preserving():
    seq = FrameSequence(np.random.default_rng(2).random((4, 37, 91)).astype(np.float32))
    once = resize_sequence(seq)
    assert len(once) == 4
    assert np.array_equal(resize_sequence(once).frames, once.frames)


def test_resize_center_crops_wide_input():
    # left/right thirds dark, centre bright: cover-scaling keeps only the centre
    f = np.zeros((1, 60, 240), dtype=np.float32)
    f[:, :, 80:160] = 1.0
    out = resize_sequence(FrameSequence(f))
    assert np.allclose(out.frames[0, :, 1:-1], 1.0)


def test_resize_rejects_bad_size():
    with pytest.raises(ValueError):
        resize_sequence(FrameSequence(np.zeros((1, 4, 4))), 0, 10)


# -- localization ------------------------------------------------------------------------


def test_static_scene_invalid():
    seq = FrameSequence(np.full((20, 60, 80), 0.3, dtype=np.float32))
    tr = localize_subject(seq)
    assert not tr.valid.any()
    assert np.all(np.isnan(tr.x_center))


def test_translating_bar_speed():
    tr = localize_subject(bar_sequence())
    assert tr.valid.all()
    steps = np.diff(tr.x_center)
    assert np.all(np.abs(steps - 2.0) <= 0.5)


def test_localization_mirror_equivariance():
    seq = bar_sequence(speed=1.5)
    a = localize_subject(seq)
    b = localize_subject(seq.mirrored())
    assert np.array_equal(a.valid, b.valid)
    assert np.allclose(b.x_center[b.valid], seq.width - 1 - a.x_center[a.valid], atol=0.5)


def test_localization_bounds_and_length():
    seq = bar_sequence(T=12)
    tr = localize_subject(seq)
    assert len(tr) == 12
    assert np.all((tr.x_center[tr.valid] >= 0) & (tr.x_center[tr.valid] < seq.width))


def test_localization_needs_five_frames():
    with pytest.raises(DataError):
        localize_subject(FrameSequence(np.zeros((4, 10, 10))))
