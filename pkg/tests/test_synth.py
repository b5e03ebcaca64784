import os

import numpy as np
import pytest

from gaitsig.cuboid import build_subsequences
from gaitsig.errors import DataError
from gaitsig.evalcli.synth import SubjectParams, SynthSpec, generate_synth_dataset
from gaitsig.optflow import flow_sequence
from gaitsig.videoio import DatasetLayout, localize_subject


def small_spec(**kw):
    base = dict(n_subjects=5, frames=60, sequences={"N": ["N1", "N2"], "B": ["B1"], "S": ["S1"]}, seed=3)
    base.update(kw)
    return SynthSpec(**base)


def test_counts(tmp_path):
    lay = generate_synth_dataset(small_spec(), tmp_path)
    assert len(lay.entries) == 20
    for e in lay.entries:
        seq = lay.read(e)
        assert len(seq) == 60 and seq.frames.shape[1:] == (60, 80)
    again = DatasetLayout.load(tmp_path)
    assert [e.path for e in again.entries] == [e.path for e in lay.entries]


def test_manifest_ground_truth(tmp_path):
    lay = generate_synth_dataset(small_spec(female_fraction=0.4), tmp_path)
    genders = [lay.subjects[s]["gender"] for s in sorted(lay.subjects)]
    assert genders.count("F") == 2
    e = lay.entries[0]
    assert e.meta["direction"] in (1, -1) and len(e.meta["trajectory"]) == 60


def test_same_seed_bit_identical(tmp_path):
    a = generate_synth_dataset(small_spec(n_subjects=2), tmp_path / "a")
    b = generate_synth_dataset(small_spec(n_subjects=2), tmp_path / "b")
    for ea, eb in zip(a.entries, b.entries):
        assert open(a.resolve(ea), "rb").read() == open(b.resolve(eb), "rb").read()
    assert (tmp_path / "a" / "layout.json").read_bytes().replace(b"/a", b"") == \
        (tmp_path / "b" / "layout.json").read_bytes().replace(b"/b", b"")


def test_png_frame_directories(tmp_path):
    lay = generate_synth_dataset(small_spec(n_subjects=1, frames=8, sequences={"N": ["N1"]}), tmp_path, fmt="png")
    seq = lay.read(lay.entries[0])
    assert len(seq) == 8
    assert os.path.exists(os.path.join(tmp_path, "s000", "N1", "frame_000001.png"))


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_unwritable_path(tmp_path):
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(0o500)
    with pytest.raises(DataError):
        generate_synth_dataset(small_spec(n_subjects=1), ro / "x")


def test_unwritable_path_under_a_file(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(DataError):
        generate_synth_dataset(small_spec(n_subjects=1), blocker / "sub")


def test_duplicate_subjects_rejected():
    p = SubjectParams(1.0, 0.0, 3.0, 0.8, 20.0)
    with pytest.raises(DataError):
        SynthSpec(n_subjects=2, subjects=[p, p]).validate()


def test_out_of_bounds_parameters_rejected():
    with pytest.raises(DataError):
        SynthSpec(n_subjects=1, subjects=[SubjectParams(20.0, 0.0, 3.0, 0.8, 20.0)]).validate()


def test_walker_is_tracked(tmp_path):
    lay = generate_synth_dataset(small_spec(n_subjects=2, sequences={"N": ["N1", "N2"]}), tmp_path)
    for e in lay.entries:
        track = localize_subject(lay.read(e))
        truth = np.array(e.meta["trajectory"])
        assert track.valid.mean() > 0.9
        assert np.nanmean(np.abs(track.x_center - truth)) < 2.0


def _dominant_frequency(cuboids, fps):
    """Frequency of the largest non-DC peak of the summed per-pixel power spectrum of u."""
    power = 0.0
    for c in cuboids:
        u = c.data[:, :, 0::2]
        u = u - u.mean(axis=2, keepdims=True)
        power = power + (np.abs(np.fft.rfft(u, axis=2)) ** 2).sum(axis=(0, 1))
    freqs = np.fft.rfftfreq(cuboids[0].data.shape[2] // 2, d=1.0 / fps)
    return freqs[1 + np.argmax(power[1:])]


def test_limb_frequency_visible_in_flow_spectrum(tmp_path):
    # FFT oracle: the two walkers differ only in limb frequency (0.8 vs 1.6 Hz)
    slow = SubjectParams(0.8, 0.0, 5.0, 0.3, 24.0)
    fast = SubjectParams(1.6, 0.0, 5.0, 0.3, 24.0, gender="F")
    spec = SynthSpec(n_subjects=2, frames=110, subjects=[slow, fast], sequences={"N": ["N1"]}, noise=0.0, seed=1)
    lay = generate_synth_dataset(spec, tmp_path)
    peaks = []
    for e in lay.entries:
        seq = lay.read(e)
        cuboids = build_subsequences(flow_sequence(seq), localize_subject(seq), L=100, overlap=0.0)
        peaks.append(_dominant_frequency(cuboids, spec.fps))
    assert peaks[0] != peaks[1]
    assert peaks[1] > peaks[0]
