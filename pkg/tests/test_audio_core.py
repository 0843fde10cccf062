import wave

import numpy as np
import pytest

import audio_core
from audio_core import AudioClip, Segment, Segmentation


def two_halves():
    return Segmentation([Segment(0, 0, 4), Segment(1, 4, 8)], audio_core.TIME, 16000)


def test_wav_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    clip = AudioClip(rng.integers(-32768, 32768, 16000), 16000, "noise")
    audio_core.write_wav(clip, tmp_path / "noise.wav")
    back = audio_core.read_wav(tmp_path / "noise.wav")
    assert back.sample_rate == 16000
    assert back.id == "noise"
    assert np.array_equal(back.samples, clip.samples)


def test_minimal_wav_size(tmp_path):
    audio_core.write_wav(AudioClip([0], 16000), tmp_path / "one.wav")
    assert (tmp_path / "one.wav").stat().st_size == 44 + 2


def test_read_wav_header_fields(tmp_path):
    audio_core.write_wav(AudioClip(np.zeros(3500), 16000), tmp_path / "a.wav")
    clip = audio_core.read_wav(tmp_path / "a.wav")
    assert clip.length == 3500 and clip.sample_rate == 16000


def test_stereo_rejected(tmp_path):
    path = tmp_path / "stereo.wav"
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(16000)
        wf.writeframes(b"\0" * 16)
    with pytest.raises(audio_core.AudioFormatError, match="channels=2 unsupported"):
        audio_core.read_wav(path)


def test_8bit_rejected(tmp_path):
    path = tmp_path / "byte.wav"
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(1)
        wf.setframerate(8000)
        wf.writeframes(b"\x80" * 8)
    with pytest.raises(audio_core.AudioFormatError, match="bits=8 unsupported"):
        audio_core.read_wav(path)


def test_not_a_wav(tmp_path):
    path = tmp_path / "junk.wav"
    path.write_bytes(b"definitely not RIFF")
    with pytest.raises(audio_core.AudioFormatError):
        audio_core.read_wav(path)


def test_missing_wav(tmp_path):
    with pytest.raises(FileNotFoundError):
        audio_core.read_wav(tmp_path / "nope.wav")


def test_unwritable_directory(tmp_path):
    with pytest.raises(OSError):
        audio_core.write_wav(AudioClip([1]), tmp_path / "missing" / "x.wav")


def test_mask_segments():
    clip = AudioClip([1, 2, 3, 4, 5, 6, 7, 8])
    seg = two_halves()
    assert list(audio_core.mask_segments(clip, seg, {0}).samples) == [0, 0, 0, 0, 5, 6, 7, 8]
    assert audio_core.mask_segments(clip, seg, set()) == clip
    assert not audio_core.mask_segments(clip, seg, {0, 1}).samples.any()
    # the input is never modified
    assert list(clip.samples) == [1, 2, 3, 4, 5, 6, 7, 8]


def test_mask_leaves_gaps_alone():
    clip = AudioClip([9] * 10)
    seg = Segmentation([Segment(0, 2, 4, "sh"), Segment(1, 6, 8, "iy")], audio_core.EXPERT)
    out = audio_core.mask_segments(clip, seg, {0, 1})
    assert list(out.samples) == [9, 9, 0, 0, 9, 9, 0, 0, 9, 9]


def test_mask_idempotent_and_monotone():
    rng = np.random.default_rng(0)
    clip = AudioClip(rng.integers(1, 100, 30))
    seg = audio_core.time_segmentation(AudioClip(np.ones(30), 1000), 4)
    once = audio_core.mask_segments(clip, seg, {1, 3})
    assert audio_core.mask_segments(once, seg, {1, 3}) == once
    zeros = lambda m: set(np.flatnonzero(audio_core.mask_segments(clip, seg, m).samples == 0))
    assert zeros({1, 3, 5}) == zeros({1, 3}) | zeros({5})


def test_mask_index_out_of_range():
    with pytest.raises(audio_core.SegmentationError):
        audio_core.mask_segments(AudioClip(range(8)), two_halves(), {2})


def test_parse_phn(tmp_path):
    path = tmp_path / "sa1.phn"
    path.write_bytes(b"0 3050 h#\r\n3050 4559 sh\r\n")
    seg = audio_core.parse_phn(path)
    assert seg.kind == audio_core.EXPERT
    assert [s.label for s in seg.segments] == ["h#", "sh"]
    assert audio_core.format_phn(seg) == "0 3050 h#\n3050 4559 sh\n"


@pytest.mark.parametrize(
    "text",
    ["3050 3050 sh\n", "100 200 aa\n0 50 iy\n", "0 100 aa\n50 150 iy\n"],
)
def test_phn_structural_errors(tmp_path, text):
    path = tmp_path / "bad.phn"
    path.write_text(text)
    with pytest.raises(audio_core.SegmentationError):
        audio_core.parse_phn(path)


def test_phn_malformed_line_number(tmp_path):
    path = tmp_path / "bad.phn"
    path.write_text("0 100 aa\n100 x iy\n")
    with pytest.raises(audio_core.SegmentationError, match=":2:"):
        audio_core.parse_phn(path)


@pytest.mark.parametrize(
    "n, expected",
    [(3360, [1120] * 3), (3500, [1120, 1120, 1120, 140]), (1120, [1120])],
)
def test_time_segmentation(n, expected):
    seg = audio_core.time_segmentation(AudioClip(np.ones(n)), 70)
    assert seg.kind == audio_core.TIME
    assert [s.length for s in seg.segments] == expected
    assert seg.segments[0].start == 0 and seg.end == n
    assert all(s.label is None for s in seg.segments)


def test_time_segmentation_min_samples_folds_remainder():
    seg = audio_core.time_segmentation(AudioClip(np.ones(3500)), 70, min_samples=200)
    assert [s.length for s in seg.segments] == [1120, 1120, 1260]
    assert [s.start for s in seg.segments] == [0, 1120, 2240]
    assert seg.end == 3500


def test_time_segmentation_two_segments_fold():
    seg = audio_core.time_segmentation(AudioClip(np.ones(1130)), 70, min_samples=20)
    assert [(s.start, s.end) for s in seg.segments] == [(0, 1130)]


def test_time_segmentation_too_short():
    with pytest.raises(ValueError):
        audio_core.time_segmentation(AudioClip(np.ones(10), 16000), 0.01)


def test_overlap_samples():
    a = Segment(0, 0, 1120)
    assert audio_core.overlap_samples(a, Segment(1, 1000, 2000)) == 120
    assert audio_core.overlap_samples(a, Segment(1, 1120, 2240)) == 0
    assert audio_core.overlap_samples(a, a) == 1120
