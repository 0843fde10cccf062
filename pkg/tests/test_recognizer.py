import glob
import os
import sys
import tempfile

import numpy as np
import pytest

import audio_core
import config
import recognizer
from audio_core import AudioClip
from recognizer import RecognizerSpec

SLOT = 1120


def slots(*levels, size=SLOT):
    return AudioClip(np.repeat(levels, size), 16000, "slots")


def local(vocab=("aa", "iy", "sh")):
    return RecognizerSpec(recognizer.SYNTHETIC_LOCAL, vocab=vocab)


def contextual(vocab=config.VOCAB[:5]):
    return RecognizerSpec(recognizer.SYNTHETIC_CONTEXTUAL, vocab=vocab)


def script(tmp_path, body):
    path = tmp_path / "asr.py"
    path.write_text("import sys\n" + body)
    return RecognizerSpec(recognizer.SUBPROCESS, command=(sys.executable, str(path)), timeout_s=20)


def test_local_decode():
    assert recognizer.transcribe(local(), slots(1000, 2000, 3000)).phonemes == ("aa", "iy", "sh")
    assert recognizer.transcribe(local(), slots(1000, 0, 3000)).phonemes == ("aa", "sh")
    assert recognizer.transcribe(local(("aa", "iy")), slots(1000, 0, 2000)).phonemes == ("aa", "iy")


def test_local_silence_and_clamp():
    assert recognizer.transcribe(local(), slots(0, 0)).phonemes == ()
    assert recognizer.transcribe(local(), slots(32767)).phonemes == ("sh",)
    assert recognizer.raw_index(local(), 999999) == 2
    # Quieter than one step but above the floor still lands on index 0
    assert recognizer.raw_index(local(), 60) == 0
    assert recognizer.raw_index(local(), 40) is None


def test_local_negative_amplitudes_count():
    assert recognizer.transcribe(local(), slots(-2000)).phonemes == ("iy",)


def test_contextual_decode():
    vocab = config.VOCAB[:5]
    assert recognizer.transcribe(contextual(), slots(2000, 3000)).phonemes == (vocab[1], vocab[3])
    assert recognizer.transcribe(contextual(), slots(3000)).phonemes == (vocab[2],)
    assert recognizer.transcribe(contextual(), slots(0, 3000)).phonemes == (vocab[2],)


def test_synthetic_determinism():
    clip = slots(1000, 3000, 2000, 5000)
    spec = contextual()
    first = recognizer.transcribe(spec, clip)
    assert all(recognizer.transcribe(spec, clip) == first for _ in range(1000))


def _single_masks(levels):
    clip = slots(*levels)
    seg = audio_core.time_segmentation(clip, 70)
    for i in range(len(levels)):
        yield i, clip, audio_core.mask_segments(clip, seg, {i})


@pytest.mark.parametrize("n", range(1, 7))
def test_locality_oracle(n):
    rng = np.random.default_rng(n)
    for _ in range(20):
        levels = (rng.integers(0, 3, n) + 1) * 1000
        for i, clip, masked in _single_masks(levels):
            full = list(recognizer.transcribe(local(), clip).phonemes)
            assert list(recognizer.transcribe(local(), masked).phonemes) == full[:i] + full[i + 1 :]


@pytest.mark.parametrize("n", range(1, 7))
def test_context_oracle(n):
    rng = np.random.default_rng(100 + n)
    for _ in range(20):
        levels = (rng.integers(0, 5, n) + 1) * 1000
        for i, clip, masked in _single_masks(levels):
            full = recognizer.transcribe(contextual(), clip).phonemes
            out = recognizer.transcribe(contextual(), masked).phonemes
            assert len(out) == n - 1
            # outputs of slots other than i and i + 1 are untouched
            kept = [j for j in range(n) if j != i]
            for pos, j in enumerate(kept):
                if j != i + 1:
                    assert out[pos] == full[j]


def test_spec_checks():
    with pytest.raises(recognizer.RecognizerError):
        recognizer.transcribe(RecognizerSpec(recognizer.SYNTHETIC_LOCAL), slots(1000))
    with pytest.raises(recognizer.RecognizerError):
        recognizer.transcribe(RecognizerSpec(recognizer.SUBPROCESS), slots(1000))


def test_spec_json():
    spec = RecognizerSpec(recognizer.SUBPROCESS, command=("asr", "--fast"), timeout_s=5)
    assert RecognizerSpec.from_json(spec.to_json()) == spec


def test_transcription_tokens():
    with pytest.raises(ValueError):
        recognizer.Transcription(["d aa"])
    with pytest.raises(ValueError):
        recognizer.Transcription([""])
    assert str(recognizer.Transcription(["d", "aa"])) == "d aa"


def _leftovers():
    return set(glob.glob(os.path.join(tempfile.gettempdir(), "phonelime-*.wav")))


def test_subprocess_tokens(tmp_path):
    before = _leftovers()
    spec = script(tmp_path, "print('d aa r\\n k')\n")
    assert recognizer.transcribe(spec, slots(1000)).phonemes == ("d", "aa", "r", "k")
    assert _leftovers() <= before


def test_subprocess_gets_wav_path(tmp_path):
    spec = script(
        tmp_path,
        "import wave\n"
        "with wave.open(sys.argv[-1]) as wf:\n"
        "    print('x' * wf.getnframes())\n",
    )
    assert recognizer.transcribe(spec, slots(1000, size=3)).phonemes == ("xxx",)


def test_subprocess_empty_output(tmp_path):
    assert recognizer.transcribe(script(tmp_path, "pass\n"), slots(1000)).phonemes == ()


def test_subprocess_failure(tmp_path):
    before = _leftovers()
    spec = script(tmp_path, "sys.stderr.write('model not found')\nsys.exit(1)\n")
    with pytest.raises(recognizer.RecognizerError) as info:
        recognizer.transcribe(spec, slots(1000))
    assert info.value.returncode == 1
    assert "model not found" in info.value.stderr
    assert _leftovers() <= before


def test_subprocess_timeout(tmp_path):
    spec = script(tmp_path, "import time\ntime.sleep(30)\n")._replace(timeout_s=0.5)
    with pytest.raises(recognizer.RecognizerTimeout):
        recognizer.transcribe(spec, slots(1000))


def test_subprocess_missing_executable(tmp_path):
    spec = RecognizerSpec(recognizer.SUBPROCESS, command=(str(tmp_path / "no-such-asr"),))
    with pytest.raises(recognizer.RecognizerError):
        recognizer.transcribe(spec, slots(1000))


def test_oracle_recognizer_script(tmp_path):
    tool = os.path.join(os.path.dirname(__file__), "..", "tools", "oracle_recognizer.py")
    spec = RecognizerSpec(
        recognizer.SUBPROCESS, command=(sys.executable, tool, "--vocab", "aa,iy,sh"), timeout_s=30
    )
    clip = slots(1000, 0, 3000, 2000)
    assert recognizer.transcribe(spec, clip) == recognizer.transcribe(local(), clip)
