###############################################################################
# The black box: a transcription contract, the subprocess adapter and two
# deterministic synthetic recognizers used as validity oracles
###############################################################################
import contextlib
import logging
import math
import os
import subprocess
import tempfile
import threading
from collections import namedtuple

import numpy as np

import audio_core
import config

logger = logging.getLogger(__name__)

SUBPROCESS = "subprocess"
SYNTHETIC_LOCAL = "synthetic_local"
SYNTHETIC_CONTEXTUAL = "synthetic_contextual"
KINDS = (SUBPROCESS, SYNTHETIC_LOCAL, SYNTHETIC_CONTEXTUAL)

# One phoneme step of the synthetic recognizers, in PCM units
LEVEL_STEP = 1000


class RecognizerError(RuntimeError):
    def __init__(self, message, returncode=None, stderr=""):
        super().__init__(message)
        self.returncode = returncode
        self.stderr = stderr


class RecognizerTimeout(RecognizerError):
    pass


class Transcription(namedtuple("Transcription", "phonemes")):
    """An ordered phoneme sequence, f(x)"""

    def __new__(cls, phonemes=()):
        phonemes = tuple(phonemes)
        for p in phonemes:
            if not isinstance(p, str) or not p or len(p.split()) != 1 or p != p.strip():
                raise ValueError(f"bad phoneme token {p!r}")
        return super().__new__(cls, phonemes)

    def __str__(self):
        return " ".join(self.phonemes)


class RecognizerSpec(
    namedtuple(
        "RecognizerSpec",
        "kind command slot_ms vocab silence_threshold timeout_s max_procs",
        defaults=((), config.SLOT_MS, (), config.SILENCE_THRESHOLD, config.TIMEOUT_S, None),
    )
):
    """How to reach the recognizer
    kind -- subprocess, synthetic_local or synthetic_contextual
    command -- executable and fixed arguments (subprocess)
    slot_ms, vocab, silence_threshold -- synthetic decoding parameters
    timeout_s -- per-call wall clock limit (subprocess)
    max_procs -- concurrent process cap, None for the CPU count
    """

    def check(self):
        if self.kind not in KINDS:
            raise RecognizerError(f"unknown recognizer kind {self.kind!r}")
        if self.kind == SUBPROCESS and not self.command:
            raise RecognizerError("subprocess recognizer needs a command")
        if self.kind != SUBPROCESS and not self.vocab:
            raise RecognizerError(f"{self.kind} recognizer needs a non-empty vocab")
        return self

    def to_json(self):
        out = self._asdict()
        out["command"] = list(self.command)
        out["vocab"] = list(self.vocab)
        return out

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj)
        obj["command"] = tuple(obj.get("command") or ())
        obj["vocab"] = tuple(obj.get("vocab") or ())
        return cls(**obj)


def transcribe(spec, clip):
    spec.check()
    decode = {
        SUBPROCESS: subprocess_transcribe,
        SYNTHETIC_LOCAL: synthetic_local_decode,
        SYNTHETIC_CONTEXTUAL: synthetic_contextual_decode,
    }[spec.kind]
    return decode(spec, clip)


###############################################################################
# Synthetic oracles
###############################################################################


def slot_levels(spec, clip):
    """Mean absolute amplitude of every slot, anchored at sample 0."""
    size = math.floor(clip.sample_rate * spec.slot_ms / 1000 + 1e-9)
    if size < 1:
        raise RecognizerError(f"slot_ms={spec.slot_ms} is shorter than one sample")
    mag = np.abs(clip.samples.astype(np.int32))
    return [float(mag[i : i + size].mean()) for i in range(0, clip.length, size)]


def raw_index(spec, level):
    """Quantized phoneme index of a slot, or None for silence."""
    if level < spec.silence_threshold:
        return None
    # Half-up rounding keeps the quantizer independent of banker's rounding
    idx = math.floor(level / LEVEL_STEP + 0.5) - 1
    return min(max(idx, 0), len(spec.vocab) - 1)


def synthetic_local_decode(spec, clip):
    ids = (raw_index(spec, m) for m in slot_levels(spec, clip))
    return Transcription(spec.vocab[i] for i in ids if i is not None)


def synthetic_contextual_decode(spec, clip):
    out, prev = [], 0
    for m in slot_levels(spec, clip):
        i = raw_index(spec, m)
        if i is None:
            prev = 0
            continue
        out.append(spec.vocab[(i + prev) % len(spec.vocab)])
        prev = i
    return Transcription(out)


###############################################################################
# Subprocess adapter
###############################################################################

_slots_lock = threading.Lock()
_slots = {}


def _process_slots(cap):
    cap = cap or os.cpu_count() or 1
    with _slots_lock:
        return _slots.setdefault(cap, threading.BoundedSemaphore(cap))


def subprocess_transcribe(spec, clip):
    """Runs `<command...> <wav-path>` and splits stdout into phonemes."""
    fd, path = tempfile.mkstemp(prefix="phonelime-", suffix=".wav")
    os.close(fd)
    cmd = [*spec.command, path]
    try:
        audio_core.write_wav(clip, path)
        with _process_slots(spec.max_procs):
            logger.debug("Running %s", cmd)
            try:
                proc = subprocess.run(cmd, capture_output=True, text=True, timeout=spec.timeout_s)
            except subprocess.TimeoutExpired:
                raise RecognizerTimeout(f"{cmd[0]} timed out after {spec.timeout_s} s") from None
            except OSError as e:
                raise RecognizerError(f"cannot launch {cmd[0]}: {e}") from e
        if proc.returncode != 0:
            raise RecognizerError(
                f"{cmd[0]} exited with code {proc.returncode}: {proc.stderr.strip()}",
                returncode=proc.returncode,
                stderr=proc.stderr,
            )
        # Empty output is legal, heavy masking can silence the recognizer
        return Transcription(proc.stdout.split())
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.remove(path)
