###############################################################################
# Audio clips, WAV I/O, masking and segmentation
###############################################################################
import logging
import math
import pathlib
import wave
from collections import namedtuple

import numpy as np

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000
EXPERT, TIME = "expert", "time"


class AudioFormatError(ValueError):
    pass


class SegmentationError(ValueError):
    pass


class AudioClip(namedtuple("AudioClip", "samples sample_rate id")):
    """A mono 16-bit recording, the instance being explained
    samples -- read-only int16 numpy array
    sample_rate -- samples per second
    id -- opaque identifier
    """

    def __new__(cls, samples, sample_rate=SAMPLE_RATE, id=""):
        arr = np.asarray(samples)
        if arr.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if arr.size and (arr.min() < -32768 or arr.max() > 32767):
            raise ValueError("samples outside the signed 16-bit range")
        arr = arr.astype(np.int16)
        arr.setflags(write=False)
        if sample_rate <= 0:
            raise ValueError(f"sample_rate={sample_rate} must be positive")
        return super().__new__(cls, arr, int(sample_rate), str(id))

    @property
    def length(self):
        return len(self.samples)

    def __eq__(self, other):
        return (
            isinstance(other, AudioClip)
            and self.sample_rate == other.sample_rate
            and self.id == other.id
            and np.array_equal(self.samples, other.samples)
        )

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        return hash((self.sample_rate, self.id, self.samples.tobytes()))


class Segment(namedtuple("Segment", "index start end label", defaults=(None,))):
    """A sample interval [start, end); label is None for time segments"""

    @property
    def length(self):
        return self.end - self.start

    def to_json(self):
        out = {"index": self.index, "start": self.start, "end": self.end}
        if self.label is not None:
            out["label"] = self.label
        return out


class Segmentation(namedtuple("Segmentation", "segments kind sample_rate", defaults=(None,))):
    """Ordered, non-overlapping segments; d = len(segments) is the feature count"""

    def __new__(cls, segments, kind, sample_rate=None):
        segments = tuple(segments)
        if kind not in (EXPERT, TIME):
            raise ValueError(f"unknown segmentation kind {kind!r}")
        prev_end = 0
        for i, s in enumerate(segments):
            if s.index != i:
                raise SegmentationError(f"segment {i} carries index {s.index}")
            if not 0 <= s.start < s.end:
                raise SegmentationError(f"segment {i} is empty or negative: [{s.start}, {s.end})")
            if s.start < prev_end:
                raise SegmentationError(f"segment {i} at {s.start} overlaps or precedes {prev_end}")
            prev_end = s.end
        return super().__new__(cls, segments, kind, sample_rate)

    @property
    def d(self):
        return len(self.segments)

    @property
    def end(self):
        return self.segments[-1].end if self.segments else 0

    def labels(self, ignore=()):
        return [s.label for s in self.segments if s.label not in ignore]


def read_wav(path):
    path = pathlib.Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            channels, width, rate = wf.getnchannels(), wf.getsampwidth(), wf.getframerate()
            if channels != 1:
                raise AudioFormatError(f"{path}: channels={channels} unsupported")
            if width != 2:
                raise AudioFormatError(f"{path}: bits={8 * width} unsupported")
            frames = wf.readframes(wf.getnframes())
    except wave.Error as e:
        # The wave module only understands PCM and names the format code
        raise AudioFormatError(f"{path}: {e}") from e
    except EOFError as e:
        raise AudioFormatError(f"{path}: truncated header") from e
    samples = np.frombuffer(frames, dtype="<i2")
    return AudioClip(samples, rate, path.stem)


def write_wav(clip, path):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(clip.samples.astype("<i2").tobytes())


def mask_segments(clip, seg, masked):
    """Zeroes every sample inside the masked segments; gaps are never touched."""
    if seg.end > clip.length:
        raise SegmentationError(f"segmentation ends at {seg.end}, clip has {clip.length} samples")
    out = clip.samples.copy()
    for i in masked:
        if not 0 <= i < seg.d:
            raise SegmentationError(f"segment index {i} out of range for d={seg.d}")
        s = seg.segments[i]
        out[s.start : s.end] = 0
    return AudioClip(out, clip.sample_rate, clip.id)


def parse_phn(path, sample_rate=SAMPLE_RATE):
    segments = []
    with open(path, newline=None) as f:
        lines = f.read().splitlines()
    for lineno, line in enumerate(lines, 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 3:
            raise SegmentationError(f"{path}:{lineno}: expected 'start end label', got {line!r}")
        try:
            start, end = int(fields[0]), int(fields[1])
        except ValueError:
            raise SegmentationError(f"{path}:{lineno}: non-integer offset in {line!r}") from None
        if start < 0 or end < 0:
            raise SegmentationError(f"{path}:{lineno}: negative offset in {line!r}")
        segments.append(Segment(len(segments), start, end, fields[2]))
    try:
        return Segmentation(segments, EXPERT, sample_rate)
    except SegmentationError as e:
        raise SegmentationError(f"{path}: {e}") from None


def format_phn(seg):
    return "".join(f"{s.start} {s.end} {s.label}\n" for s in seg.segments)


def write_phn(seg, path):
    pathlib.Path(path).write_text(format_phn(seg))


def time_segmentation(clip, duration_ms, min_samples=1):
    """Slices the clip into equal segments from sample 0.

    A shorter final remainder is kept as its own segment when it has at least
    min_samples samples, otherwise it is folded into the previous segment.
    """
    if duration_ms <= 0:
        raise ValueError(f"duration_ms={duration_ms} must be positive")
    # The epsilon keeps 16000 * 70 / 1000 from landing on 1119.999...
    size = math.floor(clip.sample_rate * duration_ms / 1000 + 1e-9)
    if size < 1:
        raise ValueError(f"{duration_ms} ms is shorter than one sample period")
    if clip.length == 0:
        raise ValueError("cannot segment an empty clip")
    bounds = [[start, min(start + size, clip.length)] for start in range(0, clip.length, size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < min_samples:
        tail = bounds.pop()
        bounds[-1][1] = tail[1]
    segments = [Segment(i, start, end) for i, (start, end) in enumerate(bounds)]
    return Segmentation(segments, TIME, clip.sample_rate)


def overlap_samples(a, b):
    return max(0, min(a.end, b.end) - max(a.start, b.start))
