#!/usr/bin/env python3
# Subprocess front end of the synthetic recognizers. Prints the phonemes of a
# WAV file on one line, so the subprocess adapter can be checked against the
# in-process oracles.
#
#   python3 tools/oracle_recognizer.py --vocab aa,iy,sh clip.wav

import argparse
import pathlib
import sys
from functools import partial

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent))

import audio_core  # noqa: E402
import config  # noqa: E402
import recognizer  # noqa: E402

print = partial(print, flush=True)


def main(argv=None):
    parser = argparse.ArgumentParser(description="Deterministic stand-in for an ASR system.")
    parser.add_argument("wav")
    parser.add_argument("--contextual", action="store_true")
    parser.add_argument("--vocab", default=",".join(config.VOCAB[:5]))
    parser.add_argument("--slot-ms", dest="slot_ms", type=float, default=config.SLOT_MS)
    parser.add_argument("--threshold", type=float, default=config.SILENCE_THRESHOLD)
    parser.add_argument("--fail", action="store_true", help="exit 1 after writing to stderr")
    args = parser.parse_args(argv)

    if args.fail:
        print("oracle: asked to fail", file=sys.stderr)
        return 1
    kind = recognizer.SYNTHETIC_CONTEXTUAL if args.contextual else recognizer.SYNTHETIC_LOCAL
    spec = recognizer.RecognizerSpec(
        kind,
        slot_ms=args.slot_ms,
        vocab=tuple(args.vocab.split(",")),
        silence_threshold=args.threshold,
    )
    try:
        clip = audio_core.read_wav(args.wav)
    except (OSError, audio_core.AudioFormatError) as e:
        print(f"oracle: {e}", file=sys.stderr)
        return 2
    print(recognizer.transcribe(spec, clip))
    return 0


if __name__ == "__main__":
    sys.exit(main())
