###############################################################################
# The LIME core: closeness weights, weighted ridge surrogate and the
# per-phoneme explanation pipeline
###############################################################################
import logging
import math
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor

import numpy as np

import alignment
import config
import perturbation
import recognizer

logger = logging.getLogger(__name__)

OK, DEGENERATE = "ok", "degenerate"


class MutantFailure(recognizer.RecognizerError):
    """A recognizer failure on one mutant; mask is the offending MaskVector"""

    def __init__(self, message, mask, returncode=None, stderr=""):
        super().__init__(message, returncode, stderr)
        self.mask = mask


# labels maps original phoneme position -> f^p(m_i)
MutantRecord = namedtuple("MutantRecord", "mask weight labels")


class Explanation(
    namedtuple(
        "Explanation",
        "audio_id position phoneme strategy plan intercept scores ranking segmentation confidence_flag",
    )
):
    """Importance of every segment for one phoneme of the transcription
    scores -- w_1..w_d of the surrogate, one per segment
    ranking -- segment indices by descending score, ties by ascending index
    """

    def to_json(self):
        return {
            "audio_id": self.audio_id,
            "position": self.position,
            "phoneme": self.phoneme,
            "strategy": self.strategy,
            "plan": self.plan.to_json(),
            "intercept": self.intercept,
            "scores": list(self.scores),
            "ranking": list(self.ranking),
            "segments": [s.to_json() for s in self.segmentation.segments],
            "confidence_flag": self.confidence_flag,
        }


# Everything the recognizer produced for one clip; shared by all positions
MutantBatch = namedtuple("MutantBatch", "clip segmentation original masks transcriptions")


def closeness_weight(mask):
    """Cosine similarity between the all-ones instance and a mask: sqrt(u/d)."""
    d = len(mask)
    if d == 0:
        raise ValueError("closeness of an empty mask")
    u = int(np.count_nonzero(mask))
    return math.sqrt(u / d)


def fit_weighted_ridge(records, lam=config.LAMBDA):
    """Weighted least squares with an unpenalized intercept.

    records -- (mask, weight, label) triples
    Returns (intercept, scores). Rank-deficient systems (lam=0) yield the
    minimum-norm scores.
    """
    records = list(records)
    if len(records) < 2:
        raise ValueError("the surrogate needs at least two mutants")
    if lam < 0:
        raise ValueError(f"lambda={lam} must be non-negative")
    X = np.array([r[0] for r in records], dtype=float)
    w = np.array([r[1] for r in records], dtype=float)
    y = np.array([r[2] for r in records], dtype=float)
    if not (w > 0).any():
        raise ValueError("all mutant weights are zero")
    # Centering on the weighted means removes the intercept from the system
    p = w / w.sum()
    x_mean, y_mean = p @ X, p @ y
    Xc, yc = X - x_mean, y - y_mean
    A = Xc.T @ (w[:, None] * Xc) + lam * np.eye(X.shape[1])
    b = Xc.T @ (w * yc)
    scores = np.linalg.lstsq(A, b, rcond=None)[0]
    return float(y_mean - x_mean @ scores), scores


def rank_segments(scores, mode=config.RANKING):
    keys = np.abs(scores) if mode == "absolute" else np.asarray(scores)
    return sorted(range(len(keys)), key=lambda i: (-keys[i], i))


def transcribe_mutants(clip, seg, spec, plan, jobs=1, original=None):
    """Transcribes the original and every mutant once, in mask order.

    A known transcription of the unmasked clip can be passed as original so
    several strategies share one recognizer call.
    """
    if original is None:
        original = recognizer.transcribe(spec, clip)
    seg, masks = perturbation.sample(plan, clip, seg)
    logger.debug("%s: %d mutants over %d segments", clip.id, len(masks), seg.d)

    def run(mask):
        try:
            return recognizer.transcribe(spec, perturbation.realize(clip, seg, mask))
        except recognizer.RecognizerError as e:
            raise MutantFailure(str(e), mask.tolist(), e.returncode, e.stderr) from e

    if jobs and jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            # map yields in submission order whatever the scheduling
            transcriptions = list(executor.map(run, masks))
    else:
        transcriptions = [run(mask) for mask in masks]
    return MutantBatch(clip, seg, original, masks, transcriptions)


def mutant_records(batch, costs=alignment.SCLITE_COSTS):
    return [
        MutantRecord(
            mask,
            closeness_weight(mask),
            dict(enumerate(alignment.presence_labels(batch.original, t, costs))),
        )
        for mask, t in zip(batch.masks, batch.transcriptions)
    ]


def explain_position(batch, records, plan, p, lam=config.LAMBDA, ranking=config.RANKING):
    n = len(batch.original.phonemes)
    if not 0 <= p < n:
        raise IndexError(f"position {p} outside transcription of length {n}")
    labels = [r.labels[p] for r in records]
    intercept, scores = fit_weighted_ridge(
        [(r.mask, r.weight, label) for r, label in zip(records, labels)], lam
    )
    d = batch.segmentation.d
    if len(set(labels)) <= 1:
        logger.debug("%s: degenerate fit for position %d", batch.clip.id, p)
        flag, order = DEGENERATE, list(range(d))
    else:
        flag, order = OK, rank_segments(scores, ranking)
    return Explanation(
        audio_id=batch.clip.id,
        position=p,
        phoneme=batch.original.phonemes[p],
        strategy=plan.strategy,
        plan=plan,
        intercept=intercept,
        scores=[float(s) for s in scores],
        ranking=order,
        segmentation=batch.segmentation,
        confidence_flag=flag,
    )


def explain_phoneme(clip, seg, spec, plan, p, lam=config.LAMBDA, ranking=config.RANKING,
                    costs=alignment.SCLITE_COSTS, jobs=1):
    batch = transcribe_mutants(clip, seg, spec, plan, jobs)
    return explain_position(batch, mutant_records(batch, costs), plan, p, lam, ranking)


def explain_all(clip, seg, spec, plan, lam=config.LAMBDA, ranking=config.RANKING,
                costs=alignment.SCLITE_COSTS, jobs=1, original=None):
    """One explanation per transcribed phoneme, all fitted on one mutant set."""
    batch = transcribe_mutants(clip, seg, spec, plan, jobs, original)
    if not batch.original.phonemes:
        raise ValueError(f"{clip.id}: the recognizer produced an empty transcription")
    records = mutant_records(batch, costs)
    explanations = [
        explain_position(batch, records, plan, p, lam, ranking)
        for p in range(len(batch.original.phonemes))
    ]
    degenerate = sum(e.confidence_flag == DEGENERATE for e in explanations)
    if degenerate:
        logger.warning("%s: %d/%d explanations are degenerate", clip.id, degenerate, len(explanations))
    return explanations
