###############################################################################
# Validity of explanations against expert ground truth, the random ranking
# baseline, the Wilcoxon signed-rank test and report rendering
###############################################################################
import csv
import io
import logging
from collections import Counter, namedtuple

import numpy as np
from scipy import stats

import alignment
import audio_core
import config

logger = logging.getLogger(__name__)

KS = (1, 3, 5)
ALL = "All"

# Reference values measured on TIMIT SA1 with a Kaldi recognizer, all speakers.
# Not reproducible without the licensed corpus; printed next to runs only.
REFERENCE_TARGETS = {
    "lime": (0.40, 0.62, 0.67),
    "lime_ws": (0.49, 0.76, 0.83),
    "lime_ts": (0.86, 0.96, 0.97),
    "random": (0.03, 0.10, 0.15),
}


class EvaluationError(ValueError):
    pass


# segments maps transcription position -> expert Segment it was uttered in
GroundTruth = namedtuple("GroundTruth", "segments meta", defaults=({},))

# One explained phoneme with what it is judged against
EvalRecord = namedtuple("EvalRecord", "explanation truth segmentation meta", defaults=({},))

ValidityReport = namedtuple(
    "ValidityReport",
    "group strategy n validity_1 validity_3 validity_5 baseline_1 baseline_3 baseline_5",
)

WilcoxonResult = namedtuple("WilcoxonResult", "statistic p_value significant n")


def ground_truth(reference_seg, transcription, costs=alignment.SCLITE_COSTS,
                 meta=None, ignore=config.IGNORE_LABELS):
    """Maps each transcribed phoneme to the expert segment it aligns with.

    Matches and substitutions map; inserted phonemes have no ground truth.
    """
    spoken = [s for s in reference_seg.segments if s.label not in ignore]
    result = alignment.align([s.label for s in spoken], transcription, costs)
    segments = {
        op.hyp_index: spoken[op.ref_index]
        for op in result.ops
        if op.kind in (alignment.MATCH, alignment.SUBSTITUTION)
    }
    return GroundTruth(segments, dict(meta or {}))


def hit_indices(truth, seg):
    """Segment indices whose presence in the top k counts as a hit."""
    if seg.kind == audio_core.EXPERT:
        return {truth.index}
    return {s.index for s in seg.segments if audio_core.overlap_samples(s, truth) > 0}


def hit_at_k(expl, truth, seg, k):
    if k < 1:
        raise ValueError(f"k={k} must be at least 1")
    top = expl.ranking[: min(k, seg.d)]
    return int(bool(hit_indices(truth, seg).intersection(top)))


def _ratios(counts, n):
    return tuple(c / n for c in counts)


def random_baseline(items, trials=config.BASELINE_TRIALS, seed=config.SEED):
    """Monte-Carlo validity@{1,3,5} of uniformly random rankings.

    items -- (truth segment, segmentation) per explanation; explanation i
    draws from its own substream (seed, i) so the order of work is irrelevant.
    """
    items = list(items)
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if not items:
        raise EvaluationError("baseline of an empty explanation set")
    totals = np.zeros(len(KS))
    for i, (truth, seg) in enumerate(items):
        rng = np.random.default_rng([seed, i])
        perms = rng.permuted(np.tile(np.arange(seg.d), (trials, 1)), axis=1)
        hits = np.isin(perms, list(hit_indices(truth, seg)))
        first = np.where(hits.any(axis=1), hits.argmax(axis=1), seg.d)
        totals += [np.mean(first < min(k, seg.d)) for k in KS]
    return tuple(float(t) for t in totals / len(items))


def validity(records, group=ALL, strategy=None, trials=config.BASELINE_TRIALS, seed=config.SEED):
    records = list(records)
    if not records:
        raise EvaluationError("validity of an empty explanation set")
    counts = [sum(hit_at_k(r.explanation, r.truth, r.segmentation, k) for r in records) for k in KS]
    v1, v3, v5 = _ratios(counts, len(records))
    # Hit sets are nested in k, anything else is a bug
    if not v1 <= v3 <= v5:
        raise AssertionError(f"validity not nested: {v1} {v3} {v5}")
    b1, b3, b5 = random_baseline(((r.truth, r.segmentation) for r in records), trials, seed)
    strategy = strategy or records[0].explanation.strategy
    return ValidityReport(group, strategy, len(records), v1, v3, v5, b1, b3, b5)


def group_values(records, key):
    return sorted({r.meta.get(key) for r in records if r.meta.get(key) is not None})


def validity_table(records, group_by=(), trials=config.BASELINE_TRIALS, seed=config.SEED):
    """One report per (group, strategy); All first, then each metadata value."""
    records = list(records)
    strategies = sorted({r.explanation.strategy for r in records})
    groups = [(ALL, records)]
    for key in group_by:
        groups += [(v, [r for r in records if r.meta.get(key) == v]) for v in group_values(records, key)]
    reports = []
    for name, members in groups:
        for strategy in strategies:
            chosen = [r for r in members if r.explanation.strategy == strategy]
            if chosen:
                reports.append(validity(chosen, name, strategy, trials, seed))
    return reports


###############################################################################
# Wilcoxon signed-rank test
###############################################################################


def _exact_lower_tail(ranks, w):
    """P(W+ <= w) under the null, counting all 2^n sign assignments.

    Average ranks are half-integers, so sums are tracked doubled.
    """
    doubled = np.rint(np.asarray(ranks) * 2).astype(int)
    counts = np.zeros(int(doubled.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: len(counts) - r]
        counts = counts + shifted
    return counts[: int(round(2 * w)) + 1].sum() / 2.0 ** len(doubled)


def wilcoxon_signed_rank(pairs, exact_max_n=20, alpha=0.05):
    diffs = np.array([a - b for a, b in pairs], dtype=float)
    diffs = diffs[diffs != 0]
    n = len(diffs)
    if n == 0:
        raise EvaluationError("Wilcoxon test undefined: every difference is zero")
    ranks = stats.rankdata(np.abs(diffs))
    w_plus, w_minus = ranks[diffs > 0].sum(), ranks[diffs < 0].sum()
    w = float(min(w_plus, w_minus))
    if n <= exact_max_n:
        p = 2 * _exact_lower_tail(ranks, w)
    else:
        _, tie_sizes = np.unique(ranks, return_counts=True)
        mean = n * (n + 1) / 4
        var = n * (n + 1) * (2 * n + 1) / 24 - (tie_sizes**3 - tie_sizes).sum() / 48
        z = (abs(w - mean) - 0.5) / np.sqrt(var)
        p = 2 * stats.norm.sf(z) if z > 0 else 1.0
    p = float(min(1.0, p))
    return WilcoxonResult(w, p, p < alpha, n)


###############################################################################
# Mistake explanations
###############################################################################


def top_segment_report(explanations, top_m=config.TOP_M):
    """Most frequent segments among the top_m of each explanation.

    The explanations may come from different utterances, so each segment's
    label is read from every explanation that ranked it and the most common
    one is reported (None for time segments). Returns (segment index, label,
    frequency) triples. Equally frequent segments are ordered by their summed
    rank, then by index.
    """
    explanations = list(explanations)
    if not explanations:
        raise EvaluationError("no explanations for this mistake")
    counts, rank_sums = Counter(), Counter()
    labels = {}
    for e in explanations:
        for rank, i in enumerate(e.ranking[:top_m]):
            if not 0 <= i < e.segmentation.d:
                raise EvaluationError(f"{e.audio_id}: segment {i} outside its {e.segmentation.d} segments")
            counts[i] += 1
            rank_sums[i] += rank
            labels.setdefault(i, Counter())[e.segmentation.segments[i].label] += 1
    ranked = sorted(counts, key=lambda i: (-counts[i], rank_sums[i], i))[:top_m]
    return [(i, _modal(labels[i]), counts[i] / len(explanations)) for i in ranked]


def _modal(labels):
    return min(labels, key=lambda label: (-labels[label], label or ""))


###############################################################################
# Rendering
###############################################################################


def report_json(reports):
    """Table-shaped: group -> metric -> column, with a random column per strategy."""
    out = {}
    for r in reports:
        table = out.setdefault(r.group, {})
        table.setdefault("N", {})[r.strategy] = r.n
        for k, v, b in zip(KS, r[3:6], r[6:9]):
            row = table.setdefault(f"validity_{k}", {})
            row[r.strategy] = v
            row[f"{r.strategy}/random"] = b
    return out


def render_table(reports, show_targets=False):
    lines = []
    groups = list(dict.fromkeys(r.group for r in reports))
    for group in groups:
        rows = [r for r in reports if r.group == group]
        header = f"{group:<12}" + "".join(f"{r.strategy + ' / random':>24}" for r in rows)
        lines += [header, "-" * len(header)]
        for k, idx in zip(KS, (3, 4, 5)):
            cells = "".join(f"{f'{r[idx]:.2f} / {r[idx + 3]:.2f}':>24}" for r in rows)
            lines.append(f"{'validity_' + str(k):<12}{cells}")
        lines.append(f"{'N':<12}" + "".join(f"{r.n:>24}" for r in rows))
        if show_targets and group == ALL:
            targets = "".join(
                f"{'/'.join(f'{v:.2f}' for v in REFERENCE_TARGETS.get(r.strategy, ())):>24}" for r in rows
            )
            lines.append(f"{'reference':<12}{targets}")
        lines.append("")
    return "\n".join(lines)


def report_csv(reports):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ValidityReport._fields)
    for r in reports:
        writer.writerow(r)
    return buf.getvalue()
