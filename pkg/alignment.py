###############################################################################
# Edit-distance alignment of phoneme sequences and mistake statistics
###############################################################################
from collections import Counter, namedtuple

import config

MATCH, SUBSTITUTION, DELETION, INSERTION = "match", "substitution", "deletion", "insertion"

Costs = namedtuple("Costs", "substitution deletion insertion")
SCLITE_COSTS = Costs(*config.COSTS)
UNIT_COSTS = Costs(1, 1, 1)

# ref_index/hyp_index are None on the side an op does not touch
AlignmentOp = namedtuple("AlignmentOp", "kind ref_index hyp_index ref_label hyp_label")


class AlignmentResult(namedtuple("AlignmentResult", "ops cost")):
    def by_ref(self):
        return {op.ref_index: op for op in self.ops if op.ref_index is not None}

    def by_hyp(self):
        return {op.hyp_index: op for op in self.ops if op.hyp_index is not None}

    def mistakes(self):
        return {MistakeKey.of(op) for op in self.ops if op.kind != MATCH}


class MistakeKey(namedtuple("MistakeKey", "ref_label hyp_label kind")):
    @classmethod
    def of(cls, op):
        return cls(op.ref_label, op.hyp_label, op.kind)

    def sort_key(self):
        return (self.ref_label or "", self.hyp_label or "", self.kind)

    def __str__(self):
        return f"{self.ref_label or '-'}->{self.hyp_label or '-'}"

    def to_json(self):
        return {"ref": self.ref_label, "hyp": self.hyp_label, "kind": self.kind}


def _labels(seq):
    return tuple(getattr(seq, "phonemes", seq))


def align(reference, hypothesis, costs=SCLITE_COSTS):
    """Minimum-cost alignment; ties prefer match > substitution > deletion > insertion."""
    ref, hyp = _labels(reference), _labels(hypothesis)
    sub, dele, ins = costs
    n, m = len(ref), len(hyp)
    # D[i][j] is the cost of aligning ref[:i] with hyp[:j]
    D = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        D[i][0] = D[i - 1][0] + dele
    for j in range(1, m + 1):
        D[0][j] = D[0][j - 1] + ins
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = D[i - 1][j - 1] + (0 if ref[i - 1] == hyp[j - 1] else sub)
            D[i][j] = min(diag, D[i - 1][j] + dele, D[i][j - 1] + ins)

    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            same = ref[i - 1] == hyp[j - 1]
            if D[i][j] == D[i - 1][j - 1] + (0 if same else sub):
                kind = MATCH if same else SUBSTITUTION
                ops.append(AlignmentOp(kind, i - 1, j - 1, ref[i - 1], hyp[j - 1]))
                i, j = i - 1, j - 1
                continue
        if i > 0 and D[i][j] == D[i - 1][j] + dele:
            ops.append(AlignmentOp(DELETION, i - 1, None, ref[i - 1], None))
            i -= 1
        else:
            ops.append(AlignmentOp(INSERTION, None, j - 1, None, hyp[j - 1]))
            j -= 1
    ops.reverse()
    return AlignmentResult(tuple(ops), D[n][m])


def label_against_reference(reference, hypothesis, costs=SCLITE_COSTS):
    """1 for every hypothesis phoneme that matches the reference, else 0."""
    by_hyp = align(reference, hypothesis, costs).by_hyp()
    return [int(by_hyp[j].kind == MATCH) for j in range(len(_labels(hypothesis)))]


def presence_labels(original, mutant, costs=SCLITE_COSTS):
    """f^p(mutant) for every position p of the original transcription."""
    by_ref = align(original, mutant, costs).by_ref()
    return [int(by_ref[p].kind == MATCH) for p in range(len(_labels(original)))]


def phoneme_presence(original, mutant, p, costs=SCLITE_COSTS):
    if not 0 <= p < len(_labels(original)):
        raise IndexError(f"position {p} outside transcription of length {len(_labels(original))}")
    return presence_labels(original, mutant, costs)[p]


def mistake_frequencies(corpus, costs=SCLITE_COSTS):
    """Fraction of (reference, hypothesis) pairs containing each mistake.

    Returned as a dict ordered by descending frequency, then by labels.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("mistake frequencies need a non-empty corpus")
    counts = Counter()
    for ref, hyp in corpus:
        counts.update(align(ref, hyp, costs).mistakes())
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0].sort_key()))
    return {key: cnt / len(corpus) for key, cnt in ordered}


def mistake_positions(corpus, key, costs=SCLITE_COSTS):
    """Share of the occurrences of a mistake found at each reference position.

    Insertions have no reference position and are keyed by hypothesis position.
    """
    counts = Counter()
    for ref, hyp in corpus:
        for op in align(ref, hyp, costs).ops:
            if MistakeKey.of(op) == key:
                counts[op.ref_index if op.ref_index is not None else op.hyp_index] += 1
    total = sum(counts.values())
    return {pos: cnt / total for pos, cnt in sorted(counts.items())} if total else {}


def mistakes_to_json(freqs):
    return [dict(key.to_json(), frequency=freq) for key, freq in freqs.items()]
