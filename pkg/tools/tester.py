#!/usr/bin/env python3
# -*- coding: utf-8 -*-
# Acceptance runs on synthetic oracle corpora. Slower and larger than the
# unit tests; every command prints how many of its cases passed.

import argparse
import itertools
import json
import logging
import pathlib
import sys
import tempfile
import time

import numpy as np
import tqdm

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent))

import alignment  # noqa: E402
import audio_core  # noqa: E402
import cli  # noqa: E402
import evaluation  # noqa: E402
import explainer  # noqa: E402
import perturbation  # noqa: E402
from tests import oracles  # noqa: E402


class Command:
    @classmethod
    def add_arguments(cls, parser):
        raise NotImplementedError

    @classmethod
    def run(cls, args):
        raise NotImplementedError


def report(success, total):
    print(f"Succeeded in {success}/{total} cases.")
    return success == total


def evaluate(corpus, out, args, *extra):
    argv = ["evaluate", str(corpus / "manifest.json"), "--out", str(out), "--seed", str(args.seed), "--quiet"]
    code = cli.main(argv + list(extra))
    if code != cli.EXIT_OK:
        raise RuntimeError(f"evaluate exited with {code}")
    return json.loads((out / "report.json").read_text())


###############################################################################
# Synthetic corpus checks
###############################################################################


class Locality(Command):
    name = "locality"
    help = "LIME-TS finds the slot of every phoneme of a local oracle."

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("--clips", type=int, default=50)
        parser.add_argument("--slots", type=int, default=8)
        parser.add_argument("--vocab-size", type=int, default=5)

    @classmethod
    def run(cls, args):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = pathlib.Path(tmp)
            cli.synth_corpus(tmp / "corpus", args.clips, args.slots, vocab_size=args.vocab_size, seed=args.seed)
            table = evaluate(tmp / "corpus", tmp / "out", args, "--strategies", "lime-ts", "--ts-ms", "70")
        v1 = table["reports"]["All"]["validity_1"]["lime_ts"]
        v3 = table["reports"]["All"]["validity_3"]["lime_ts"]
        print(f"lime_ts validity_1={v1:.3f} validity_3={v3:.3f}")
        return report((v1 >= 0.95) + (v3 >= 0.99), 2)


class Ordering(Command):
    name = "ordering"
    help = "windowed strategies beat plain LIME when slots and time segments disagree."

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("--clips", type=int, default=50)
        parser.add_argument("--slots", type=int, default=48)
        parser.add_argument("--slot-ms", type=float, default=78)
        parser.add_argument("--vocab-size", type=int, default=3)
        parser.add_argument("--window-k", type=int, default=2)
        parser.add_argument("--margin", type=float, default=0.05)

    @classmethod
    def run(cls, args):
        # Labels repeat every window_k + 1 slots, so deletions inside one window
        # align exactly. The long masked runs of global sampling shift the
        # alignment of everything before them.
        with tempfile.TemporaryDirectory() as tmp:
            tmp = pathlib.Path(tmp)
            cli.synth_corpus(
                tmp / "corpus", args.clips, args.slots, slot_ms=args.slot_ms,
                vocab_size=args.vocab_size, seed=args.seed, spacing=args.window_k,
            )
            table = evaluate(tmp / "corpus", tmp / "out", args, "--ts-ms", "70", "--window-k", str(args.window_k))
        v3 = table["reports"]["All"]["validity_3"]
        for strategy in perturbation.STRATEGIES:
            print(f"{strategy:<8} validity_3={v3[strategy]:.3f} random={v3[strategy + '/random']:.3f}")
        success = (v3["lime_ts"] >= v3["lime"] + args.margin) + (v3["lime_ws"] >= v3["lime"] + args.margin)
        return report(success, 2)


class Contextual(Command):
    name = "contextual"
    help = "LIME-WS ranks a phoneme's slot and its left context first on a contextual oracle."

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("--clips", type=int, default=20)
        parser.add_argument("--slots", type=int, default=6)
        parser.add_argument("--vocab-size", type=int, default=16)
        parser.add_argument("--window-k", type=int, default=3)

    @classmethod
    def run(cls, args):
        success = total = 0
        with tempfile.TemporaryDirectory() as tmp:
            manifest = cli.synth_corpus(
                tmp, args.clips, args.slots, vocab_size=args.vocab_size, contextual=True, seed=args.seed
            )
            plan = perturbation.PerturbationPlan(
                perturbation.LIME_WS, window_k=args.window_k, seed=args.seed
            ).check()
            for entry in tqdm.tqdm(manifest.entries, disable=args.quiet):
                clip, seg = cli.load_entry(entry)
                for e in explainer.explain_all(clip, seg, manifest.recognizer, plan)[1:]:
                    success += {e.position - 1, e.position} <= set(e.ranking[:2])
                    total += 1
        print(f"top-2 holds slot and left context in {success / total:.3f} of cases")
        return report(int(success >= 0.9 * total), 1)


class Determinism(Command):
    name = "determinism"
    help = "reports are byte-identical across reruns and worker counts."

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("--clips", type=int, default=8)

    @classmethod
    def run(cls, args):
        blobs = []
        with tempfile.TemporaryDirectory() as tmp:
            tmp = pathlib.Path(tmp)
            cli.synth_corpus(tmp / "corpus", args.clips, 8, seed=args.seed)
            for n, jobs in enumerate(["1", "1", "4"]):
                evaluate(tmp / "corpus", tmp / f"out{n}", args, "--jobs", jobs)
                blobs.append((tmp / f"out{n}" / "report.json").read_bytes())
        return report(sum(b == blobs[0] for b in blobs[1:]), 2)


###############################################################################
# Oracle equivalence
###############################################################################


class Baseline(Command):
    name = "baseline"
    help = "random ranking baseline against 1/d."

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("--segments", type=int, default=38)
        parser.add_argument("--trials", type=int, default=10000)

    @classmethod
    def run(cls, args):
        d = args.segments
        seg = audio_core.Segmentation(
            [audio_core.Segment(i, i * 100, (i + 1) * 100, "aa") for i in range(d)], audio_core.EXPERT
        )
        estimates = evaluation.random_baseline([(seg.segments[d // 2], seg)], args.trials, args.seed)
        success = 0
        for k, b in zip(evaluation.KS, estimates):
            p = min(k / d, 1.0)
            sigma = np.sqrt(p * (1 - p) / args.trials)
            print(f"validity_{k}: {b:.4f} expected {p:.4f} +- {3 * sigma:.4f}")
            success += abs(b - p) <= 3 * sigma
        return report(success, len(evaluation.KS))


class Ridge(Command):
    name = "ridge"
    help = "surrogate fit against the augmented normal equations."

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("--instances", type=int, default=200)

    @classmethod
    def run(cls, args):
        rng = np.random.default_rng(args.seed)
        success = total = 0
        pb = tqdm.tqdm(total=args.instances, disable=args.quiet)
        while total < args.instances:
            d, n = int(rng.integers(1, 9)), int(rng.integers(2, 51))
            lam = float(rng.choice([0.0, 0.1, 1.0]))
            X, w, y = rng.integers(0, 2, (n, d)), rng.uniform(0.05, 1, n), rng.integers(0, 2, n)
            if lam == 0 and np.linalg.matrix_rank(np.hstack([np.ones((n, 1)), X])) <= d:
                continue
            intercept, scores = explainer.fit_weighted_ridge(zip(X, w, y), lam)
            b0, b = oracles.augmented_ridge(X, w, y, lam)
            err = max(abs(intercept - b0), np.abs(scores - b).max())
            if err >= 1e-8:
                logging.debug("d=%d n=%d lam=%s off by %g", d, n, lam, err)
            success += err < 1e-8
            total += 1
            pb.update(1)
        pb.close()
        return report(success, total)


class Align(Command):
    name = "align"
    help = "alignment cost against exhaustive search."

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("--max-len", type=int, default=5)

    @classmethod
    def run(cls, args):
        seqs = [s for n in range(args.max_len + 1) for s in itertools.product("abc", repeat=n)]
        success = total = 0
        for costs in (alignment.SCLITE_COSTS, alignment.UNIT_COSTS):
            for ref in tqdm.tqdm(seqs, desc=str(tuple(costs)), disable=args.quiet):
                for hyp in seqs:
                    result = alignment.align(ref, hyp, costs)
                    ok = result.cost == oracles.brute_force_cost(ref, hyp, costs)
                    ok = ok and oracles.replay_cost(result.ops, ref, hyp, costs) == result.cost
                    success += ok
                    total += 1
        return report(success, total)


class Wilcoxon(Command):
    name = "wilcoxon"
    help = "exact p-values against enumeration of every sign pattern."

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("--max-n", type=int, default=10)

    @classmethod
    def run(cls, args):
        rng = np.random.default_rng(args.seed)
        success = total = 0
        for n in tqdm.tqdm(range(1, args.max_n + 1), disable=args.quiet):
            magnitudes = rng.integers(1, 5, n)
            for signs in itertools.product((-1, 1), repeat=n):
                diffs = [int(s * m) for s, m in zip(signs, magnitudes)]
                p = evaluation.wilcoxon_signed_rank([(x, 0) for x in diffs]).p_value
                success += abs(p - oracles.enumerated_wilcoxon_p(diffs)) < 1e-12
                total += 1
        return report(success, total)


###############################################################################
# Actions
###############################################################################


def main():
    parser = argparse.ArgumentParser(description="Run acceptance checks for phonelime.")
    parser.add_argument("--debug", action="store_true", help="Write lots of extra stuff")
    parser.add_argument("--quiet", action="store_true", help="Only write pass/fail")
    parser.add_argument("--seed", type=int, default=0)
    subparsers = parser.add_subparsers()
    subparsers.required = True

    for cls in Command.__subclasses__():
        sub = subparsers.add_parser(cls.name, help=cls.help)
        cls.add_arguments(sub)
        sub.set_defaults(func=cls.run)

    args = parser.parse_args()

    if args.debug:
        logging.basicConfig(level=logging.DEBUG)

    start = time.time()
    ok = args.func(args)
    print(f"Took {round(time.time() - start, 2)} seconds.")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
