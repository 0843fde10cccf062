###############################################################################
# Command line interface: explain, evaluate, mistakes, synth
###############################################################################
import argparse
import json
import logging
import math
import os
import pathlib
import shlex
import sys
import time
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import tqdm

import alignment
import audio_core
import config
import evaluation
import explainer
import perturbation
import recognizer

logger = logging.getLogger(__name__)

version = "phonelime 2026.10"

EXIT_OK, EXIT_INPUT, EXIT_RECOGNIZER, EXIT_PARTIAL = 0, 2, 3, 4


###############################################################################
# Corpus manifests
###############################################################################

ManifestEntry = namedtuple("ManifestEntry", "audio_id wav phn meta", defaults=(None, {}))


class CorpusManifest(namedtuple("CorpusManifest", "entries recognizer plan")):
    """A desk-scale corpus
    entries -- ManifestEntry per utterance, meta holds gender/dialect/speaker_id
    recognizer -- RecognizerSpec or None
    plan -- PerturbationPlan or None
    """

    def to_json(self):
        return {
            "entries": [
                {"audio_id": e.audio_id, "wav": str(e.wav), "phn": e.phn and str(e.phn), "speaker": e.meta}
                for e in self.entries
            ],
            "recognizer": self.recognizer and self.recognizer.to_json(),
            "plan": self.plan and self.plan.to_json(),
        }

    def config_layer(self):
        """The manifest's recognizer and plan as flat config keys."""
        layer = {}
        if self.recognizer:
            r = self.recognizer
            layer.update(
                recognizer=r.kind,
                recognizer_cmd=list(r.command) or None,
                vocab=list(r.vocab) or None,
                slot_ms=r.slot_ms,
                silence_threshold=r.silence_threshold,
                timeout_s=r.timeout_s,
            )
        if self.plan:
            p = self.plan
            layer.update(
                strategy=p.strategy,
                n_global=p.n_global,
                mask_prob=p.mask_prob,
                window_k=p.window_k,
                n_per_window=p.n_per_window,
                ts_ms=p.ts_duration_ms,
                seed=p.seed,
            )
        return layer


def load_manifest(path):
    path = pathlib.Path(path)
    with open(path) as f:
        obj = json.load(f)
    root = path.parent
    entries, seen = [], set()
    for raw in obj.get("entries", []):
        audio_id = raw["audio_id"]
        if audio_id in seen:
            raise ValueError(f"{path}: duplicate audio_id {audio_id!r}")
        seen.add(audio_id)
        phn = raw.get("phn")
        entries.append(
            ManifestEntry(audio_id, root / raw["wav"], phn and root / phn, dict(raw.get("speaker") or {}))
        )
    rec = obj.get("recognizer")
    plan = obj.get("plan")
    return CorpusManifest(
        entries,
        rec and recognizer.RecognizerSpec.from_json(rec),
        plan and perturbation.PerturbationPlan.from_json(plan),
    )


def write_manifest(manifest, path):
    pathlib.Path(path).write_text(json.dumps(manifest.to_json(), indent=2) + "\n")


###############################################################################
# Shared plumbing
###############################################################################


def csv_list(convert=str):
    return lambda s: [convert(x) for x in s.split(",") if x]


def add_shared_arguments(parser):
    parser.add_argument("--config", help="JSON file of settings, overridden by flags")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int, help="parallel workers (default: logical CPUs)")
    parser.add_argument("--strategy", choices=["lime", "lime-ws", "lime-ts", "lime_ws", "lime_ts"])
    parser.add_argument("--window-k", dest="window_k", type=int)
    parser.add_argument("--n-per-window", dest="n_per_window", type=int)
    parser.add_argument("--n-global", dest="n_global", type=int)
    parser.add_argument("--mask-prob", dest="mask_prob", type=float)
    parser.add_argument("--ts-ms", dest="ts_ms", type=float)
    parser.add_argument("--lambda", dest="lam", type=float, help="ridge regularization")
    parser.add_argument("--ranking", choices=["signed", "absolute"])
    parser.add_argument("--costs", type=csv_list(int), help="sub,del,ins alignment costs")
    parser.add_argument("--recognizer", choices=recognizer.KINDS)
    parser.add_argument("--recognizer-cmd", dest="recognizer_cmd", help="adapter command line")
    parser.add_argument("--timeout-s", dest="timeout_s", type=float)
    parser.add_argument("--vocab", type=csv_list(), help="phoneme table of synthetic recognizers")
    parser.add_argument("--slot-ms", dest="slot_ms", type=float)
    parser.add_argument("--threshold", dest="silence_threshold", type=float)
    parser.add_argument("--trials", type=int, help="random baseline trials")
    parser.add_argument("--debug", action="store_true", help="Write lots of extra stuff")
    parser.add_argument("--quiet", action="store_true", help="No tables or progress bars")


def resolve_config(args, base=None):
    conf = config.resolve(vars(args), args.config, base)
    conf["jobs"] = conf["jobs"] or os.cpu_count() or 1
    return conf


def config_echo(conf):
    # Worker count never changes results, so reruns may pick their own
    return {k: v for k, v in sorted(conf.items()) if k != "jobs"}


def recognizer_spec(conf):
    kind = conf["recognizer"] or (recognizer.SUBPROCESS if conf["recognizer_cmd"] else None)
    if kind is None:
        raise ValueError("no recognizer configured, pass --recognizer-cmd or --recognizer")
    command = conf["recognizer_cmd"] or ()
    if isinstance(command, str):
        command = shlex.split(command)
    return recognizer.RecognizerSpec(
        kind=kind,
        command=tuple(command),
        slot_ms=conf["slot_ms"],
        vocab=tuple(conf["vocab"] or config.VOCAB),
        silence_threshold=conf["silence_threshold"],
        timeout_s=conf["timeout_s"],
        max_procs=conf["jobs"],
    ).check()


def out_dir(args, required=True):
    if args.out is None:
        if required:
            raise ValueError("--out is required")
        return None
    path = pathlib.Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_json(obj, path):
    pathlib.Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def load_entry(entry):
    """Reads an entry's audio (renamed to its audio_id) and expert segments."""
    clip = audio_core.read_wav(entry.wav)
    clip = audio_core.AudioClip(clip.samples, clip.sample_rate, entry.audio_id)
    if entry.phn is None:
        raise ValueError(f"{entry.audio_id}: no phn ground truth")
    return clip, audio_core.parse_phn(entry.phn, clip.sample_rate)


def run_entries(fn, entries, jobs, quiet, desc):
    """Applies fn to every entry in parallel; failures are logged and skipped.

    Returns ({audio_id: result}, [failed audio_ids]) in entry order.
    """

    def guarded(entry):
        try:
            return entry, fn(entry), None
        except (recognizer.RecognizerError, ValueError, OSError) as e:
            return entry, None, e

    results, failed = {}, []
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        stream = executor.map(guarded, entries)
        for entry, result, error in tqdm.tqdm(stream, total=len(entries), desc=desc, disable=quiet):
            if error is not None:
                logger.warning("Skipping %s: %s", entry.audio_id, error)
                failed.append(entry.audio_id)
            else:
                results[entry.audio_id] = result
    if failed:
        logger.warning("%d/%d entries failed", len(failed), len(entries))
    return results, failed


def partial_failure(failed, total):
    return total and len(failed) / total > config.FAIL_RATIO


def load_corpus(args):
    manifest = load_manifest(args.manifest)
    if not manifest.entries:
        raise ValueError(f"{args.manifest}: manifest has no entries")
    entries = sorted(manifest.entries, key=lambda e: e.audio_id)
    return manifest, entries


###############################################################################
# Commands
###############################################################################


class Command:
    @classmethod
    def add_arguments(cls, parser):
        raise NotImplementedError

    @classmethod
    def run(cls, args):
        raise NotImplementedError


class Explain(Command):
    name = "explain"
    help = "explain every phoneme the recognizer emits for one recording."

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("--wav", required=True, help="16-bit mono PCM recording")
        parser.add_argument("--phn", help="expert segmentation, needed by lime and lime-ws")

    @classmethod
    def run(cls, args):
        conf = resolve_config(args)
        out = out_dir(args)
        plan = perturbation.PerturbationPlan.from_config(conf)
        clip = audio_core.read_wav(args.wav)
        seg = audio_core.parse_phn(args.phn, clip.sample_rate) if args.phn else None
        if plan.needs_expert and seg is None:
            raise ValueError(f"strategy {plan.strategy} needs expert segments, pass --phn")
        spec = recognizer_spec(conf)
        explanations = explainer.explain_all(
            clip, seg, spec, plan, conf["lam"], conf["ranking"],
            alignment.Costs(*conf["costs"]), conf["jobs"],
        )
        echo = config_echo(conf)
        for e in explanations:
            record = dict(e.to_json(), config=echo)
            write_json(record, out / f"{clip.id}.{plan.strategy}.{e.position:03d}.json")
            if not args.quiet:
                top = " ".join(str(i) for i in e.ranking[:3])
                print(f"{e.position:>4} {e.phoneme:<6} {e.confidence_flag:<10} top: {top}")
        return EXIT_OK


class Evaluate(Command):
    name = "evaluate"
    help = "validity@1/3/5 of each strategy against expert ground truth."

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("manifest", help="corpus manifest JSON")
        parser.add_argument(
            "--strategies",
            type=csv_list(perturbation.strategy_name),
            default=list(perturbation.STRATEGIES),
            help="comma separated, default lime,lime-ws,lime-ts",
        )
        parser.add_argument("--group-by", dest="group_by", type=csv_list(), default=["gender"])
        parser.add_argument("--emit-csv", action="store_true", help="also write report.csv")
        parser.add_argument("--show-targets", action="store_true", help="print reference values")

    @classmethod
    def run(cls, args):
        manifest, entries = load_corpus(args)
        conf = resolve_config(args, manifest.config_layer())
        out = out_dir(args, required=False)
        spec = recognizer_spec(conf)
        costs = alignment.Costs(*conf["costs"])
        plans = [perturbation.PerturbationPlan.from_config(conf, s) for s in args.strategies]

        def evaluate_entry(entry):
            clip, expert = load_entry(entry)
            original = recognizer.transcribe(spec, clip)
            records = []
            for plan in plans:
                explanations = explainer.explain_all(
                    clip, expert, spec, plan, conf["lam"], conf["ranking"], costs, original=original
                )
                truth = evaluation.ground_truth(expert, [e.phoneme for e in explanations], costs, entry.meta)
                records += [
                    evaluation.EvalRecord(e, truth.segments[e.position], e.segmentation, truth.meta)
                    for e in explanations
                    if e.position in truth.segments
                ]
            if out:
                path = out / "explanations" / f"{entry.audio_id}.json"
                path.parent.mkdir(exist_ok=True)
                write_json([r.explanation.to_json() for r in records], path)
            return records

        results, failed = run_entries(evaluate_entry, entries, conf["jobs"], args.quiet, "evaluate")
        records = [r for e in entries for r in results.get(e.audio_id, [])]
        if not records:
            logger.error("No entry produced an explanation with ground truth")
            return EXIT_PARTIAL if failed else EXIT_INPUT
        reports = evaluation.validity_table(records, args.group_by, conf["trials"], conf["seed"])
        report = {
            "config": config_echo(conf),
            "strategies": args.strategies,
            "entries": len(entries),
            "failed": failed,
            "reports": evaluation.report_json(reports),
        }
        table = evaluation.render_table(reports, args.show_targets)
        if out:
            write_json(report, out / "report.json")
            (out / "report.txt").write_text(table + "\n")
            if args.emit_csv:
                (out / "report.csv").write_text(evaluation.report_csv(reports))
        if not args.quiet:
            print(table)
        return EXIT_PARTIAL if partial_failure(failed, len(entries)) else EXIT_OK


class Mistakes(Command):
    name = "mistakes"
    help = "most frequent transcription mistakes and the segments explaining them."

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("manifest", help="corpus manifest JSON")
        parser.add_argument("--group-by", dest="group_by", type=csv_list(), default=[])
        parser.add_argument("--top-mistakes", dest="top_mistakes", type=int, default=config.TOP_MISTAKES)
        parser.add_argument("--top-m", dest="top_m", type=int, default=config.TOP_M)
        parser.add_argument("--emit-csv", action="store_true", help="also write mistakes.csv")

    @classmethod
    def run(cls, args):
        manifest, entries = load_corpus(args)
        base = manifest.config_layer()
        base["strategy"] = perturbation.LIME_WS
        conf = resolve_config(args, base)
        out = out_dir(args, required=False)
        spec = recognizer_spec(conf)
        costs = alignment.Costs(*conf["costs"])
        plan = perturbation.PerturbationPlan.from_config(conf)
        by_id = {e.audio_id: e for e in entries}

        def transcribe_entry(entry):
            clip, expert = load_entry(entry)
            hyp = recognizer.transcribe(spec, clip)
            ref = expert.labels(config.IGNORE_LABELS)
            return ref, hyp, alignment.align(ref, hyp, costs)

        pairs, failed = run_entries(transcribe_entry, entries, conf["jobs"], args.quiet, "transcribe")
        if not pairs:
            logger.error("No entry could be transcribed")
            return EXIT_PARTIAL if failed else EXIT_INPUT

        groups = {evaluation.ALL: list(pairs)}
        for key in args.group_by:
            for value in sorted({by_id[i].meta.get(key) for i in pairs} - {None}):
                groups[value] = [i for i in pairs if by_id[i].meta.get(key) == value]

        tops = {}
        for name, ids in groups.items():
            freqs = alignment.mistake_frequencies([pairs[i][:2] for i in ids], costs)
            tops[name] = (freqs, list(freqs)[: args.top_mistakes])

        # Explain only the utterances where a top mistake has a hypothesis side
        def occurrences(key, ids):
            return [
                (i, op.hyp_index)
                for i in ids
                for op in pairs[i][2].ops
                if op.hyp_index is not None and alignment.MistakeKey.of(op) == key
            ]

        needed = sorted(
            {i for name, (_, keys) in tops.items() for key in keys for i, _ in occurrences(key, groups[name])}
        )

        def explain_entry(entry):
            clip, expert = load_entry(entry)
            hyp = pairs[entry.audio_id][1]
            return explainer.explain_all(
                clip, expert, spec, plan, conf["lam"], conf["ranking"], costs, original=hyp
            )

        explained, explain_failed = run_entries(
            explain_entry, [by_id[i] for i in needed], conf["jobs"], args.quiet, "explain"
        )

        report = {"config": config_echo(conf), "failed": failed + explain_failed, "groups": {}}
        lines = []
        for name, ids in groups.items():
            freqs, keys = tops[name]
            rows = []
            lines.append(f"{name} ({len(ids)} utterances)")
            for key in keys:
                row = dict(key.to_json(), frequency=freqs[key])
                row["positions"] = {
                    str(p): share
                    for p, share in alignment.mistake_positions([pairs[i][:2] for i in ids], key, costs).items()
                }
                chosen = [explained[i][p] for i, p in occurrences(key, ids) if i in explained]
                row["top_segments"] = [
                    {"segment": seg, "phoneme": label, "frequency": f}
                    for seg, label, f in (evaluation.top_segment_report(chosen, args.top_m) if chosen else [])
                ]
                rows.append(row)
                top = " ".join(f"{s['segment']}({s['phoneme']})" for s in row["top_segments"])
                lines.append(f"  {str(key):<12} {key.kind:<13} {freqs[key]:.2f}  {top}")
            report["groups"][name] = rows
            lines.append("")

        if "gender" in args.group_by and {"Female", "Male"} <= set(groups):
            report["wilcoxon"] = gender_test(tops["Female"], tops["Male"])
            lines.append(f"Female vs Male: {report['wilcoxon']}")

        if out:
            write_json(report, out / "mistakes.json")
            if args.emit_csv:
                rows = ["group,ref,hyp,kind,frequency"] + [
                    f"{g},{r['ref'] or ''},{r['hyp'] or ''},{r['kind']},{r['frequency']}"
                    for g, rs in report["groups"].items()
                    for r in rs
                ]
                (out / "mistakes.csv").write_text("\n".join(rows) + "\n")
        if not args.quiet:
            print("\n".join(lines))
        return EXIT_PARTIAL if partial_failure(failed, len(entries)) else EXIT_OK


def gender_test(female, male):
    """Wilcoxon over the paired frequencies of both groups' top mistakes."""
    (f_freqs, f_keys), (m_freqs, m_keys) = female, male
    keys = list(dict.fromkeys(f_keys + m_keys))
    pairs = [(f_freqs.get(k, 0.0), m_freqs.get(k, 0.0)) for k in keys]
    try:
        result = evaluation.wilcoxon_signed_rank(pairs)
    except evaluation.EvaluationError as e:
        return {"error": str(e)}
    return result._asdict()


class Synth(Command):
    name = "synth"
    help = "generate a synthetic oracle corpus with matching ground truth."

    @classmethod
    def add_arguments(cls, parser):
        parser.add_argument("--n-clips", dest="n_clips", type=int, default=10)
        parser.add_argument("--slots", type=int, default=8, help="slots per clip")
        parser.add_argument("--vocab-size", dest="vocab_size", type=int, default=5)
        parser.add_argument("--contextual", action="store_true")
        parser.add_argument("--spacing", type=int, default=1, help="labels differ from this many preceding ones")

    @classmethod
    def run(cls, args):
        manifest = synth_corpus(
            out_dir(args),
            n_clips=args.n_clips,
            slots=args.slots,
            slot_ms=args.slot_ms or config.SLOT_MS,
            vocab_size=args.vocab_size,
            contextual=args.contextual,
            seed=config.SEED if args.seed is None else args.seed,
            threshold=config.SILENCE_THRESHOLD if args.silence_threshold is None else args.silence_threshold,
            spacing=args.spacing,
        )
        if not args.quiet:
            print(f"Wrote {len(manifest.entries)} clips to {args.out}")
        return EXIT_OK


def _draw_ids(rng, slots, vocab_size, contextual, spacing=1):
    """Raw slot indices, preferring ones whose decoded labels are unique.

    Failing that, a label never repeats within spacing slots. Contextual ids
    start at 1 since a raw 0 would leave its successor unchanged, and they
    avoid labels that a slot decodes to once its predecessor is masked.
    """
    lo = 1 if contextual and vocab_size > 1 else 0
    pool = list(range(lo, vocab_size))
    ids, labels = [], []
    for j in range(slots):
        prev = ids[-1] if contextual and ids else 0
        solo = set(ids[1:]) if contextual else set()

        def unique(c):
            out = (c + prev) % vocab_size
            if out in labels or out in solo:
                return False
            return not (contextual and j > 0 and (c in labels or c == out))

        tiers = (
            [c for c in pool if unique(c)],
            [c for c in pool if (c + prev) % vocab_size not in labels[-spacing:]],
            pool,
        )
        c = int(rng.choice(next(t for t in tiers if t)))
        ids.append(c)
        labels.append((c + prev) % vocab_size)
    return ids


def synth_corpus(out, n_clips, slots, slot_ms=config.SLOT_MS, vocab_size=5, contextual=False,
                 seed=config.SEED, threshold=config.SILENCE_THRESHOLD, spacing=1):
    """Writes n_clips oracle recordings with matching .phn files and a manifest.

    Expert segments are the oracle slots. With spacing s a label never repeats
    within s slots when vocab_size allows it, so deleting up to s adjacent
    slots aligns unambiguously while longer masked runs do not.
    """
    if min(n_clips, slots, vocab_size, spacing) < 1 or slot_ms <= 0:
        raise ValueError("n_clips, slots, vocab_size, spacing and slot_ms must be positive")
    if vocab_size > len(config.VOCAB):
        raise ValueError(f"vocab_size={vocab_size} exceeds the {len(config.VOCAB)} known phonemes")
    if threshold >= recognizer.LEVEL_STEP:
        raise ValueError(f"threshold={threshold} would silence the quietest phoneme")
    out = pathlib.Path(out)
    out.mkdir(parents=True, exist_ok=True)
    kind = recognizer.SYNTHETIC_CONTEXTUAL if contextual else recognizer.SYNTHETIC_LOCAL
    spec = recognizer.RecognizerSpec(
        kind, slot_ms=slot_ms, vocab=config.VOCAB[:vocab_size], silence_threshold=threshold
    )
    size = math.floor(audio_core.SAMPLE_RATE * slot_ms / 1000 + 1e-9)
    rng = np.random.default_rng(seed)
    entries = []
    for n in range(n_clips):
        audio_id = f"synth{n:03d}"
        ids = _draw_ids(rng, slots, vocab_size, contextual, spacing)
        levels = [(i + 1) * recognizer.LEVEL_STEP for i in ids]
        clip = audio_core.AudioClip(np.repeat(levels, size), audio_core.SAMPLE_RATE, audio_id)
        labels = recognizer.transcribe(spec, clip).phonemes
        if len(labels) != slots:
            raise AssertionError(f"{audio_id}: {len(labels)} labels for {slots} slots")
        seg = audio_core.Segmentation(
            [audio_core.Segment(j, j * size, (j + 1) * size, labels[j]) for j in range(slots)],
            audio_core.EXPERT,
            audio_core.SAMPLE_RATE,
        )
        audio_core.write_wav(clip, out / f"{audio_id}.wav")
        audio_core.write_phn(seg, out / f"{audio_id}.phn")
        meta = {
            "gender": ("Female", "Male")[n % 2],
            "dialect": f"dr{n % 8 + 1}",
            "speaker_id": f"spk{n:03d}",
        }
        entries.append(ManifestEntry(audio_id, f"{audio_id}.wav", f"{audio_id}.phn", meta))
    manifest = CorpusManifest(entries, spec, perturbation.PerturbationPlan(perturbation.LIME_TS, seed=seed))
    write_manifest(manifest, out / "manifest.json")
    return load_manifest(out / "manifest.json")


###############################################################################
# Actions
###############################################################################


def build_parser():
    parser = argparse.ArgumentParser(
        prog="phonelime", description="Black-box explanations for phoneme recognizers."
    )
    parser.add_argument("--version", action="version", version=version)
    subparsers = parser.add_subparsers()
    subparsers.required = True

    for cls in Command.__subclasses__():
        sub = subparsers.add_parser(cls.name, help=cls.help)
        add_shared_arguments(sub)
        cls.add_arguments(sub)
        sub.set_defaults(func=cls.run)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)

    if args.debug:
        logging.basicConfig(level=logging.DEBUG)
    else:
        logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    start = time.time()
    try:
        code = args.func(args)
    except recognizer.RecognizerError as e:
        print(f"recognizer error: {e}", file=sys.stderr)
        return EXIT_RECOGNIZER
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    logger.info("Took %.2f seconds.", time.time() - start)
    return code
