###############################################################################
# Tunable defaults. Change these to change phonelime's behaviour
###############################################################################
import json
import pathlib

# Perturbation. The mutant counts and the window length are not fixed by
# any reference run, so they are plain knobs.
N_GLOBAL = 500
MASK_PROB = 0.5
WINDOW_K = 7
N_PER_WINDOW = 20
TS_MS = 70
SEED = 0

# Surrogate fit
LAMBDA = 1.0
RANKING = "signed"

# Recognizers. Synthetic slots are anchored at sample 0 like time segments.
SLOT_MS = 70
SILENCE_THRESHOLD = 50.0
TIMEOUT_S = 60.0

# sclite convention: substitution, deletion, insertion
COSTS = (4, 3, 3)

# Evaluation
BASELINE_TRIALS = 10000
FAIL_RATIO = 0.10
TOP_MISTAKES = 5
TOP_M = 3

# Expert labels that mark silence or pauses rather than spoken phonemes
IGNORE_LABELS = ("h#", "pau", "epi")

# TIMIT-style phone table used by the synthetic recognizers
VOCAB = (
    "aa", "iy", "sh", "d", "er", "uw", "ih", "s", "ae", "r",
    "k", "ow", "n", "t", "ey", "l", "m", "b", "g", "ah",
    "eh", "f", "z", "p", "w", "y", "v", "ch", "jh", "th",
    "dh", "hh",
)

opt_ranges = dict(
    n_global=(1, 10**6),
    mask_prob=(0.0, 1.0),
    window_k=(1, 10**4),
    n_per_window=(1, 10**5),
    ts_ms=(1, 10**4),
    lam=(0.0, 1e6),
    slot_ms=(1, 10**4),
    silence_threshold=(0.0, 32768.0),
    timeout_s=(0.001, 86400.0),
    trials=(1, 10**7),
    jobs=(1, 1024),
)

# Keys whose range is open at both ends
open_ranges = {"mask_prob"}

DEFAULTS = dict(
    strategy="lime_ts",
    n_global=N_GLOBAL,
    mask_prob=MASK_PROB,
    window_k=WINDOW_K,
    n_per_window=N_PER_WINDOW,
    ts_ms=TS_MS,
    seed=SEED,
    lam=LAMBDA,
    ranking=RANKING,
    costs=list(COSTS),
    recognizer=None,
    recognizer_cmd=None,
    vocab=None,
    slot_ms=SLOT_MS,
    silence_threshold=SILENCE_THRESHOLD,
    timeout_s=TIMEOUT_S,
    trials=BASELINE_TRIALS,
    jobs=None,
)


def load(path):
    """Reads a flat JSON config file; every key must be a known setting."""
    with open(path) as f:
        conf = json.load(f)
    if not isinstance(conf, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    unknown = sorted(set(conf) - set(DEFAULTS))
    if unknown:
        raise ValueError(f"{path}: unknown config keys {unknown}")
    return conf


def check(conf):
    for key, (lo, hi) in opt_ranges.items():
        val = conf.get(key)
        if val is None:
            continue
        if key in open_ranges:
            ok = lo < val < hi
        else:
            ok = lo <= val <= hi
        if not ok:
            raise ValueError(f"{key}={val} outside allowed range [{lo}, {hi}]")
    if conf.get("ranking") not in ("signed", "absolute"):
        raise ValueError(f"ranking={conf.get('ranking')} must be signed or absolute")
    if len(conf.get("costs") or ()) != 3:
        raise ValueError("costs must list substitution, deletion, insertion")
    return conf


def resolve(flags, config_path=None, base=None):
    """Layers built-in defaults < base (e.g. a manifest) < config file < flags.

    flags -- dict of explicitly given command-line values; None means unset
    """
    conf = dict(DEFAULTS)
    for layer in (base or {}, load(config_path) if config_path else {}):
        conf.update({k: v for k, v in layer.items() if k in DEFAULTS})
    conf.update({k: v for k, v in flags.items() if k in DEFAULTS and v is not None})
    if isinstance(conf.get("strategy"), str):
        conf["strategy"] = conf["strategy"].replace("-", "_")
    return check(conf)


def dump(conf, path):
    path = pathlib.Path(path)
    path.write_text(json.dumps(conf, indent=2, sort_keys=True) + "\n")
