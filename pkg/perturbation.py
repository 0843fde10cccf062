###############################################################################
# Mutant generation: global random masking (LIME) and sliding-window masking
# over expert segments (LIME-WS) or fixed-duration time segments (LIME-TS)
###############################################################################
import logging
from collections import namedtuple

import numpy as np

import audio_core
import config

logger = logging.getLogger(__name__)

LIME, LIME_WS, LIME_TS = "lime", "lime_ws", "lime_ts"
STRATEGIES = (LIME, LIME_WS, LIME_TS)


def strategy_name(name):
    """Accepts both the command-line spelling (lime-ws) and lime_ws."""
    name = name.replace("-", "_").lower()
    if name not in STRATEGIES:
        raise ValueError(f"unknown strategy {name!r}, expected one of {STRATEGIES}")
    return name


class PerturbationPlan(
    namedtuple(
        "PerturbationPlan",
        "strategy n_global mask_prob window_k n_per_window ts_duration_ms seed",
        defaults=(
            config.N_GLOBAL,
            config.MASK_PROB,
            config.WINDOW_K,
            config.N_PER_WINDOW,
            config.TS_MS,
            config.SEED,
        ),
    )
):
    """How mutants are drawn
    strategy -- lime, lime_ws or lime_ts
    n_global, mask_prob -- mutant count and per-segment masking rate (lime)
    window_k, n_per_window -- window length in segments and mutants per
        window position (lime_ws, lime_ts)
    ts_duration_ms -- time segment duration (lime_ts)
    seed -- seeds the single generator all masks come from
    """

    def check(self):
        strategy_name(self.strategy)
        if self.window_k < 1 or self.n_per_window < 1 or self.n_global < 1:
            raise ValueError("window_k, n_per_window and n_global must be at least 1")
        if not 0 < self.mask_prob < 1:
            raise ValueError(f"mask_prob={self.mask_prob} must lie strictly between 0 and 1")
        if self.ts_duration_ms <= 0:
            raise ValueError(f"ts_duration_ms={self.ts_duration_ms} must be positive")
        return self

    @property
    def needs_expert(self):
        return self.strategy in (LIME, LIME_WS)

    def to_json(self):
        return self._asdict()

    @classmethod
    def from_json(cls, obj):
        obj = dict(obj)
        obj["strategy"] = strategy_name(obj["strategy"])
        return cls(**obj)

    @classmethod
    def from_config(cls, conf, strategy=None):
        return cls(
            strategy=strategy_name(strategy or conf["strategy"]),
            n_global=conf["n_global"],
            mask_prob=conf["mask_prob"],
            window_k=conf["window_k"],
            n_per_window=conf["n_per_window"],
            ts_duration_ms=conf["ts_ms"],
            seed=conf["seed"],
        ).check()


# m_i of the surrogate fit: a mask row, its closeness weight and f^p(m_i)
Mutant = namedtuple("Mutant", "mask weight label")


def _generator(plan, rng):
    return rng if rng is not None else np.random.default_rng(plan.seed)


def sample_lime(plan, d, rng=None):
    """n_global masks, each bit masked with probability mask_prob.

    Rows are MaskVectors (1 = segment kept). The all-ones row is redrawn.
    """
    if d < 1:
        raise ValueError("cannot perturb a clip with no segments")
    if plan.n_global < d:
        logger.warning("n_global=%d is below the segment count %d", plan.n_global, d)
    rng = _generator(plan, rng)
    masks = np.empty((plan.n_global, d), dtype=np.uint8)
    filled = 0
    while filled < plan.n_global:
        bits = (rng.random(d) >= plan.mask_prob).astype(np.uint8)
        if bits.all():
            continue
        masks[filled] = bits
        filled += 1
    return masks


def window_starts(plan, d):
    # Inclusive final window: d - window_k + 1 positions, at least one
    return range(max(d - plan.window_k, 0) + 1)


def sample_ws(plan, d, rng=None):
    """n_per_window masks per window position, masking only inside the window."""
    if d < 1:
        raise ValueError("cannot perturb a clip with no segments")
    rng = _generator(plan, rng)
    starts = window_starts(plan, d)
    masks = np.ones((len(starts) * plan.n_per_window, d), dtype=np.uint8)
    row = 0
    for s in starts:
        span = min(s + plan.window_k, d) - s
        for _ in range(plan.n_per_window):
            m = rng.integers(1, span + 1)
            masks[row, s + rng.choice(span, size=m, replace=False)] = 0
            row += 1
    return masks


def sample_ts(plan, clip, rng=None):
    seg = audio_core.time_segmentation(clip, plan.ts_duration_ms)
    return seg, sample_ws(plan, seg.d, rng)


def sample(plan, clip, seg=None):
    """Draws the masks for plan.strategy; returns (segmentation, masks)."""
    plan.check()
    if plan.strategy == LIME_TS:
        seg, masks = sample_ts(plan, clip)
    elif seg is None or seg.kind != audio_core.EXPERT:
        raise ValueError(f"strategy {plan.strategy} needs an expert segmentation")
    elif plan.strategy == LIME:
        masks = sample_lime(plan, seg.d)
    else:
        masks = sample_ws(plan, seg.d)
    constant = constant_columns(masks)
    if seg.d >= 2 and constant:
        logger.warning("%s: segments %s are never varied by the %s masks", clip.id, constant, plan.strategy)
    return seg, masks


def constant_columns(masks):
    masks = np.asarray(masks)
    return [int(j) for j in np.flatnonzero((masks == masks[:1]).all(axis=0))]


def realize(clip, seg, mask):
    mask = np.asarray(mask)
    if len(mask) != seg.d:
        raise ValueError(f"mask of length {len(mask)} for {seg.d} segments")
    return audio_core.mask_segments(clip, seg, np.flatnonzero(mask == 0))
