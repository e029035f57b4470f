"""Overlap band filtering and max-min diversity selection.

Candidates first pass a Jaccard band against the positive graph: too much
overlap means the negative is barely wrong, too little means it no longer
looks like the same scene.  Survivors are then reduced to the most mutually
distant subset of rationale embeddings (the p-dispersion objective).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, replace as dc_replace
from fractions import Fraction
from typing import Sequence

from .embed import Embedding, distance_matrix
from .errors import ConfigError
from .perturb import NegativeCandidate
from .scene_graph import SceneGraph, jaccard_counts, jaccard_overlap

logger = logging.getLogger(__name__)

# symmetric widening applied per relaxation step when the band starves
_RELAX_STEP = 0.05


@dataclass(frozen=True)
class SelectionConfig:
    """Overlap band, target count, and search/shortfall policy."""

    gamma_lower: float = 0.3
    gamma_upper: float = 0.7
    m: int = 3
    exact_threshold: int = 15
    on_shortfall: str = "emit-fewer"  # or "relax-bounds"
    keep_predicate_only: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma_lower <= self.gamma_upper <= 1.0:
            raise ConfigError(
                f"overlap band [{self.gamma_lower}, {self.gamma_upper}] is not ordered within [0, 1]"
            )
        if self.m < 1:
            raise ConfigError("m must be at least 1")
        if self.exact_threshold < 1:
            raise ConfigError("exact_threshold must be at least 1")
        if self.on_shortfall not in ("emit-fewer", "relax-bounds"):
            raise ConfigError(f"unknown shortfall policy {self.on_shortfall!r}")


def _band_fraction(bound: float) -> Fraction:
    # interpret the bound as the decimal its shortest repr denotes, so that
    # J exactly equal to a decimal bound compares as inside the band
    return Fraction(str(bound))


def filter_by_overlap(
    candidates: Sequence[NegativeCandidate],
    sg_pos: SceneGraph,
    cfg: SelectionConfig = SelectionConfig(),
) -> list[int]:
    """Indices of candidates whose overlap lies inside the inclusive band.

    Comparisons run on the exact rational Jaccard value, so boundary hits are
    retained without floating-point drift.  Also annotates each candidate's
    ``jaccard`` field.  Predicate-only candidates sit at J = 1.0 and are kept
    regardless of the upper bound when ``keep_predicate_only`` is set.
    """
    lo = _band_fraction(cfg.gamma_lower)
    hi = _band_fraction(cfg.gamma_upper)
    kept = []
    for idx, cand in enumerate(candidates):
        cand.jaccard = jaccard_overlap(cand.graph, sg_pos)
        inter, union = jaccard_counts(cand.graph, sg_pos)
        value = Fraction(1) if union == 0 else Fraction(inter, union)
        if cfg.keep_predicate_only and cand.trace.predicate_only:
            kept.append(idx)
        elif lo <= value <= hi:
            kept.append(idx)
    return kept


def filter_with_shortfall(
    candidates: Sequence[NegativeCandidate],
    sg_pos: SceneGraph,
    cfg: SelectionConfig = SelectionConfig(),
) -> tuple[list[int], SelectionConfig, int]:
    """Band filter plus the configured shortfall policy.

    Under ``relax-bounds`` the band widens by 0.05 on both sides until at
    least ``m`` candidates survive or the band covers [0, 1].  Returns the
    retained indices, the bounds actually used, and the relaxation step count.
    """
    kept = filter_by_overlap(candidates, sg_pos, cfg)
    steps = 0
    current = cfg
    if cfg.on_shortfall == "relax-bounds":
        while len(kept) < cfg.m and (current.gamma_lower > 0.0 or current.gamma_upper < 1.0):
            current = dc_replace(
                current,
                gamma_lower=max(0.0, round(current.gamma_lower - _RELAX_STEP, 10)),
                gamma_upper=min(1.0, round(current.gamma_upper + _RELAX_STEP, 10)),
            )
            steps += 1
            kept = filter_by_overlap(candidates, sg_pos, current)
        if steps:
            logger.info(
                "relaxed overlap band %d step(s) to [%g, %g]; %d candidate(s) retained",
                steps,
                current.gamma_lower,
                current.gamma_upper,
                len(kept),
            )
    if len(kept) < cfg.m:
        logger.warning("shortfall: %d candidate(s) inside the band, wanted %d", len(kept), cfg.m)
    return kept, current, steps


def _exact_max_min(dist, n: int, m: int) -> list[int]:
    best_subset: tuple[int, ...] | None = None
    best_score = -1.0
    for subset in itertools.combinations(range(n), m):
        score = min(dist[i][j] for i, j in itertools.combinations(subset, 2))
        # strict improvement keeps the lexicographically smallest tie winner,
        # because combinations() enumerates subsets in lexicographic order
        if score > best_score:
            best_score = score
            best_subset = subset
    assert best_subset is not None
    return list(best_subset)


def _greedy_max_min(dist, n: int, m: int) -> list[int]:
    # seed with the globally farthest pair, smallest indices on ties
    best_pair = (0, 1)
    best_d = -1.0
    for i in range(n):
        for j in range(i + 1, n):
            if dist[i][j] > best_d:
                best_d = dist[i][j]
                best_pair = (i, j)
    selected = [best_pair[0], best_pair[1]]
    chosen = set(selected)
    while len(selected) < m:
        best_idx = -1
        best_score = -1.0
        for idx in range(n):
            if idx in chosen:
                continue
            score = min(dist[idx][s] for s in selected)
            if score > best_score:
                best_score = score
                best_idx = idx
        selected.append(best_idx)
        chosen.add(best_idx)
    return sorted(selected)


def select_diverse(
    embeddings: Sequence[Embedding],
    m: int,
    cfg: SelectionConfig = SelectionConfig(),
) -> list[int]:
    """Pick ``m`` indices maximizing the minimal pairwise distance.

    Small inputs (up to ``cfg.exact_threshold``) are solved exactly by subset
    enumeration with lexicographic tie-breaking; larger inputs fall back to
    greedy farthest-point insertion seeded with the farthest pair.  Indices
    come back in ascending order.
    """
    n = len(embeddings)
    if m < 1:
        raise ConfigError("m must be at least 1")
    if n <= m:
        return list(range(n))
    if m == 1:
        # every singleton has an empty pairwise set; lexicographic tie-break
        return [0]
    dist = distance_matrix(embeddings)
    if n <= cfg.exact_threshold:
        return _exact_max_min(dist, n, m)
    return _greedy_max_min(dist, n, m)
