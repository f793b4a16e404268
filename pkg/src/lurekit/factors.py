"""Hallucination-factor scores: co-occurrence, uncertainty, and position.

Per description, the co-occurrence score sums the pairwise co-occurrence
degree |S(i) ∩ S(j)| / (|S(i)| + |S(j)|) between every hallucinated object i
and every other unique object j mentioned alongside it, where S(o) is the set
of corpus descriptions mentioning o. Uncertainty is the negative log
generation probability of a mention's first token; position is the mention's
1-based token index over the description length.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .chair import LabeledDescription
from .corpus import ObjectMention, TokenizedDescription
from .errors import CorpusError, UncertaintyUnavailableError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CooccurIndex:
    """Inverted index: canonical object -> ids of descriptions mentioning it."""

    sets: Mapping[str, frozenset[str]]

    def describing(self, canonical: str) -> frozenset[str]:
        try:
            return self.sets[canonical]
        except KeyError:
            raise CorpusError(f"object {canonical!r} missing from co-occurrence index")

    def __contains__(self, canonical: str) -> bool:
        return canonical in self.sets

    def __len__(self) -> int:
        return len(self.sets)


@dataclass(frozen=True)
class Histogram:
    """Paired hallucinated/real counts over shared equal-width bins."""

    bin_edges: tuple[float, ...]
    hallucinated: tuple[int, ...]
    real: tuple[int, ...]

    def as_dict(self) -> dict:
        return {
            "bin_edges": list(self.bin_edges),
            "hallucinated": list(self.hallucinated),
            "real": list(self.real),
        }


@dataclass(frozen=True)
class RatioStats:
    """Fractions of high-scoring items that are hallucinated; None when the
    denominator is zero (undefined, deliberately never reported as 0)."""

    c_ratio: float | None
    u_ratio: float | None
    s_ratio: float | None

    def as_dict(self) -> dict:
        return {"c_ratio": self.c_ratio, "u_ratio": self.u_ratio, "s_ratio": self.s_ratio}


@dataclass(frozen=True)
class FactorReport:
    co_scores: dict[str, float]  # image_id -> score
    un_scores: tuple[tuple[str, str, int, float, bool], ...]  # (image_id, object, token_index, value, hallucinated)
    po_scores: tuple[tuple[str, str, int, float, bool], ...]
    histograms: dict[str, Histogram | None]
    ratios: RatioStats
    notices: tuple[str, ...] = ()


def build_cooccur_index(
    labeled_corpus: Sequence[LabeledDescription],
) -> CooccurIndex:
    """Build the object -> descriptions inverted index over one corpus snapshot."""
    if not labeled_corpus:
        raise CorpusError("cannot build a co-occurrence index from an empty corpus")
    sets: dict[str, set[str]] = {}
    for desc in labeled_corpus:
        for canonical in desc.labels:
            sets.setdefault(canonical, set()).add(desc.image_id)
    return CooccurIndex(sets={k: frozenset(v) for k, v in sets.items()})


def co_score(labeled_desc: LabeledDescription, index: CooccurIndex) -> float:
    """Co-occurrence score of one description (0 when nothing is hallucinated)."""
    uniques = labeled_desc.unique_objects
    total = 0.0
    for obj in uniques:
        if not labeled_desc.labels[obj]:
            continue
        s_i = index.describing(obj)
        for other in uniques:
            if other == obj:
                continue
            s_j = index.describing(other)
            total += len(s_i & s_j) / (len(s_i) + len(s_j))
    return total


def un_score(mention: ObjectMention) -> float:
    """Uncertainty score of a mention: -log p of its first token.

    Raises UncertaintyUnavailableError when the corpus carried no
    log-probability for the mention; a silent 0 would fake full confidence.
    """
    if mention.uncertainty is None:
        raise UncertaintyUnavailableError(
            f"mention {mention.canonical!r} at token {mention.token_index} "
            "has no log-probability"
        )
    return mention.uncertainty


def po_score(mention: ObjectMention, desc: TokenizedDescription) -> float:
    """Position score: first-token index over description length, in (0, 1]."""
    return mention.token_index / desc.length


def factor_distributions(
    labeled_corpus: Sequence[LabeledDescription],
    index: CooccurIndex,
    bins: int = 10,
) -> dict[str, Histogram | None]:
    """Paired hallucinated-vs-real histograms for the three factor scores.

    Co-occurrence is split per caption (a caption is hallucinatory when it
    contains at least one hallucinated object); uncertainty and position are
    split per mention. The uncertainty histogram is None when no mention in
    the corpus carries a log-probability.
    """
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    co_bad = [co_score(d, index) for d in labeled_corpus if d.is_hallucinatory]
    co_ok = [co_score(d, index) for d in labeled_corpus if not d.is_hallucinatory]

    un_bad: list[float] = []
    un_ok: list[float] = []
    po_bad: list[float] = []
    po_ok: list[float] = []
    for d in labeled_corpus:
        for m in d.mentions:
            target_po = po_bad if d.mention_is_hallucinated(m) else po_ok
            target_po.append(po_score(m, d.description))
            if m.uncertainty is not None:
                target_un = un_bad if d.mention_is_hallucinated(m) else un_ok
                target_un.append(un_score(m))

    return {
        "co_score": _paired_histogram(co_bad, co_ok, bins, "co_score"),
        "un_score": (
            _paired_histogram(un_bad, un_ok, bins, "un_score")
            if (un_bad or un_ok)
            else None
        ),
        "po_score": _paired_histogram(po_bad, po_ok, bins, "po_score"),
    }


def _paired_histogram(
    bad: Sequence[float], ok: Sequence[float], bins: int, name: str
) -> Histogram:
    values = list(bad) + list(ok)
    if not values:
        edges = np.linspace(0.0, 1.0, bins + 1)
        zero = tuple([0] * bins)
        return Histogram(bin_edges=tuple(edges.tolist()), hallucinated=zero, real=zero)
    lo, hi = min(values), max(values)
    if len(set(values)) < 2:
        logger.warning("degenerate %s histogram: fewer than 2 distinct values", name)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    bad_counts, _ = np.histogram(bad, bins=edges)
    ok_counts, _ = np.histogram(ok, bins=edges)
    return Histogram(
        bin_edges=tuple(edges.tolist()),
        hallucinated=tuple(int(c) for c in bad_counts),
        real=tuple(int(c) for c in ok_counts),
    )


def ratio_stats(
    labeled_corpus: Sequence[LabeledDescription],
    index: CooccurIndex,
    eta: float,
) -> RatioStats:
    """High-score hallucination ratios.

    c_ratio: among descriptions whose co-occurrence score is at or above the
    corpus mean, the fraction that are hallucinatory. u_ratio: among mentions
    whose uncertainty is at or above the corpus-mean uncertainty, the fraction
    that are hallucinated. s_ratio: among mentions with position score >= eta,
    the fraction that are hallucinated. Each ratio is None when no item clears
    its threshold (undefined rather than 0).
    """
    if not labeled_corpus:
        raise CorpusError("cannot compute ratio statistics on an empty corpus")

    co_values = [(d, co_score(d, index)) for d in labeled_corpus]
    co_mean = sum(v for _, v in co_values) / len(co_values)
    co_high = [(d, v) for d, v in co_values if v >= co_mean]
    c_ratio = (
        sum(1 for d, _ in co_high if d.is_hallucinatory) / len(co_high)
        if co_high
        else None
    )

    un_values: list[tuple[bool, float]] = []
    po_values: list[tuple[bool, float]] = []
    for d in labeled_corpus:
        for m in d.mentions:
            bad = d.mention_is_hallucinated(m)
            po_values.append((bad, po_score(m, d.description)))
            if m.uncertainty is not None:
                un_values.append((bad, un_score(m)))

    u_ratio = None
    if un_values:
        un_mean = sum(v for _, v in un_values) / len(un_values)
        un_high = [(bad, v) for bad, v in un_values if v >= un_mean]
        if un_high:
            u_ratio = sum(1 for bad, _ in un_high if bad) / len(un_high)

    po_high = [(bad, v) for bad, v in po_values if v >= eta]
    s_ratio = (
        sum(1 for bad, _ in po_high if bad) / len(po_high) if po_high else None
    )

    return RatioStats(c_ratio=c_ratio, u_ratio=u_ratio, s_ratio=s_ratio)


def factor_report(
    labeled_corpus: Sequence[LabeledDescription],
    index: CooccurIndex,
    bins: int = 10,
    eta: float = 0.8,
) -> FactorReport:
    """Full per-corpus factor report: raw scores, histograms, and ratios."""
    notices: list[str] = []
    co_scores = {d.image_id: co_score(d, index) for d in labeled_corpus}
    un_rows: list[tuple[str, str, int, float, bool]] = []
    po_rows: list[tuple[str, str, int, float, bool]] = []
    any_logprob = False
    for d in labeled_corpus:
        for m in d.mentions:
            bad = d.mention_is_hallucinated(m)
            po_rows.append(
                (d.image_id, m.canonical, m.token_index, po_score(m, d.description), bad)
            )
            if m.uncertainty is not None:
                any_logprob = True
                un_rows.append(
                    (d.image_id, m.canonical, m.token_index, un_score(m), bad)
                )
    if not any_logprob:
        notices.append(
            "corpus carries no token log-probabilities; uncertainty outputs omitted"
        )
    return FactorReport(
        co_scores=co_scores,
        un_scores=tuple(un_rows),
        po_scores=tuple(po_rows),
        histograms=factor_distributions(labeled_corpus, index, bins),
        ratios=ratio_stats(labeled_corpus, index, eta),
        notices=tuple(notices),
    )
