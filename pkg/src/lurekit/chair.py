"""Hallucination labelling and the CHAIR metrics.

An object mention is hallucinated when its canonical label is absent from the
image's ground-truth object set. The instance-level rate divides hallucinated
unique objects by all mentioned unique objects across the corpus; the
sentence-level rate is the fraction of captions containing at least one
hallucinated object.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

from .corpus import ImageAnnotation, ObjectMention, TokenizedDescription
from .errors import CorpusError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledDescription:
    """A description with each unique mentioned object labelled hallucinated
    (True) or real (False). Repeated mentions of one object share one label."""

    description: TokenizedDescription
    mentions: tuple[ObjectMention, ...]
    labels: dict[str, bool]  # canonical -> hallucinated?

    @property
    def image_id(self) -> str:
        return self.description.image_id

    @property
    def unique_objects(self) -> list[str]:
        """Unique canonicals in order of first appearance."""
        seen: list[str] = []
        for m in self.mentions:
            if m.canonical not in seen:
                seen.append(m.canonical)
        return seen

    @property
    def hallucinated_objects(self) -> set[str]:
        return {c for c, bad in self.labels.items() if bad}

    @property
    def real_objects(self) -> set[str]:
        return {c for c, bad in self.labels.items() if not bad}

    @property
    def n_h(self) -> int:
        return len(self.hallucinated_objects)

    @property
    def n_r(self) -> int:
        return len(self.real_objects)

    @property
    def is_hallucinatory(self) -> bool:
        return self.n_h > 0

    def mention_is_hallucinated(self, mention: ObjectMention) -> bool:
        return self.labels[mention.canonical]


@dataclass(frozen=True)
class ChairReport:
    chair_i: float
    chair_s: float
    total_mentioned_objects: int
    total_hallucinated_objects: int
    total_captions: int
    captions_with_hallucination: int

    def as_dict(self) -> dict:
        return {
            "chair_i": self.chair_i,
            "chair_s": self.chair_s,
            "total_mentioned_objects": self.total_mentioned_objects,
            "total_hallucinated_objects": self.total_hallucinated_objects,
            "total_captions": self.total_captions,
            "captions_with_hallucination": self.captions_with_hallucination,
        }


def label_mentions(
    desc: TokenizedDescription,
    mentions: Sequence[ObjectMention],
    annotation: ImageAnnotation,
) -> LabeledDescription:
    """Partition the description's unique objects by ground-truth membership.

    Objects in the ground truth that are never mentioned are omissions, not
    hallucinations, and do not appear in the labels.
    """
    if desc.image_id != annotation.image_id:
        raise CorpusError(
            f"annotation image_id {annotation.image_id!r} does not match "
            f"description {desc.image_id!r}"
        )
    labels = {
        m.canonical: m.canonical not in annotation.ground_truth for m in mentions
    }
    return LabeledDescription(
        description=desc, mentions=tuple(mentions), labels=labels
    )


def chair_scores(labeled_corpus: Sequence[LabeledDescription]) -> ChairReport:
    """Aggregate instance-level and sentence-level hallucination rates."""
    if not labeled_corpus:
        raise CorpusError("cannot compute CHAIR scores on an empty corpus")
    mentioned = sum(len(d.labels) for d in labeled_corpus)
    hallucinated = sum(d.n_h for d in labeled_corpus)
    captions = len(labeled_corpus)
    bad_captions = sum(1 for d in labeled_corpus if d.is_hallucinatory)
    if mentioned == 0:
        logger.warning("corpus mentions no vocabulary objects; instance rate set to 0")
        chair_i = 0.0
    else:
        chair_i = hallucinated / mentioned
    return ChairReport(
        chair_i=chair_i,
        chair_s=bad_captions / captions,
        total_mentioned_objects=mentioned,
        total_hallucinated_objects=hallucinated,
        total_captions=captions,
        captions_with_hallucination=bad_captions,
    )
