"""Placeholder masking of uncertain and late-position object mentions.

Two entry points mirror the two pipelines: `select_mask_targets` + `apply_mask`
mask a generated description in place (inference-side), while
`mask_training_caption` masks a separately written caption wherever it mentions
an object that the generated description flagged as uncertain or late
(training-data construction). Masks are reversible via the stored records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

from .corpus import (
    ObjectMention,
    ObjectVocabulary,
    TokenizedDescription,
    extract_mentions,
    tokenize,
)
from .errors import CorpusError, MaskCorruptionError

Reason = Literal["uncertainty", "position", "both"]


@dataclass(frozen=True)
class MaskPolicy:
    """Masking thresholds.

    A mention is masked when its uncertainty score is >= ``gamma`` or its
    1-based token index is >= ``eta`` times the reference length (both
    comparisons inclusive). ``position_length_source`` picks which text
    provides that reference length during training-caption masking: the
    caption being masked, or the generated description.
    """

    gamma: float = 1.0
    eta: float = 0.8
    placeholder: str = "[IDK]"
    position_length_source: Literal["caption", "generated"] = "caption"

    def __post_init__(self):
        if not math.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")
        if not (self.eta > 0) or math.isinf(self.eta):
            raise ValueError(f"eta must be a positive finite real, got {self.eta}")
        if not self.placeholder or self.placeholder != self.placeholder.strip():
            raise ValueError("placeholder must be a non-empty token without edge whitespace")
        if self.position_length_source not in ("caption", "generated"):
            raise ValueError(
                f"position_length_source must be 'caption' or 'generated', "
                f"got {self.position_length_source!r}"
            )


@dataclass(frozen=True)
class MaskDecision:
    mention: ObjectMention
    reason: Reason


@dataclass(frozen=True)
class MaskRecord:
    """Enough to undo one replacement: the original surface, where it sat."""

    surface: str
    token_span: tuple[int, int]
    reason: Reason

    def as_dict(self) -> dict:
        return {
            "surface": self.surface,
            "token_span": list(self.token_span),
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MaskRecord":
        return cls(
            surface=data["surface"],
            token_span=(data["token_span"][0], data["token_span"][1]),
            reason=data["reason"],
        )


@dataclass(frozen=True)
class MaskedDescription:
    image_id: str
    masked_text: str
    records: tuple[MaskRecord, ...]
    placeholder: str = "[IDK]"

    def __post_init__(self):
        if self.masked_text.count(self.placeholder) != len(self.records):
            raise MaskCorruptionError(
                f"{self.image_id}: masked text holds "
                f"{self.masked_text.count(self.placeholder)} placeholder(s) but "
                f"{len(self.records)} record(s)"
            )


def select_mask_targets(
    desc: TokenizedDescription,
    mentions: Sequence[ObjectMention],
    policy: MaskPolicy,
) -> list[MaskDecision]:
    """Pick the mentions to mask inside their own description.

    Mentions without a log-probability can only be picked by the position
    rule; the length reference is always the description's own token count.
    """
    decisions: list[MaskDecision] = []
    for mention in mentions:
        reason = _qualify(
            mention.uncertainty, mention.token_index, desc.length, policy
        )
        if reason is not None:
            decisions.append(MaskDecision(mention=mention, reason=reason))
    return decisions


def _qualify(
    uncertainty: float | None, token_index: int, length: int, policy: MaskPolicy
) -> Reason | None:
    by_unc = uncertainty is not None and uncertainty >= policy.gamma
    by_pos = token_index >= policy.eta * length
    if by_unc and by_pos:
        return "both"
    if by_unc:
        return "uncertainty"
    if by_pos:
        return "position"
    return None


def apply_mask(
    desc: TokenizedDescription,
    decisions: Sequence[MaskDecision],
    placeholder: str = "[IDK]",
) -> MaskedDescription:
    """Replace each decided span with the placeholder.

    Text outside the spans is copied byte for byte, so `unmask` restores the
    original exactly. Overlapping or out-of-range spans are rejected.
    """
    if placeholder in desc.raw_text:
        raise MaskCorruptionError(
            f"{desc.image_id}: text already contains the placeholder {placeholder!r}"
        )
    ordered = sorted(decisions, key=lambda d: d.mention.token_span)
    last_end = 0
    pieces: list[str] = []
    records: list[MaskRecord] = []
    prev_span_end = 0
    for decision in ordered:
        first, last = decision.mention.token_span
        if first < 1 or last > desc.length:
            raise MaskCorruptionError(
                f"{desc.image_id}: span {decision.mention.token_span} outside "
                f"description of length {desc.length}"
            )
        if first <= prev_span_end:
            raise MaskCorruptionError(
                f"{desc.image_id}: overlapping mask spans at token {first}"
            )
        prev_span_end = last
        start = desc.tokens[first - 1].char_start
        end = desc.tokens[last - 1].char_end
        pieces.append(desc.raw_text[last_end:start])
        pieces.append(placeholder)
        last_end = end
        records.append(
            MaskRecord(
                surface=desc.raw_text[start:end],
                token_span=(first, last),
                reason=decision.reason,
            )
        )
    pieces.append(desc.raw_text[last_end:])
    return MaskedDescription(
        image_id=desc.image_id,
        masked_text="".join(pieces),
        records=tuple(records),
        placeholder=placeholder,
    )


def unmask(masked: MaskedDescription) -> str:
    """Restore the original text from a masked description.

    Raises MaskCorruptionError when the placeholder count no longer matches
    the records (e.g. the masked text was edited)."""
    parts = masked.masked_text.split(masked.placeholder)
    if len(parts) != len(masked.records) + 1:
        raise MaskCorruptionError(
            f"{masked.image_id}: {len(parts) - 1} placeholder(s) in text, "
            f"{len(masked.records)} record(s)"
        )
    out: list[str] = []
    for piece, record in zip(parts, masked.records):
        out.append(piece)
        out.append(record.surface)
    out.append(parts[-1])
    return "".join(out)


def mask_training_caption(
    hallucinatory_caption: str,
    generated_desc: TokenizedDescription,
    vocab: ObjectVocabulary,
    policy: MaskPolicy,
) -> MaskedDescription:
    """Mask a separately written caption against a generated description.

    Every unique object of the generated description is tested against the
    uncertainty and position thresholds (uncertainty and index taken from its
    first mention, the generation decision). Each qualifying object has every
    string-matched occurrence of itself or a synonym in the caption replaced
    by the placeholder. Objects that qualify but never occur in the caption
    change nothing.

    The position rule compares the generated-description index against
    ``eta * length``, with the length taken from the caption or from the
    generated description per ``policy.position_length_source``.
    """
    if not hallucinatory_caption or not hallucinatory_caption.strip():
        raise CorpusError("cannot mask an empty caption")
    caption_desc = TokenizedDescription(
        image_id=generated_desc.image_id,
        raw_text=hallucinatory_caption,
        tokens=tuple(tokenize(hallucinatory_caption, keep=(policy.placeholder,))),
    )
    if policy.position_length_source == "caption":
        length = caption_desc.length
    else:
        length = generated_desc.length

    qualified: dict[str, Reason] = {}
    for mention in extract_mentions(generated_desc, vocab):
        if mention.canonical in qualified:
            continue  # first mention defines the object's index and uncertainty
        reason = _qualify(mention.uncertainty, mention.token_index, length, policy)
        if reason is not None:
            qualified[mention.canonical] = reason

    decisions = [
        MaskDecision(mention=m, reason=qualified[m.canonical])
        for m in extract_mentions(caption_desc, vocab)
        if m.canonical in qualified
    ]
    return apply_mask(caption_desc, decisions, placeholder=policy.placeholder)
