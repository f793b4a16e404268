"""Caption corpus ingestion: tokenization, object vocabulary, mention extraction.

Captions are plain whitespace-delimited text. Images never appear as pixels;
an opaque ``image_id`` string stands in for them everywhere.
"""

from __future__ import annotations

import json
import logging
import math
import re
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .errors import CorpusError, VocabularyError

logger = logging.getLogger(__name__)

_PUNCT = set(string.punctuation)


@dataclass(frozen=True)
class Token:
    """One token of a caption. ``index`` is 1-based; ``logprob`` is the natural
    log of the token's generation probability when the producing model exported
    it, and is always <= 0."""

    surface: str
    index: int
    logprob: float | None = None
    char_start: int = -1
    char_end: int = -1

    def __post_init__(self):
        if self.index < 1:
            raise CorpusError(f"token index must be >= 1, got {self.index}")
        if self.logprob is not None:
            if not math.isfinite(self.logprob) or self.logprob > 0:
                raise CorpusError(
                    f"token logprob must be finite and <= 0, got {self.logprob!r}"
                )


@dataclass(frozen=True)
class TokenizedDescription:
    """A caption with its ordered token sequence (token count = description length)."""

    image_id: str
    raw_text: str
    tokens: tuple[Token, ...]

    def __post_init__(self):
        if not self.tokens:
            raise CorpusError(f"description {self.image_id!r} has no tokens")

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def has_logprobs(self) -> bool:
        return any(t.logprob is not None for t in self.tokens)


@dataclass(frozen=True)
class ObjectMention:
    """An occurrence of a vocabulary object inside a description.

    ``token_span`` is an inclusive 1-based (first, last) token range.
    ``uncertainty`` is the negative logprob of the span's first token, when the
    corpus carries log-probabilities; ``None`` otherwise.
    """

    canonical: str
    surface: str
    token_index: int
    token_span: tuple[int, int]
    uncertainty: float | None = None

    def __post_init__(self):
        first, last = self.token_span
        if first < 1 or last < first or self.token_index != first:
            raise CorpusError(f"invalid token span {self.token_span}")
        if self.uncertainty is not None and self.uncertainty < 0:
            raise CorpusError("mention uncertainty must be >= 0")


@dataclass(frozen=True)
class ImageAnnotation:
    """Ground-truth object labels for one image, folded to canonical form."""

    image_id: str
    ground_truth: frozenset[str]


class ObjectVocabulary:
    """Canonical object labels plus their surface synonyms.

    Lookup is case-insensitive. Multiword surfaces are stored as token
    sequences so mention extraction can match them across token boundaries.
    """

    def __init__(self, entries: dict[str, set[str]]):
        if not entries:
            raise VocabularyError("vocabulary has no entries")
        self.entries: dict[str, set[str]] = {}
        # surface token-tuple -> canonical
        self._surface_map: dict[tuple[str, ...], str] = {}
        self._max_surface_tokens = 1
        for canonical, synonyms in entries.items():
            canon = canonical.strip().lower()
            if canon in self.entries:
                raise VocabularyError(f"duplicate canonical label {canon!r}")
            surfaces = {canon} | {s.strip().lower() for s in synonyms}
            surfaces.discard("")
            self.entries[canon] = surfaces
            for surf in surfaces:
                key = tuple(t.surface for t in tokenize(surf))
                claimed = self._surface_map.get(key)
                if claimed is not None and claimed != canon:
                    raise VocabularyError(
                        f"synonym {surf!r} claimed by both {claimed!r} and {canon!r}"
                    )
                self._surface_map[key] = canon
                self._max_surface_tokens = max(self._max_surface_tokens, len(key))

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, label: str) -> bool:
        return label.strip().lower() in self.entries

    def canonical_of(self, surface: str) -> str | None:
        """Resolve a surface form (single- or multiword) to its canonical label."""
        if not surface or not surface.strip():
            return None
        key = tuple(t.surface for t in tokenize(surface.strip().lower()))
        return self._surface_map.get(key)

    def surfaces_of(self, canonical: str) -> frozenset[str]:
        return frozenset(self.entries[canonical.strip().lower()])

    def match_at(self, lowered_tokens: Sequence[str], start: int) -> tuple[str, int] | None:
        """Longest vocabulary match beginning at ``start``; returns
        (canonical, span_length) or None."""
        limit = min(self._max_surface_tokens, len(lowered_tokens) - start)
        for span in range(limit, 0, -1):
            canon = self._surface_map.get(tuple(lowered_tokens[start : start + span]))
            if canon is not None:
                return canon, span
        return None


def tokenize(text: str, keep: Sequence[str] = ()) -> list[Token]:
    """Split ``text`` on whitespace, detaching leading/trailing punctuation as
    separate tokens. Indices are 1-based; character offsets index into ``text``.

    Chunks listed in ``keep`` (e.g. a mask placeholder) are never split.
    """
    if not text.strip():
        raise CorpusError("empty description: text is blank")
    keep_set = set(keep)
    tokens: list[Token] = []
    cursor = 0
    for chunk in text.split():
        start = text.index(chunk, cursor)
        cursor = start + len(chunk)
        if chunk in keep_set:
            tokens.append(_token(len(tokens) + 1, chunk, start))
            continue
        head, core, tail = _split_punct(chunk)
        pos = start
        for ch in head:
            tokens.append(_token(len(tokens) + 1, ch, pos))
            pos += 1
        if core:
            tokens.append(_token(len(tokens) + 1, core, pos))
            pos += len(core)
        for ch in tail:
            tokens.append(_token(len(tokens) + 1, ch, pos))
            pos += 1
    return tokens


def _token(index: int, surface: str, start: int) -> Token:
    return Token(surface=surface, index=index,
                 char_start=start, char_end=start + len(surface))


def _split_punct(chunk: str) -> tuple[str, str, str]:
    """Split a chunk into (leading punctuation, core, trailing punctuation).
    Interior punctuation (don't, well-known) stays inside the core."""
    i, j = 0, len(chunk)
    while i < j and chunk[i] in _PUNCT:
        i += 1
    while j > i and chunk[j - 1] in _PUNCT:
        j -= 1
    return chunk[:i], chunk[i:j], chunk[j:]


_OPENERS = set("([{")
_CLOSERS = set(".,!?;:)]}%")


def detokenize(tokens: Sequence[Token]) -> str:
    """Rejoin token surfaces with single spaces, reattaching detached
    punctuation, yielding a whitespace-normalized equivalent of the source."""
    parts: list[str] = []
    for tok in tokens:
        s = tok.surface
        attach_left = len(s) == 1 and s in _CLOSERS
        after_opener = parts and len(parts[-1]) == 1 and parts[-1] in _OPENERS
        if parts and not attach_left and not after_opener:
            parts.append(" ")
        parts.append(s)
    return "".join(parts)


def description_from_tokens(
    image_id: str,
    raw_text: str,
    pairs: Iterable[tuple[str, float | None]],
) -> TokenizedDescription:
    """Build a description from pre-tokenized (surface, logprob) pairs,
    aligning each surface against ``raw_text`` to recover character offsets.

    Raises CorpusError when the concatenated surfaces disagree with
    ``raw_text`` (anything beyond whitespace differences).
    """
    tokens: list[Token] = []
    cursor = 0
    for surface, logprob in pairs:
        while cursor < len(raw_text) and raw_text[cursor].isspace():
            cursor += 1
        if not surface or not raw_text.startswith(surface, cursor):
            raise CorpusError(
                f"description {image_id!r}: token {surface!r} does not align "
                f"with raw text at offset {cursor}"
            )
        tokens.append(Token(surface=surface, index=len(tokens) + 1, logprob=logprob,
                            char_start=cursor, char_end=cursor + len(surface)))
        cursor += len(surface)
    if raw_text[cursor:].strip():
        raise CorpusError(
            f"description {image_id!r}: raw text has unconsumed content "
            f"after the last token: {raw_text[cursor:]!r}"
        )
    return TokenizedDescription(image_id=image_id, raw_text=raw_text, tokens=tuple(tokens))


def extract_mentions(
    desc: TokenizedDescription, vocab: ObjectVocabulary
) -> list[ObjectMention]:
    """Scan the token sequence left to right, greedily matching the longest
    vocabulary surface at each position (case-insensitive). Each token is
    consumed by at most one mention; mentions come back in appearance order.
    """
    lowered = [t.surface.lower() for t in desc.tokens]
    mentions: list[ObjectMention] = []
    i = 0
    while i < len(lowered):
        hit = vocab.match_at(lowered, i)
        if hit is None:
            i += 1
            continue
        canonical, span = hit
        first, last = desc.tokens[i], desc.tokens[i + span - 1]
        surface = desc.raw_text[first.char_start : last.char_end]
        unc = None if first.logprob is None else -first.logprob
        mentions.append(
            ObjectMention(
                canonical=canonical,
                surface=surface,
                token_index=first.index,
                token_span=(first.index, last.index),
                uncertainty=unc,
            )
        )
        i += span
    return mentions


# ---------------------------------------------------------------------------
# File loaders
# ---------------------------------------------------------------------------

def load_caption_corpus(path: str | Path) -> list[TokenizedDescription]:
    """Read a line-delimited caption file.

    Each line is a JSON record {"image_id", "text", optional "tokens":
    [{"t", "logp"}]}. Records with a ``tokens`` array are used verbatim (after
    alignment against ``text``); otherwise the text is tokenized here and no
    log-probabilities are attached.
    """
    path = Path(path)
    corpus: list[TokenizedDescription] = []
    seen: set[str] = set()
    for line_no, record in _iter_records(path):
        try:
            image_id = record["image_id"]
            text = record["text"]
        except (KeyError, TypeError) as exc:
            raise CorpusError(f"{path}:{line_no}: missing field {exc}") from exc
        if not isinstance(image_id, str) or not isinstance(text, str):
            raise CorpusError(f"{path}:{line_no}: image_id and text must be strings")
        if image_id in seen:
            raise CorpusError(f"{path}:{line_no}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        raw_tokens = record.get("tokens")
        try:
            if raw_tokens is not None:
                pairs = [(t["t"], t.get("logp")) for t in raw_tokens]
                desc = description_from_tokens(image_id, text, pairs)
            else:
                desc = TokenizedDescription(
                    image_id=image_id, raw_text=text, tokens=tuple(tokenize(text))
                )
        except (CorpusError, KeyError, TypeError) as exc:
            raise CorpusError(f"{path}:{line_no}: {exc}") from exc
        corpus.append(desc)
    if not corpus:
        logger.warning("caption file %s contains no records", path)
    return corpus


def load_annotations(
    path: str | Path, vocab: ObjectVocabulary
) -> list[ImageAnnotation]:
    """Read line-delimited {"image_id", "objects": [...]} records, folding
    every label to its canonical form via ``vocab``."""
    path = Path(path)
    annotations: list[ImageAnnotation] = []
    seen: set[str] = set()
    for line_no, record in _iter_records(path):
        try:
            image_id = record["image_id"]
            objects = record["objects"]
        except (KeyError, TypeError) as exc:
            raise CorpusError(f"{path}:{line_no}: missing field {exc}") from exc
        if image_id in seen:
            raise CorpusError(f"{path}:{line_no}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        folded: set[str] = set()
        for label in objects:
            canonical = vocab.canonical_of(label)
            if canonical is None:
                raise CorpusError(
                    f"{path}:{line_no}: unknown object label {label!r} "
                    f"(not in vocabulary)"
                )
            folded.add(canonical)
        annotations.append(
            ImageAnnotation(image_id=image_id, ground_truth=frozenset(folded))
        )
    return annotations


def load_vocabulary(path: str | Path) -> ObjectVocabulary:
    """Read a vocabulary file: one ``canonical: syn1, syn2, ...`` entry per
    line, ``#`` comments ignored. Synonym conflicts raise VocabularyError."""
    path = Path(path)
    entries: dict[str, set[str]] = {}
    claimed: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            canonical, _, rest = line.partition(":")
            canonical = canonical.strip().lower()
            if not canonical:
                raise VocabularyError(f"{path}:{line_no}: entry lacks a canonical label")
            if canonical in entries:
                raise VocabularyError(
                    f"{path}:{line_no}: duplicate canonical {canonical!r}"
                )
            synonyms = {s.strip().lower() for s in rest.split(",") if s.strip()}
            for surf in synonyms | {canonical}:
                surf_norm = re.sub(r"\s+", " ", surf)
                owner = claimed.get(surf_norm)
                if owner is not None and owner != canonical:
                    raise VocabularyError(
                        f"{path}:{line_no}: synonym {surf_norm!r} already maps to "
                        f"{owner!r}, cannot also map to {canonical!r}"
                    )
                claimed[surf_norm] = canonical
            entries[canonical] = synonyms
    if not entries:
        raise VocabularyError(f"vocabulary file {path} has no entries")
    return ObjectVocabulary(entries)


def default_vocabulary_path() -> Path:
    """Path of the bundled 80-object default vocabulary."""
    return Path(resources.files("lurekit") / "data" / "coco_vocabulary.txt")


def _iter_records(path: Path):
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            yield line_no, record
