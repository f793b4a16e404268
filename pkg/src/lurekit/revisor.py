"""Bridge to an external revisor/LLM backend.

The revisor itself (a fine-tuned model in production) stays behind a small
wire protocol: POST {base_url}/v1/revise rewrites a masked caption, and POST
{base_url}/v1/complete answers free-form prompts. A deterministic mock backend
implements the same interface for offline runs and tests.

This module also builds the two prompt templates used to construct
hallucinatory training captions, and orchestrates the full training-record
pipeline (co-occurring-object round, uncertain-object collection,
hallucinatory-caption round, masking).
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import requests

from .corpus import ObjectVocabulary, TokenizedDescription, extract_mentions
from .errors import (
    BackendUnavailableError,
    LurekitError,
    ProtocolError,
    ResponseParseError,
)
from .masker import MaskPolicy, MaskRecord, mask_training_caption, unmask

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PromptTemplate:
    """A prompt body with named {slot} markers.

    Rendering is a single pass: each slot marker is substituted exactly once
    and substituted values are never rescanned, so braces inside values cannot
    be misread as further slots.
    """

    kind: str
    body: str
    slots: tuple[str, ...]

    def render(self, **values: str) -> str:
        missing = [s for s in self.slots if s not in values]
        if missing:
            raise ValueError(f"unresolved slots: {missing}")
        pattern = re.compile("|".join(re.escape("{" + s + "}") for s in self.slots))
        return pattern.sub(lambda m: values[m.group(0)[1:-1]], self.body)


COOCCUR_TEMPLATE = PromptTemplate(
    kind="cooccur_list",
    body=(
        "List three other objects that you think are most likely to appear "
        "with the objects in the scene described below:\n"
        "{description}\n"
        "Output in strict accordance with the following format:\n"
        "Object one\n"
        "Object two\n"
        "Object three"
    ),
    slots=("description",),
)

HALLUCINATION_TEMPLATE = PromptTemplate(
    kind="hallucinate_caption",
    body=(
        "Input caption: {description}\n"
        "co_objects list: {co_objects list}\n"
        "uncertain_objets list: {uncertain_objets list}\n"
        'Select one object from "co_objects list" and "uncertain_objects list" '
        'respectively and add it to "Input caption" to get "Output caption". '
        "(Try not to change the format)\n"
        "Output caption:"
    ),
    slots=("description", "co_objects list", "uncertain_objets list"),
)


def build_cooccur_prompt(description: str) -> str:
    """Render the likely-co-occurring-objects prompt for one description."""
    if not description or not description.strip():
        raise ValueError("description must be non-empty")
    return COOCCUR_TEMPLATE.render(description=description)


_NUMBERING = re.compile(r"^\s*(?:(?:object\s+)?(?:\d+|one|two|three)[\.\):]?|[-*•])\s*", re.IGNORECASE)


def parse_cooccur_response(text: str) -> list[str]:
    """Pull up to three object labels out of a completion.

    Lenient on purpose: numbering/bullets are stripped, labels are trimmed and
    lowercased, and prose lines (more than four words after stripping) are
    skipped with a warning. Raises ResponseParseError when nothing parses.
    """
    labels: list[str] = []
    for line in text.splitlines():
        stripped = _NUMBERING.sub("", line).strip().strip(".").strip()
        if not stripped:
            continue
        if len(stripped.split()) > 4:
            logger.warning("skipping prose line in object-list response: %r", line)
            continue
        labels.append(stripped.lower())
        if len(labels) == 3:
            break
    if not labels:
        raise ResponseParseError("no object labels found in response", raw_text=text)
    return labels


def build_hallucination_prompt(
    caption: str, co_objects: Sequence[str], uncertain_objects: Sequence[str]
) -> str:
    """Render the caption-rewriting prompt with both object lists embedded."""
    if not caption or not caption.strip():
        raise ValueError("caption must be non-empty")
    if not co_objects or not uncertain_objects:
        logger.warning(
            "rendering hallucination prompt with empty list(s): co=%d uncertain=%d",
            len(co_objects), len(uncertain_objects),
        )
    return HALLUCINATION_TEMPLATE.render(**{
        "description": caption,
        "co_objects list": _render_list(co_objects),
        "uncertain_objets list": _render_list(uncertain_objects),
    })


def _render_list(items: Sequence[str]) -> str:
    return "[" + ", ".join(items) + "]"


# ---------------------------------------------------------------------------
# Wire protocol
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReviseRequest:
    image_id: str
    masked_text: str
    context: str | None = None


@dataclass(frozen=True)
class ReviseResponse:
    revised_text: str
    backend_id: str


class RevisorBackend(Protocol):
    def revise(self, request: ReviseRequest) -> ReviseResponse: ...

    def complete(self, prompt: str) -> str: ...


class HttpBackend:
    """Client for a real revisor service speaking the /v1 wire protocol."""

    def __init__(self, base_url: str, timeout: float = 30.0, session=None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._session = session or requests.Session()

    def revise(self, request: ReviseRequest) -> ReviseResponse:
        body = {
            "image_id": request.image_id,
            "masked_text": request.masked_text,
            "context": request.context,
        }
        data = self._post("/v1/revise", body)
        revised = data.get("revised_text")
        if not isinstance(revised, str):
            raise ProtocolError("response lacks a string 'revised_text' field")
        return ReviseResponse(revised_text=revised, backend_id=self.base_url)

    def complete(self, prompt: str) -> str:
        data = self._post("/v1/complete", {"prompt": prompt})
        text = data.get("text")
        if not isinstance(text, str):
            raise ProtocolError("response lacks a string 'text' field")
        return text

    def _post(self, path: str, body: dict) -> dict:
        try:
            resp = self._session.post(
                self.base_url + path, json=body, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise BackendUnavailableError(f"POST {path} failed: {exc}") from exc
        if resp.status_code != 200:
            raise BackendUnavailableError(
                f"POST {path} returned HTTP {resp.status_code}"
            )
        try:
            data = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"non-JSON response from {path}") from exc
        if not isinstance(data, dict):
            raise ProtocolError(f"unexpected response shape from {path}")
        return data


class MockBackend:
    """Deterministic stand-in for the revisor service.

    `revise` replaces every placeholder with the fixed token "thing" and
    changes nothing else, so integration tests can assert structure without
    caring about semantics. `complete` answers both prompt kinds with outputs
    derived from sha256(seed, prompt): identical inputs give identical bytes,
    independent of call order, so the mock is safe under concurrency.
    """

    CANDIDATE_OBJECTS = (
        "frisbee", "bench", "tree", "leash", "grass", "ball",
        "chair", "car", "fence", "cloud",
    )

    def __init__(self, seed: int, placeholder: str = "[IDK]"):
        self.seed = seed
        self.placeholder = placeholder

    def revise(self, request: ReviseRequest) -> ReviseResponse:
        revised = request.masked_text.replace(self.placeholder, "thing")
        return ReviseResponse(revised_text=revised, backend_id="mock")

    def complete(self, prompt: str) -> str:
        digest = hashlib.sha256(f"{self.seed}\x00{prompt}".encode()).digest()
        if "Output caption:" in prompt:
            return self._hallucinate(prompt, digest)
        picks = []
        pool = list(self.CANDIDATE_OBJECTS)
        for i in range(3):
            pool_index = digest[i] % len(pool)
            picks.append(pool.pop(pool_index))
        return "\n".join(picks)

    def _hallucinate(self, prompt: str, digest: bytes) -> str:
        caption = ""
        co_items: list[str] = []
        unc_items: list[str] = []
        for line in prompt.splitlines():
            if line.startswith("Input caption:"):
                caption = line.partition(":")[2].strip()
            elif line.startswith("co_objects list:"):
                co_items = _parse_list(line.partition(":")[2])
            elif line.startswith("uncertain_objets list:"):
                unc_items = _parse_list(line.partition(":")[2])
        additions = []
        if co_items:
            additions.append(co_items[digest[4] % len(co_items)])
        if unc_items:
            additions.append(unc_items[digest[5] % len(unc_items)])
        if not additions:
            return caption
        extra = " and a ".join(additions)
        sentence = f" There is also a {extra} here."
        return caption.rstrip() + sentence


def _parse_list(raw: str) -> list[str]:
    inner = raw.strip().strip("[]")
    return [item.strip() for item in inner.split(",") if item.strip()]


# ---------------------------------------------------------------------------
# Calls with retry
# ---------------------------------------------------------------------------

def revise(
    request: ReviseRequest,
    backend: RevisorBackend,
    retries: int = 3,
    backoff: float = 0.5,
) -> ReviseResponse:
    """Call the backend's revise endpoint with retry on transport failure.

    Protocol violations are not retried (the backend answered; retrying will
    not change its mind). An empty revised_text counts as a protocol error.
    The request is never mutated; the response carries all changes.
    """
    response = _with_retries(
        lambda: backend.revise(request), retries=retries, backoff=backoff,
        what=f"revise({request.image_id})",
    )
    if not response.revised_text:
        raise ProtocolError(f"{request.image_id}: backend returned empty revised_text")
    return response


def complete(
    prompt: str,
    backend: RevisorBackend,
    retries: int = 3,
    backoff: float = 0.5,
) -> str:
    """Call the backend's completion endpoint with retry on transport failure."""
    text = _with_retries(
        lambda: backend.complete(prompt), retries=retries, backoff=backoff,
        what="complete",
    )
    if not text or not text.strip():
        raise ProtocolError("backend returned an empty completion")
    return text


def _with_retries(call: Callable, retries: int, backoff: float, what: str):
    attempts = retries + 1
    for attempt in range(attempts):
        started = time.time()
        try:
            result = call()
            logger.info("%s succeeded in %.3fs (attempt %d)", what, time.time() - started, attempt + 1)
            return result
        except BackendUnavailableError as exc:
            logger.warning("%s attempt %d/%d failed: %s", what, attempt + 1, attempts, exc)
            if attempt + 1 == attempts:
                raise BackendUnavailableError(
                    f"{what}: backend unavailable after {attempts} attempt(s)"
                ) from exc
            time.sleep(backoff * (2 ** attempt))


# ---------------------------------------------------------------------------
# Training-record construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingRecord:
    """One revisor training example: the artificially hallucinatory caption,
    its masked form (reversible via mask_records), and the clean target."""

    image_id: str
    hallucinatory_caption: str
    masked_caption: str
    target_caption: str
    mask_records: tuple[MaskRecord, ...] = field(default_factory=tuple)
    placeholder: str = "[IDK]"

    def as_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "hallucinatory_caption": self.hallucinatory_caption,
            "masked_caption": self.masked_caption,
            "target_caption": self.target_caption,
            "mask_records": [r.as_dict() for r in self.mask_records],
            "placeholder": self.placeholder,
        }


def build_training_records(
    ground_truth_captions: Sequence[tuple[str, str]],
    generated_corpus: Sequence[TokenizedDescription],
    vocab: ObjectVocabulary,
    policy: MaskPolicy,
    backend: RevisorBackend,
    retries: int = 3,
    backoff: float = 0.5,
    max_in_flight: int = 1,
) -> list[TrainingRecord]:
    """Run the full training-data pipeline over (image_id, caption) pairs.

    Per image: (1) ask the backend which objects likely co-occur with the
    ground-truth caption's scene; (2) collect objects of the generated
    description whose uncertainty is >= policy.gamma; (3) ask the backend to
    weave one object from each list into the caption; (4) mask the resulting
    caption against the generated description.

    A failing image (parse error, protocol error, exhausted retries, missing
    generated description) is skipped and logged; the run aborts when more
    than half the images are skipped. Backend calls may run concurrently up
    to ``max_in_flight``; results keep input order either way.
    """
    generated = {d.image_id: d for d in generated_corpus}

    def one(item: tuple[str, str]) -> TrainingRecord | None:
        image_id, target_caption = item
        try:
            gen_desc = generated.get(image_id)
            if gen_desc is None:
                raise LurekitError(f"no generated description for image {image_id!r}")
            co_objects = parse_cooccur_response(
                complete(build_cooccur_prompt(target_caption), backend,
                         retries=retries, backoff=backoff)
            )
            uncertain: list[str] = []
            for m in extract_mentions(gen_desc, vocab):
                if (
                    m.uncertainty is not None
                    and m.uncertainty >= policy.gamma
                    and m.canonical not in uncertain
                ):
                    uncertain.append(m.canonical)
            raw = complete(
                build_hallucination_prompt(target_caption, co_objects, uncertain),
                backend, retries=retries, backoff=backoff,
            )
            hallucinatory = _extract_caption(raw)
            masked = mask_training_caption(hallucinatory, gen_desc, vocab, policy)
            assert unmask(masked) == hallucinatory
            return TrainingRecord(
                image_id=image_id,
                hallucinatory_caption=hallucinatory,
                masked_caption=masked.masked_text,
                target_caption=target_caption,
                mask_records=masked.records,
                placeholder=masked.placeholder,
            )
        except LurekitError as exc:
            logger.warning("skipping image %r: %s", image_id, exc)
            return None

    if max_in_flight > 1:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            results = list(pool.map(one, ground_truth_captions))
    else:
        results = [one(item) for item in ground_truth_captions]

    records = [r for r in results if r is not None]
    skipped = len(results) - len(records)
    if results and skipped * 2 > len(results):
        raise LurekitError(
            f"{skipped}/{len(results)} images failed; aborting "
            "(more than half the prompt rounds were unusable)"
        )
    return records


def _extract_caption(completion: str) -> str:
    """Take the rewritten caption out of a completion, tolerating an echoed
    'Output caption:' prefix."""
    text = completion.strip()
    marker = "Output caption:"
    if marker in text:
        text = text.split(marker, 1)[1].strip()
    return text
