"""Detect award/article linkage in a PAR-like repository from response sizes.

A search for ``term:<award>/identifier:<doi>`` returns the bare page frame
when the pair is not linked and the frame plus a rendered result when it
is, so the two populations of body lengths are separated by a wide gap.
Classification is a step function of the decompressed body length.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
from collections import Counter
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import CheckpointCorrupt, GrilinkError, InvalidInput, ParseError, TransportError
from .identifiers import is_normalized_doi, validate_award_id
from .transport import Transport, encode_value

log = logging.getLogger(__name__)

DEFAULT_MIN_GAP = 10_000
MIN_CALIBRATION_SAMPLES = 100
AMBIGUOUS_WARNING_FRACTION = 0.05

SIMPLE_SEARCH_PATH = "/search/term:{award_id}"
ADVANCED_AWARD_PATH = "/search/award_ids:{award_id}"

_RESULTS_MARKER = re.compile(rb'id="search-results"')
_RESULT_ITEM = re.compile(rb'<li class="search-result"')


class Classification(str, Enum):
    LINKED = "Linked"
    NOT_LINKED = "NotLinked"
    AMBIGUOUS = "Ambiguous"
    FAILED = "Failed"


class Provenance(str, Enum):
    BUILTIN_DEFAULT = "PaperDefault"
    CALIBRATED = "Calibrated"


class SearchMode(str, Enum):
    SIMPLE = "SimpleSearch"
    ADVANCED_AWARD_FIELD = "AdvancedAwardField"


@dataclass(frozen=True)
class ThresholdConfig:
    not_linked_max: int
    linked_min: int
    provenance: Provenance = Provenance.CALIBRATED

    def __post_init__(self):
        if not self.not_linked_max < self.linked_min:
            raise ValueError("not_linked_max must be below linked_min")

    def classify(self, length: int) -> Classification:
        if length <= self.not_linked_max:
            return Classification.NOT_LINKED
        if length >= self.linked_min:
            return Classification.LINKED
        return Classification.AMBIGUOUS

    def to_dict(self) -> dict:
        return {
            "not_linked_max": self.not_linked_max,
            "linked_min": self.linked_min,
            "provenance": self.provenance.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ThresholdConfig":
        return cls(
            int(data["not_linked_max"]),
            int(data["linked_min"]),
            Provenance(data.get("provenance", Provenance.CALIBRATED.value)),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ThresholdConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# Observed bands: unlinked pages 225,500-226,000 bytes, linked 269,500-274,500.
DEFAULT_THRESHOLDS = ThresholdConfig(226_000, 269_500, Provenance.BUILTIN_DEFAULT)


@dataclass(frozen=True)
class ProbeResult:
    award_id: str
    doi: str
    response_length: int
    classification: Classification
    fetched_at: datetime

    @property
    def key(self) -> tuple[str, str]:
        return (self.award_id, self.doi)

    def to_dict(self) -> dict:
        return {
            "award_id": self.award_id,
            "doi": self.doi,
            "response_length": self.response_length,
            "classification": self.classification.value,
            "fetched_at": self.fetched_at.isoformat(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProbeResult":
        result = cls(
            award_id=str(data["award_id"]),
            doi=str(data["doi"]),
            response_length=int(data["response_length"]),
            classification=Classification(data["classification"]),
            fetched_at=datetime.fromisoformat(data["fetched_at"]),
        )
        if not validate_award_id(result.award_id) or result.response_length < 0:
            raise ValueError("invalid probe result")
        return result


def _utcnow() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def build_probe_url(base: str, award_id: str, doi: str) -> str:
    """``<base>/search/term:<award>/identifier:<doi>`` with the DOI fully percent-encoded.

    The DOI's own slash is encoded because the path uses ``/`` as a separator.
    """
    if not validate_award_id(award_id):
        raise InvalidInput(f"award ID must be seven digits: {award_id!r}")
    if not is_normalized_doi(doi):
        raise InvalidInput(f"DOI is not normalized: {doi!r}")
    return f"{base.rstrip('/')}/search/term:{award_id}/identifier:{encode_value(doi)}"


def _pair_key(pair) -> tuple[str, str]:
    if hasattr(pair, "award_id"):
        return (pair.award_id, pair.doi)
    award_id, doi = pair
    return (award_id, doi)


def execute_probe(
    pair,
    transport: Transport,
    thresholds: ThresholdConfig = DEFAULT_THRESHOLDS,
    *,
    base_url: str,
    clock: Callable[[], datetime] = _utcnow,
) -> ProbeResult:
    """Probe one (award, DOI) pair. Never raises for network trouble: that is ``Failed``."""
    award_id, doi = _pair_key(pair)
    url = build_probe_url(base_url, award_id, doi)
    try:
        response = transport.get(url)
    except (TransportError, GrilinkError, OSError) as exc:
        log.debug("probe failed for %s %s: %s", award_id, doi, exc)
        return ProbeResult(award_id, doi, 0, Classification.FAILED, clock())
    if response.status != 200:
        return ProbeResult(award_id, doi, 0, Classification.FAILED, clock())
    length = len(response.body)
    return ProbeResult(award_id, doi, length, thresholds.classify(length), clock())


def reclassify(result: ProbeResult, thresholds: ThresholdConfig) -> ProbeResult:
    if result.classification is Classification.FAILED:
        return result
    return replace(result, classification=thresholds.classify(result.response_length))


def calibrate_thresholds(
    lengths: Iterable[int],
    *,
    min_gap: int = DEFAULT_MIN_GAP,
    min_samples: int = MIN_CALIBRATION_SAMPLES,
    guard: float = 0.25,
) -> ThresholdConfig:
    """Place thresholds in the widest empty interval between observed lengths.

    The interval must be at least ``min_gap`` bytes wide. Both thresholds
    are pulled inward from the interval edges by ``guard`` times its width
    so they lie strictly inside it. Falls back to the built-in defaults with
    fewer than ``min_samples`` observations or when no gap qualifies.
    """
    values = list(lengths)
    if len(values) < min_samples:
        return DEFAULT_THRESHOLDS
    distinct = sorted(set(values))
    best = None
    for lower, upper in zip(distinct, distinct[1:]):
        width = upper - lower
        if width >= min_gap and width >= 3 and (best is None or width > best[1] - best[0]):
            best = (lower, upper)
    if best is None:
        return DEFAULT_THRESHOLDS
    lower, upper = best
    margin = max(1, int((upper - lower) * guard))
    margin = min(margin, (upper - lower - 1) // 2)
    return ThresholdConfig(lower + margin, upper - margin, Provenance.CALIBRATED)


class CheckpointStore:
    """Append-only JSON Lines log of completed probes.

    A final line without its newline is a write cut short by a kill; it is
    dropped (and trimmed from the file) on load. Any other unreadable line
    makes the store refuse to load.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._lock = threading.Lock()

    def load(self) -> dict[tuple[str, str], ProbeResult]:
        if not self.path.exists():
            return {}
        data = self.path.read_bytes()
        complete_upto = data.rfind(b"\n") + 1
        if complete_upto < len(data):
            log.warning("checkpoint %s ends in a partial line; discarding it", self.path)
            with open(self.path, "r+b") as fh:
                fh.truncate(complete_upto)
            data = data[:complete_upto]
        done = {}
        for lineno, line in enumerate(data.splitlines(), 1):
            if not line.strip():
                continue
            try:
                result = ProbeResult.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise CheckpointCorrupt(f"{self.path}:{lineno}: {exc}") from exc
            done[result.key] = result
        return done

    def append(self, result: ProbeResult) -> None:
        line = json.dumps(result.to_dict(), sort_keys=True) + "\n"
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()


def probe_batch(
    pairs: Iterable,
    transport: Transport,
    thresholds: ThresholdConfig = DEFAULT_THRESHOLDS,
    checkpoint: CheckpointStore | None = None,
    *,
    base_url: str,
    concurrency: int = 4,
    clock: Callable[[], datetime] = _utcnow,
) -> list[ProbeResult]:
    """Probe every distinct (award, DOI) pair once, resuming from ``checkpoint``.

    Pairs already in the checkpoint are not requested again; their stored
    lengths are reclassified against ``thresholds``. Failed probes are
    returned but not checkpointed, so a rerun retries them.
    """
    keys = sorted({_pair_key(p) for p in pairs})
    done = checkpoint.load() if checkpoint is not None else {}
    results: dict[tuple[str, str], ProbeResult] = {}
    for key in keys:
        previous = done.get(key)
        if previous is not None and previous.classification is not Classification.FAILED:
            results[key] = reclassify(previous, thresholds)
    todo = [k for k in keys if k not in results]
    if done:
        log.info("resuming: %d of %d pairs already probed", len(results), len(keys))

    def work(key):
        return execute_probe(key, transport, thresholds, base_url=base_url, clock=clock)

    executor = ThreadPoolExecutor(max_workers=max(1, concurrency))
    try:
        pending = set()
        queue = iter(todo)
        for key in queue:
            pending.add(executor.submit(work, key))
            if len(pending) >= 4 * max(1, concurrency):
                break
        while pending:
            finished, pending = wait(pending, return_when=FIRST_COMPLETED)
            for fut in finished:
                result = fut.result()
                results[result.key] = result
                if checkpoint is not None and result.classification is not Classification.FAILED:
                    checkpoint.append(result)
                nxt = next(queue, None)
                if nxt is not None:
                    pending.add(executor.submit(work, nxt))
    except BaseException:
        executor.shutdown(wait=True, cancel_futures=True)
        raise
    executor.shutdown(wait=True)

    ordered = [results[k] for k in keys]
    counts = summarize_probes(ordered)
    if ordered and counts[Classification.AMBIGUOUS.value] > AMBIGUOUS_WARNING_FRACTION * len(ordered):
        log.warning(
            "%d of %d probes fell between the thresholds; the page layout may have changed, "
            "consider recalibrating",
            counts[Classification.AMBIGUOUS.value],
            len(ordered),
        )
    return ordered


def summarize_probes(results: Sequence[ProbeResult]) -> dict[str, int]:
    counts = Counter(r.classification.value for r in results)
    return {c.value: counts.get(c.value, 0) for c in Classification}


def write_batch_report(results: Sequence[ProbeResult], path: str | os.PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("classification,count\n")
        for name, count in summarize_probes(results).items():
            fh.write(f"{name},{count}\n")


def count_search_results(body: bytes) -> int:
    """Number of result items on a PAR search page."""
    if not _RESULTS_MARKER.search(body):
        raise ParseError("search results container not found on page")
    return len(_RESULT_ITEM.findall(body))


def probe_award_counts(
    award_id: str,
    mode: SearchMode | str,
    transport: Transport,
    *,
    base_url: str,
    simple_path: str = SIMPLE_SEARCH_PATH,
    advanced_path: str = ADVANCED_AWARD_PATH,
) -> int:
    """Count results for an award via the simple search or the advanced Award ID field.

    The advanced field only matches records carrying the award in their
    award-IDs metadata, so it can return fewer results than the simple search.
    """
    if not validate_award_id(award_id):
        raise InvalidInput(f"award ID must be seven digits: {award_id!r}")
    mode = SearchMode(mode)
    path = simple_path if mode is SearchMode.SIMPLE else advanced_path
    response = transport.get(base_url.rstrip("/") + path.format(award_id=award_id))
    if response.status != 200:
        raise TransportError(f"HTTP {response.status} for {response.url}")
    return count_search_results(response.body)
