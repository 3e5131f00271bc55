"""DOI repair, NSF award ID extraction and ORCID validation.

All functions here are pure and never raise on bad input: a failed DOI
repair is reported through :class:`RepairOutcome`, and extraction of award
IDs simply returns an empty set when nothing qualifies.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from enum import Enum

DOI_RE = re.compile(r"10\.[0-9]{4,9}/\S+")
AWARD_ID_RE = re.compile(r"[0-9]{7}")
ORCID_RE = re.compile(r"([0-9]{4})-([0-9]{4})-([0-9]{4})-([0-9]{3}[0-9X])")

# Resolver prefixes, including the truncated forms seen in repository dumps
# ("tp://dx.doi.org/", ".doi.org/", "//doi.org/").
_RESOLVER_PREFIX = re.compile(
    r"^(?:(?:[a-z]{0,5}:)?/*\.?(?:[a-z]+\.)?doi\.org/+|doi:\s*)", re.IGNORECASE
)
_DIGIT_RUN = re.compile(r"[0-9]+")

# Rule names, in application order.
RULES = (
    "trim",
    "strip_resolver_prefix",
    "strip_leading_noise",
    "lowercase",
    "take_from_doi_start",
    "truncate_at_whitespace",
)


class FailureClass(str, Enum):
    NONE = "None"
    NOT_A_DOI = "NotADoi"
    EMPTY_INPUT = "EmptyInput"


@dataclass(frozen=True)
class RepairOutcome:
    input: str
    result: str | None
    failure_class: FailureClass
    rules_applied: tuple[str, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return self.failure_class is FailureClass.NONE


def _invisible(ch: str) -> bool:
    return unicodedata.category(ch) in ("Cf", "Cc") and not ch.isspace()


def _trim(text: str) -> str:
    text = "".join(ch for ch in text if not _invisible(ch))
    return text.strip()


def _strip_noise(text: str) -> str:
    i = 0
    while i < len(text) and not text[i].isalnum():
        i += 1
    return text[i:]


def is_normalized_doi(value: str) -> bool:
    """True if ``value`` already has the canonical lowercase DOI form."""
    return (
        isinstance(value, str)
        and DOI_RE.fullmatch(value) is not None
        and value == value.lower()
    )


def normalize_doi(raw: str | None) -> RepairOutcome:
    """Repair a free-text DOI value.

    The repair steps run in a fixed order and each one that changes the
    value is recorded in ``rules_applied``. Repairing an already repaired
    value is the identity.

    >>> normalize_doi("tp://dx.doi.org/10.5951/mathteaceduc.8.1.0076").result
    '10.5951/mathteaceduc.8.1.0076'
    >>> normalize_doi("OE.26.025534").failure_class.value
    'NotADoi'
    """
    original = "" if raw is None else str(raw)
    rules: list[str] = []

    text = _trim(original)
    if text != original:
        rules.append("trim")
    if not text:
        return RepairOutcome(original, None, FailureClass.EMPTY_INPUT, tuple(rules))

    stripped = text
    while True:
        m = _RESOLVER_PREFIX.match(stripped)
        if not m or not m.group(0):
            break
        stripped = stripped[m.end():].lstrip()
    if stripped != text:
        rules.append("strip_resolver_prefix")
        text = stripped

    stripped = _strip_noise(text)
    if stripped != text:
        rules.append("strip_leading_noise")
        text = stripped

    lowered = text.lower()
    if lowered != text:
        rules.append("lowercase")
        text = lowered

    start = text.find("10.")
    while start != -1:
        m = DOI_RE.match(text, start)
        if m:
            if start > 0:
                rules.append("take_from_doi_start")
            if m.end() < len(text):
                rules.append("truncate_at_whitespace")
            return RepairOutcome(original, m.group(0), FailureClass.NONE, tuple(rules))
        start = text.find("10.", start + 1)

    return RepairOutcome(original, None, FailureClass.NOT_A_DOI, tuple(rules))


def validate_award_id(candidate: object) -> bool:
    return isinstance(candidate, str) and AWARD_ID_RE.fullmatch(candidate) is not None


def extract_nsf_award_ids(grant_field: str | None) -> set[str]:
    """Pull well-formed seven-digit award numbers out of a packed grant field.

    Segments are split on semicolons. Only maximal digit runs of exactly
    seven digits qualify, so a seven-digit window inside a longer number is
    never reported. Non-NSF grant numbers that happen to be seven digits long
    are returned too; callers verify against the award universe.
    """
    if not grant_field:
        return set()
    found = set()
    for segment in grant_field.split(";"):
        for run in _DIGIT_RUN.findall(segment):
            if len(run) == 7:
                found.add(run)
    return found


def normalize_orcid(raw: str | None) -> str | None:
    """Return the bare ``0000-0000-0000-000X`` form, or None if the syntax is wrong."""
    if not raw:
        return None
    value = raw.strip()
    for prefix in ("https://orcid.org/", "http://orcid.org/", "orcid.org/"):
        if value.lower().startswith(prefix):
            value = value[len(prefix):]
            break
    value = value.upper()
    return value if ORCID_RE.fullmatch(value) else None


def orcid_check_digit(base_digits: str) -> str:
    """ISO 7064 MOD 11-2 check character for the first 15 digits of an ORCID iD."""
    total = 0
    for ch in base_digits:
        total = (total + int(ch)) * 2
    result = (12 - total % 11) % 11
    return "X" if result == 10 else str(result)


def is_valid_orcid(value: str | None) -> bool:
    orcid = normalize_orcid(value)
    if orcid is None:
        return False
    digits = orcid.replace("-", "")
    return orcid_check_digit(digits[:-1]) == digits[-1]
