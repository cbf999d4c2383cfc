"""Anatomical-site resolution from DICOM metadata.

A master table maps organ labels, coded concepts and free-text synonyms to
canonical entries. Resolution walks the coded attributes first, then the
descriptive text attributes, in a fixed tier order so results are stable
across runs and input orderings.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Optional, Union

from .dicom_core import CodeItem, DataSet, get_code_items, get_string, tag_for


class MasterTableError(Exception):
    """Base class for master-table loading failures."""


class SchemaError(MasterTableError):
    """A required field is missing or has the wrong shape."""


class ConflictError(MasterTableError):
    """A synonym or code is claimed by two different entries."""


class MatchTier(enum.Enum):
    EXACT_CODE = "ExactCode"
    EXACT_LABEL = "ExactLabel"
    GROUP = "Group"
    SUBSTRING = "Substring"

    @property
    def rank(self) -> int:
        return _TIER_RANK[self]


_TIER_RANK = {
    MatchTier.SUBSTRING: 1,
    MatchTier.GROUP: 2,
    MatchTier.EXACT_LABEL: 3,
    MatchTier.EXACT_CODE: 4,
}


class Laterality(enum.Enum):
    NONE = "none"
    LEFT = "left"
    RIGHT = "right"
    BILATERAL = "bilateral"


# Words stripped from the ends of a normalized token; German variants are
# included because clinical exports from German sites carry them.
DEFAULT_LATERALITY_WORDS: dict[str, Laterality] = {
    "left": Laterality.LEFT,
    "right": Laterality.RIGHT,
    "lt": Laterality.LEFT,
    "rt": Laterality.RIGHT,
    "bilateral": Laterality.BILATERAL,
    "links": Laterality.LEFT,
    "rechts": Laterality.RIGHT,
}


@dataclass(frozen=True)
class AnatomyEntry:
    canonical_label: str
    code: CodeItem
    synonyms: tuple[str, ...]
    group: str
    paired: bool


@dataclass(frozen=True)
class ResolvedBodyPart:
    """Outcome of anatomical resolution: what matched, how, and from where."""

    label: str
    code: CodeItem
    tier: MatchTier
    source: str
    laterality: Laterality = Laterality.NONE

    def to_json_dict(self) -> dict:
        return {
            "label": self.label,
            "code": {"value": self.code.code_value, "scheme": self.code.scheme,
                     "meaning": self.code.meaning},
            "tier": self.tier.value,
            "source": self.source,
            "laterality": self.laterality.value,
        }


class AnatomyMaster:
    """Validated, indexed master table. Immutable after construction."""

    def __init__(self, entries: list[AnatomyEntry], version: str):
        self.entries = tuple(entries)
        self.version = version
        self._by_token: dict[str, AnatomyEntry] = {}
        self._by_code: dict[str, AnatomyEntry] = {}
        self._by_group: dict[str, list[AnatomyEntry]] = {}
        self._by_label: dict[str, AnatomyEntry] = {}
        for entry in entries:
            if entry.canonical_label in self._by_label:
                raise ConflictError("duplicate label %r" % entry.canonical_label)
            self._by_label[entry.canonical_label] = entry
            if entry.code.code_value in self._by_code:
                raise ConflictError(
                    "code %s claimed by both %r and %r" % (
                        entry.code.code_value,
                        self._by_code[entry.code.code_value].canonical_label,
                        entry.canonical_label))
            self._by_code[entry.code.code_value] = entry
            for token in (entry.canonical_label,) + entry.synonyms:
                prior = self._by_token.get(token)
                if prior is not None and prior is not entry:
                    raise ConflictError(
                        "synonym %r claimed by both %r and %r" % (
                            token, prior.canonical_label, entry.canonical_label))
                self._by_token[token] = entry
            self._by_group.setdefault(entry.group, []).append(entry)
        for group in self._by_group.values():
            group.sort(key=lambda e: e.canonical_label)

    def entry_for_label(self, label: str) -> Optional[AnatomyEntry]:
        return self._by_label.get(label)

    def entry_for_token(self, token: str) -> Optional[AnatomyEntry]:
        return self._by_token.get(token)

    def entry_for_code(self, code_value: str) -> Optional[AnatomyEntry]:
        return self._by_code.get(code_value)

    def group_entries(self, group: str) -> list[AnatomyEntry]:
        return list(self._by_group.get(group, []))

    def match_tokens(self) -> Iterable[tuple[str, AnatomyEntry]]:
        return self._by_token.items()


def load_master(source: Union[str, bytes, dict]) -> AnatomyMaster:
    """Load and validate a master table from its JSON document."""
    if isinstance(source, (str, bytes)):
        try:
            doc = json.loads(source)
        except json.JSONDecodeError as exc:
            raise SchemaError("master table is not valid JSON: %s" % exc) from exc
    else:
        doc = source
    if not isinstance(doc, dict) or "entries" not in doc:
        raise SchemaError("master table must be an object with an 'entries' list")

    entries = []
    for i, raw in enumerate(doc["entries"]):
        where = "entry %d (%r)" % (i, raw.get("label", "?") if isinstance(raw, dict) else "?")
        if not isinstance(raw, dict):
            raise SchemaError("%s: not an object" % where)
        for field in ("label", "code", "synonyms", "group"):
            if field not in raw:
                raise SchemaError("%s: missing field %r" % (where, field))
        code = raw["code"]
        if not isinstance(code, dict) or not code.get("value"):
            raise SchemaError("%s: code must carry a non-empty 'value'" % where)
        synonyms = raw["synonyms"]
        if not isinstance(synonyms, list) or any(not s for s in synonyms):
            raise SchemaError("%s: synonyms must be non-empty strings" % where)
        entries.append(AnatomyEntry(
            canonical_label=str(raw["label"]).lower().strip(),
            code=CodeItem(code_value=str(code["value"]),
                          scheme=str(code.get("scheme", "SCT")),
                          meaning=str(code.get("meaning", ""))),
            synonyms=tuple(str(s).lower().strip() for s in synonyms),
            group=str(raw["group"]).lower().strip(),
            paired=bool(raw.get("paired", False)),
        ))
    return AnatomyMaster(entries, version=str(doc.get("version", "")))


def load_master_file(path: str) -> AnatomyMaster:
    with open(path, "rb") as fh:
        return load_master(fh.read())


def default_master() -> AnatomyMaster:
    """The table bundled with the package (a placeholder, not site-specific)."""
    data = resources.files("radpathlink.data").joinpath("anatomy_master.json")
    return load_master(data.read_bytes())


def normalize_text(
    raw: str,
    laterality_words: Optional[dict[str, Laterality]] = None,
) -> tuple[str, Laterality]:
    """Lowercase, fold punctuation to spaces, and strip laterality words.

    Laterality words are only recognized at the leading or trailing edge of
    the token; interior occurrences stay part of the token. Seeing both a
    left and a right word yields bilateral.
    """
    words_map = DEFAULT_LATERALITY_WORDS if laterality_words is None else laterality_words
    lowered = raw.lower()
    folded = "".join(ch if ch.isalnum() else " " for ch in lowered)
    words = folded.split()

    seen: set[Laterality] = set()
    while words and words[0] in words_map:
        seen.add(words_map[words.pop(0)])
    while words and words[-1] in words_map:
        seen.add(words_map[words.pop()])

    if Laterality.BILATERAL in seen or {Laterality.LEFT, Laterality.RIGHT} <= seen:
        laterality = Laterality.BILATERAL
    elif Laterality.LEFT in seen:
        laterality = Laterality.LEFT
    elif Laterality.RIGHT in seen:
        laterality = Laterality.RIGHT
    else:
        laterality = Laterality.NONE
    return " ".join(words), laterality


def _contains_word(token: str, phrase: str) -> bool:
    return (" %s " % phrase) in (" %s " % token)


def _resolved(entry: AnatomyEntry, tier: MatchTier, source: str,
              laterality: Laterality = Laterality.NONE) -> ResolvedBodyPart:
    return ResolvedBodyPart(label=entry.canonical_label, code=entry.code,
                            tier=tier, source=source, laterality=laterality)


_DESCRIPTION_KEYWORDS = ("StudyDescription", "SeriesDescription", "ProtocolName")


def resolve_from_dataset(ds: DataSet, master: AnatomyMaster) -> Optional[ResolvedBodyPart]:
    """Resolve the anatomical site of one dataset, or None.

    Evaluation order, stopping at the first success:

    1. AnatomicRegionSequence code value        -> ExactCode
    2. BodyPartExamined label/synonym equality  -> ExactLabel
    3. AdmittingDiagnosesCodeSequence code      -> ExactCode
    4. StudyDescription / SeriesDescription / ProtocolName, evaluated as
       three passes across all fields: label/synonym equality (ExactLabel),
       then group-name equality (Group, alphabetically first organ of the
       group), then whole-word substring (Substring, longest synonym wins,
       ties alphabetical).
    """
    for item in get_code_items(ds, tag_for("AnatomicRegionSequence")):
        entry = master.entry_for_code(item.code_value)
        if entry:
            return _resolved(entry, MatchTier.EXACT_CODE, "AnatomicRegionSequence")

    bpe = get_string(ds, tag_for("BodyPartExamined"))
    if bpe:
        token, laterality = normalize_text(bpe)
        entry = master.entry_for_token(token)
        if entry:
            return _resolved(entry, MatchTier.EXACT_LABEL, "BodyPartExamined", laterality)

    for item in get_code_items(ds, tag_for("AdmittingDiagnosesCodeSequence")):
        entry = master.entry_for_code(item.code_value)
        if entry:
            return _resolved(entry, MatchTier.EXACT_CODE, "AdmittingDiagnosesCodeSequence")

    fields: list[tuple[str, str, Laterality]] = []
    for keyword in _DESCRIPTION_KEYWORDS:
        value = get_string(ds, tag_for(keyword))
        if value:
            token, laterality = normalize_text(value)
            if token:
                fields.append((keyword, token, laterality))

    for keyword, token, laterality in fields:
        entry = master.entry_for_token(token)
        if entry:
            return _resolved(entry, MatchTier.EXACT_LABEL, keyword, laterality)

    for keyword, token, laterality in fields:
        group = master.group_entries(token)
        if group:
            return _resolved(group[0], MatchTier.GROUP, keyword, laterality)

    for keyword, token, laterality in fields:
        candidates = [
            (name, entry)
            for name, entry in master.match_tokens()
            if _contains_word(token, name)
        ]
        if candidates:
            candidates.sort(key=lambda c: (-len(c[0]), c[1].canonical_label))
            return _resolved(candidates[0][1], MatchTier.SUBSTRING, keyword, laterality)

    return None


def resolve_study(instances: list[DataSet], master: AnatomyMaster) -> Optional[ResolvedBodyPart]:
    """Aggregate per-instance resolutions for one study.

    The highest tier wins; within that tier the most frequent label, with
    alphabetical tie-breaking. The returned object is the first instance
    result carrying the winning (tier, label).
    """
    results = [r for r in (resolve_from_dataset(ds, master) for ds in instances) if r]
    if not results:
        return None
    best_rank = max(r.tier.rank for r in results)
    top = [r for r in results if r.tier.rank == best_rank]
    counts: dict[str, int] = {}
    for r in top:
        counts[r.label] = counts.get(r.label, 0) + 1
    winner = min(counts, key=lambda label: (-counts[label], label))
    for r in top:
        if r.label == winner:
            return r
    return None
