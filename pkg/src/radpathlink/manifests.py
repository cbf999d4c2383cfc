"""Link manifests and their append-only persistence.

A manifest records one radiology-to-pathology link attempt. Every state
transition is appended as a JSON line; the current state of an id is the
last record, so replaying the file restores the store after a restart.
"""

from __future__ import annotations

import datetime
import json
import logging
import threading
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

from .anatomy import CodeItem, Laterality, MatchTier, ResolvedBodyPart

log = logging.getLogger(__name__)


class LinkStatus:
    PENDING = "Pending"
    RESOLVING = "Resolving"
    SEGMENTING = "Segmenting"
    ENCODING = "Encoding"
    UPLOADING = "Uploading"
    COMPLETE = "Complete"
    FAILED = "Failed"


_STAGE_ORDER = {
    LinkStatus.PENDING: 0,
    LinkStatus.RESOLVING: 1,
    LinkStatus.SEGMENTING: 2,
    LinkStatus.ENCODING: 3,
    LinkStatus.UPLOADING: 4,
    LinkStatus.COMPLETE: 5,
    LinkStatus.FAILED: 6,
}

TERMINAL_STATUSES = (LinkStatus.COMPLETE, LinkStatus.FAILED)


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


@dataclass(frozen=True)
class LinkManifest:
    id: str
    radiology_study_uid: str
    wsi_study_uid: str
    status: str = LinkStatus.PENDING
    body_part: Optional[ResolvedBodyPart] = None
    seg_series_uid: Optional[str] = None
    error: Optional[str] = None
    created_at: str = field(default_factory=_now)
    updated_at: str = field(default_factory=_now)

    def advance(self, status: str, **changes) -> "LinkManifest":
        """Move to a later stage (or to Failed). Terminal states are final."""
        if self.status in TERMINAL_STATUSES:
            raise ValueError("manifest %s is terminal (%s)" % (self.id, self.status))
        if status != LinkStatus.FAILED and _STAGE_ORDER[status] <= _STAGE_ORDER[self.status]:
            raise ValueError("cannot move %s -> %s" % (self.status, status))
        updated = replace(self, status=status, updated_at=_now(), **changes)
        if updated.status == LinkStatus.COMPLETE and not updated.seg_series_uid:
            raise ValueError("Complete manifest requires seg_series_uid")
        if updated.status == LinkStatus.FAILED and not updated.error:
            raise ValueError("Failed manifest requires an error")
        return updated

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "radiologyStudyUid": self.radiology_study_uid,
            "wsiStudyUid": self.wsi_study_uid,
            "status": self.status,
            "bodyPart": self.body_part.to_json_dict() if self.body_part else None,
            "segSeriesUid": self.seg_series_uid,
            "error": self.error,
            "createdAt": self.created_at,
            "updatedAt": self.updated_at,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "LinkManifest":
        body_part = None
        if doc.get("bodyPart"):
            bp = doc["bodyPart"]
            body_part = ResolvedBodyPart(
                label=bp["label"],
                code=CodeItem(bp["code"]["value"], bp["code"].get("scheme", "SCT"),
                              bp["code"].get("meaning", "")),
                tier=MatchTier(bp["tier"]),
                source=bp.get("source", ""),
                laterality=Laterality(bp.get("laterality", "none")),
            )
        status = doc["status"]
        if status not in _STAGE_ORDER:
            raise ValueError("unknown status %r" % status)
        return LinkManifest(
            id=doc["id"],
            radiology_study_uid=doc["radiologyStudyUid"],
            wsi_study_uid=doc["wsiStudyUid"],
            status=status,
            body_part=body_part,
            seg_series_uid=doc.get("segSeriesUid"),
            error=doc.get("error"),
            created_at=doc.get("createdAt", _now()),
            updated_at=doc.get("updatedAt", _now()),
        )


def new_manifest(radiology_study_uid: str, wsi_study_uid: str) -> LinkManifest:
    return LinkManifest(id=uuid.uuid4().hex, radiology_study_uid=radiology_study_uid,
                        wsi_study_uid=wsi_study_uid)


class ManifestStore:
    """Append-only manifest log with an in-memory view of current states.

    Appends are serialized through one lock; reads serve the latest
    committed record. Corrupt lines are skipped with a warning on load and
    never abort the replay.
    """

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._current: dict[str, LinkManifest] = {}
        self.load()

    def load(self) -> dict[str, LinkManifest]:
        current: dict[str, LinkManifest] = {}
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        manifest = LinkManifest.from_json_dict(json.loads(line))
                    except (ValueError, KeyError, TypeError) as exc:
                        log.warning("%s:%d: skipping corrupt record (%s)",
                                    self.path, lineno, exc)
                        continue
                    current[manifest.id] = manifest
        with self._lock:
            self._current = current
        return dict(current)

    def append(self, manifest: LinkManifest) -> None:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(manifest.to_json_dict()) + "\n")
            self._current[manifest.id] = manifest

    def get(self, manifest_id: str) -> Optional[LinkManifest]:
        with self._lock:
            return self._current.get(manifest_id)

    def list(self) -> list[LinkManifest]:
        with self._lock:
            return sorted(self._current.values(), key=lambda m: m.created_at)

    def active_for_pair(self, radiology_study_uid: str,
                        wsi_study_uid: str) -> Optional[LinkManifest]:
        """The non-terminal manifest for a pair, if one is in flight."""
        with self._lock:
            for manifest in self._current.values():
                if manifest.radiology_study_uid == radiology_study_uid \
                        and manifest.wsi_study_uid == wsi_study_uid \
                        and manifest.status not in TERMINAL_STATUSES:
                    return manifest
        return None
