"""DICOMweb client plus a hermetic stub archive.

The client speaks the QIDO-RS/WADO-RS/STOW-RS subset the pipeline needs.
The stub serves the same subset over HTTP from a directory of Part-10
files with an in-memory index that is rebuilt by scanning on startup, so
tests and demos run without an external PACS.
"""

from __future__ import annotations

import base64
import json
import logging
import re
import threading
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional, Sequence, Union
from urllib.parse import parse_qsl, urlparse

import requests

from . import dicom_core as dc
from .dicom_core import DataElement, DataSet, DicomFile, Tag, get_string, tag_for

log = logging.getLogger(__name__)

SUPPORTED_QUERY_KEYS = frozenset({
    "PatientID", "ModalitiesInStudy", "StudyDate", "Modality",
    "StudyInstanceUID", "SeriesInstanceUID", "BodyPartExamined",
})


class DicomWebError(Exception):
    """Base class for client-side DICOMweb failures."""


class Transport(DicomWebError):
    """Connection, timeout or unexpected HTTP status."""


class ProtocolError(DicomWebError):
    """Response body was not the DICOM JSON we asked for."""


class NotFound(DicomWebError):
    """The addressed resource does not exist in the archive."""


class BindFailure(Exception):
    """Stub server could not bind its address."""


@dataclass(frozen=True)
class StudyRecord:
    study_uid: str
    patient_id: str = ""
    patient_name: str = ""
    study_description: str = ""
    modalities_in_study: frozenset[str] = field(default_factory=frozenset)
    study_date: Optional[str] = None


@dataclass(frozen=True)
class SeriesRecord:
    series_uid: str
    study_uid: str
    modality: str = ""
    series_description: str = ""
    instance_count: int = 0


@dataclass(frozen=True)
class StoreResult:
    stored: int
    failed: list[tuple[str, str]]


QueryFilter = dict[str, str]


def validate_filter(filt: QueryFilter) -> None:
    unknown = set(filt) - SUPPORTED_QUERY_KEYS
    if unknown:
        raise ValueError("unsupported query keys: %s" % ", ".join(sorted(unknown)))


def match_value(pattern: str, value: str) -> bool:
    """Exact match, or prefix match when the pattern ends with '*'."""
    if pattern.endswith("*"):
        return value.startswith(pattern[:-1])
    return value == pattern


# ---------------------------------------------------------------------------
# DICOM JSON (PS3.18 Annex F)


def _tag_key(tag: Tag) -> str:
    return "%04X%04X" % (tag.group, tag.element)


def dataset_to_json_dict(ds: DataSet) -> dict:
    """Render a dataset as an Annex-F JSON object keyed by 8-digit hex tags."""
    out: dict[str, dict] = {}
    for el in ds:
        entry: dict = {"vr": el.vr}
        if el.vr == "SQ":
            if el.value:
                entry["Value"] = [dataset_to_json_dict(item) for item in el.value]
        elif el.vr == "PN":
            if el.value:
                entry["Value"] = [{"Alphabetic": part} for part in el.value.split("\\")]
        elif el.vr in ("IS",):
            parts = [p for p in el.value.split("\\") if p.strip()]
            if parts:
                entry["Value"] = [int(p) for p in parts]
        elif el.vr in ("DS",):
            parts = [p for p in el.value.split("\\") if p.strip()]
            if parts:
                entry["Value"] = [float(p) for p in parts]
        elif el.vr in dc.TEXT_VRS:
            if el.value:
                entry["Value"] = el.value.split("\\")
        elif el.vr in dc.INT_VRS or el.vr in dc.FLOAT_VRS:
            if el.value:
                entry["Value"] = list(el.value)
        else:
            if el.value:
                entry["InlineBinary"] = base64.b64encode(el.value).decode("ascii")
        out[_tag_key(el.tag)] = entry
    return out


def json_dict_to_dataset(doc: dict) -> DataSet:
    ds = DataSet()
    for key, entry in doc.items():
        if not re.fullmatch(r"[0-9A-Fa-f]{8}", key):
            raise ProtocolError("bad attribute key %r" % key)
        tag = Tag(int(key[:4], 16), int(key[4:], 16))
        vr = entry.get("vr", "UN")
        if vr == "SQ":
            items = [json_dict_to_dataset(item) for item in entry.get("Value", [])]
            ds.add(DataElement(tag, "SQ", items))
        elif "InlineBinary" in entry:
            ds.add(DataElement(tag, vr, base64.b64decode(entry["InlineBinary"])))
        elif vr == "PN":
            names = []
            for item in entry.get("Value", []):
                names.append(item.get("Alphabetic", "") if isinstance(item, dict) else str(item))
            ds.add(DataElement(tag, "PN", "\\".join(names)))
        elif vr in dc.TEXT_VRS:
            values = entry.get("Value", [])
            ds.add(DataElement(tag, vr, "\\".join(_number_text(v) for v in values)))
        elif vr in dc.INT_VRS:
            ds.add(DataElement(tag, vr, [int(v) for v in entry.get("Value", [])]))
        elif vr in dc.FLOAT_VRS:
            ds.add(DataElement(tag, vr, [float(v) for v in entry.get("Value", [])]))
        else:
            ds.add(DataElement(tag, vr, b""))
    return ds


def _number_text(v: object) -> str:
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


# ---------------------------------------------------------------------------
# Client


def _get(url: str, **kwargs) -> requests.Response:
    try:
        return requests.get(url, timeout=30, **kwargs)
    except requests.RequestException as exc:
        raise Transport(str(exc)) from exc


def _json_records(resp: requests.Response) -> list[dict]:
    if resp.status_code == 204:
        return []
    if resp.status_code != 200:
        raise Transport("HTTP %d from %s" % (resp.status_code, resp.url))
    try:
        doc = resp.json()
    except ValueError as exc:
        raise ProtocolError("non-JSON QIDO response") from exc
    if not isinstance(doc, list):
        raise ProtocolError("QIDO response is not a JSON array")
    return doc


def _record_string(record: dict, keyword: str) -> str:
    ds = json_dict_to_dataset(record)
    return get_string(ds, tag_for(keyword)) or ""


def qido_studies(archive: str, filt: Optional[QueryFilter] = None) -> list[StudyRecord]:
    """Query studies; results come back ascending by study UID."""
    filt = dict(filt or {})
    validate_filter(filt)
    resp = _get(archive.rstrip("/") + "/studies", params=filt,
                headers={"Accept": "application/dicom+json"})
    records = []
    for doc in _json_records(resp):
        try:
            ds = json_dict_to_dataset(doc)
        except (AttributeError, TypeError) as exc:
            raise ProtocolError("malformed study record") from exc
        uid = get_string(ds, tag_for("StudyInstanceUID"))
        if not uid:
            raise ProtocolError("study record without StudyInstanceUID")
        records.append(StudyRecord(
            study_uid=uid,
            patient_id=get_string(ds, tag_for("PatientID")) or "",
            patient_name=get_string(ds, tag_for("PatientName")) or "",
            study_description=get_string(ds, tag_for("StudyDescription")) or "",
            modalities_in_study=frozenset(
                m for m in (get_string(ds, tag_for("ModalitiesInStudy")) or "").split("\\") if m),
            study_date=get_string(ds, tag_for("StudyDate")) or None,
        ))
    return sorted(records, key=lambda r: r.study_uid)


def qido_series(archive: str, study_uid: str,
                filt: Optional[QueryFilter] = None) -> list[SeriesRecord]:
    filt = dict(filt or {})
    validate_filter(filt)
    resp = _get("%s/studies/%s/series" % (archive.rstrip("/"), study_uid), params=filt,
                headers={"Accept": "application/dicom+json"})
    records = []
    for doc in _json_records(resp):
        ds = json_dict_to_dataset(doc)
        uid = get_string(ds, tag_for("SeriesInstanceUID"))
        if not uid:
            raise ProtocolError("series record without SeriesInstanceUID")
        count = get_string(ds, tag_for("NumberOfSeriesRelatedInstances")) or "0"
        records.append(SeriesRecord(
            series_uid=uid,
            study_uid=study_uid,
            modality=get_string(ds, tag_for("Modality")) or "",
            series_description=get_string(ds, tag_for("SeriesDescription")) or "",
            instance_count=int(count),
        ))
    return sorted(records, key=lambda r: r.series_uid)


def qido_instances(archive: str, study_uid: str, series_uid: str) -> list[str]:
    """SOP instance UIDs of one series, ascending."""
    resp = _get("%s/studies/%s/series/%s/instances"
                % (archive.rstrip("/"), study_uid, series_uid),
                headers={"Accept": "application/dicom+json"})
    uids = []
    for doc in _json_records(resp):
        uid = _record_string(doc, "SOPInstanceUID")
        if uid:
            uids.append(uid)
    return sorted(uids)


def wado_instance(archive: str, study_uid: str, series_uid: str,
                  instance_uid: str) -> bytes:
    """Retrieve the stored Part-10 bytes of one instance."""
    if not (study_uid and series_uid and instance_uid):
        raise ValueError("identifiers must be non-empty")
    resp = _get("%s/studies/%s/series/%s/instances/%s"
                % (archive.rstrip("/"), study_uid, series_uid, instance_uid),
                headers={"Accept": "application/dicom"})
    if resp.status_code == 404:
        raise NotFound(instance_uid)
    if resp.status_code != 200:
        raise Transport("HTTP %d retrieving %s" % (resp.status_code, instance_uid))
    return resp.content


def wado_metadata(archive: str, study_uid: str, series_uid: str,
                  instance_uid: str) -> DataSet:
    """Retrieve one instance's metadata as a dataset (no bulk data)."""
    resp = _get("%s/studies/%s/series/%s/instances/%s/metadata"
                % (archive.rstrip("/"), study_uid, series_uid, instance_uid),
                headers={"Accept": "application/dicom+json"})
    if resp.status_code == 404:
        raise NotFound(instance_uid)
    docs = _json_records(resp)
    if len(docs) != 1:
        raise ProtocolError("metadata response must hold exactly one dataset")
    return json_dict_to_dataset(docs[0])


def stow_store(archive: str, files: Sequence[Union[DicomFile, bytes]]) -> StoreResult:
    """Store instances via STOW-RS multipart/related.

    Per-instance failures are reported in the result without aborting the
    rest of the batch; a duplicate SOPInstanceUID replaces the prior copy.
    """
    boundary = "stow-%s" % uuid.uuid4().hex  # random: payloads are binary
    parts = []
    for f in files:
        payload = dc.serialize_part10(f) if isinstance(f, DicomFile) else bytes(f)
        parts.append(b"--" + boundary.encode() + b"\r\n"
                     b"Content-Type: application/dicom\r\n\r\n" + payload + b"\r\n")
    body = b"".join(parts) + b"--" + boundary.encode() + b"--\r\n"
    try:
        resp = requests.post(
            archive.rstrip("/") + "/studies", data=body, timeout=60,
            headers={"Content-Type":
                     'multipart/related; type="application/dicom"; boundary=%s'
                     % boundary})
    except requests.RequestException as exc:
        raise Transport(str(exc)) from exc
    if resp.status_code not in (200, 202):
        raise Transport("HTTP %d from store" % resp.status_code)
    try:
        doc = resp.json()
    except ValueError as exc:
        raise ProtocolError("non-JSON store response") from exc
    return StoreResult(
        stored=int(doc.get("stored", 0)),
        failed=[(item.get("uid", ""), item.get("reason", "")) for item in doc.get("failed", [])],
    )


# ---------------------------------------------------------------------------
# Stub archive


class _ArchiveIndex:
    """Instance index over a directory of Part-10 files.

    Reads take a snapshot under the lock; mutations are serialized, so a
    store observed by one reader is observed by all later readers.
    """

    def __init__(self, root: Path):
        self.root = root
        self._lock = threading.RLock()
        # study -> series -> sop -> cached attribute dict
        self._tree: dict[str, dict[str, dict[str, dict]]] = {}

    def rescan(self) -> None:
        with self._lock:
            self._tree = {}
            for path in sorted(self.root.rglob("*.dcm")):
                try:
                    file = dc.parse_part10(path.read_bytes())
                except dc.DicomError as exc:
                    log.warning("skipping unparseable %s: %s", path, exc)
                    continue
                try:
                    self._index_file(file, path)
                except KeyError:
                    log.warning("skipping %s: missing identifiers", path)

    def _cache_attrs(self, file: DicomFile) -> dict:
        body = file.body
        def s(keyword: str) -> str:
            return get_string(body, tag_for(keyword)) or ""
        return {
            "StudyInstanceUID": s("StudyInstanceUID"),
            "SeriesInstanceUID": s("SeriesInstanceUID"),
            "SOPInstanceUID": s("SOPInstanceUID"),
            "SOPClassUID": s("SOPClassUID"),
            "PatientID": s("PatientID"),
            "PatientName": s("PatientName"),
            "StudyDescription": s("StudyDescription"),
            "SeriesDescription": s("SeriesDescription"),
            "StudyDate": s("StudyDate"),
            "Modality": s("Modality"),
            "BodyPartExamined": s("BodyPartExamined"),
        }

    def _index_file(self, file: DicomFile, path: Path) -> None:
        attrs = self._cache_attrs(file)
        study, series, sop = (attrs["StudyInstanceUID"], attrs["SeriesInstanceUID"],
                              attrs["SOPInstanceUID"])
        if not (study and series and sop):
            raise KeyError("missing identifiers")
        attrs["path"] = path
        self._tree.setdefault(study, {}).setdefault(series, {})[sop] = attrs

    def store(self, payload: bytes) -> tuple[Optional[str], Optional[str]]:
        """Returns (sop_uid, None) on success or (maybe_uid, reason) on failure."""
        try:
            file = dc.parse_part10(payload)
        except dc.DicomError as exc:
            return None, "unparseable instance: %s" % exc
        attrs = self._cache_attrs(file)
        study, series, sop = (attrs["StudyInstanceUID"], attrs["SeriesInstanceUID"],
                              attrs["SOPInstanceUID"])
        missing = [kw for kw, v in (("StudyInstanceUID", study),
                                    ("SeriesInstanceUID", series),
                                    ("SOPInstanceUID", sop)) if not v]
        if missing:
            return sop or None, "missing %s" % ", ".join(missing)
        with self._lock:
            path = self.root / study / series / ("%s.dcm" % sop)
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(payload)
            tmp.replace(path)
            attrs["path"] = path
            self._tree.setdefault(study, {}).setdefault(series, {})[sop] = attrs
        return sop, None

    def study_records(self, filt: QueryFilter) -> list[dict]:
        with self._lock:
            out = []
            for study_uid in sorted(self._tree):
                series_map = self._tree[study_uid]
                modalities = sorted({a["Modality"] for s in series_map.values()
                                     for a in s.values() if a["Modality"]})
                first = self._first_instance(series_map)
                record = {
                    "StudyInstanceUID": study_uid,
                    "PatientID": first["PatientID"],
                    "PatientName": first["PatientName"],
                    "StudyDescription": first["StudyDescription"],
                    "StudyDate": first["StudyDate"],
                    "ModalitiesInStudy": modalities,
                }
                if self._study_matches(record, filt):
                    out.append(record)
            return out

    @staticmethod
    def _first_instance(series_map: dict) -> dict:
        series_uid = sorted(series_map)[0]
        sop = sorted(series_map[series_uid])[0]
        return series_map[series_uid][sop]

    @staticmethod
    def _study_matches(record: dict, filt: QueryFilter) -> bool:
        for key, pattern in filt.items():
            if key == "ModalitiesInStudy":
                if not any(match_value(pattern, m) for m in record["ModalitiesInStudy"]):
                    return False
            elif key in ("PatientID", "StudyDate", "StudyInstanceUID"):
                if not match_value(pattern, record.get(key) or ""):
                    return False
            # remaining supported keys do not apply at study level
        return True

    def series_records(self, study_uid: str, filt: QueryFilter) -> list[dict]:
        with self._lock:
            series_map = self._tree.get(study_uid, {})
            out = []
            for series_uid in sorted(series_map):
                instances = series_map[series_uid]
                first = instances[sorted(instances)[0]]
                record = {
                    "SeriesInstanceUID": series_uid,
                    "StudyInstanceUID": study_uid,
                    "Modality": first["Modality"],
                    "SeriesDescription": first["SeriesDescription"],
                    "NumberOfSeriesRelatedInstances": len(instances),
                    "BodyPartExamined": first["BodyPartExamined"],
                }
                ok = True
                for key, pattern in filt.items():
                    if key in ("Modality", "SeriesInstanceUID", "BodyPartExamined"):
                        if not match_value(pattern, record.get(key) or ""):
                            ok = False
                            break
                if ok:
                    out.append(record)
            return out

    def instance_records(self, study_uid: str, series_uid: str) -> list[dict]:
        with self._lock:
            instances = self._tree.get(study_uid, {}).get(series_uid, {})
            return [
                {"SOPInstanceUID": sop,
                 "SOPClassUID": instances[sop]["SOPClassUID"],
                 "StudyInstanceUID": study_uid,
                 "SeriesInstanceUID": series_uid}
                for sop in sorted(instances)
            ]

    def instance_path(self, study_uid: str, series_uid: str,
                      sop_uid: str) -> Optional[Path]:
        with self._lock:
            attrs = self._tree.get(study_uid, {}).get(series_uid, {}).get(sop_uid)
            return attrs["path"] if attrs else None


def _study_record_json(record: dict) -> dict:
    ds = DataSet()
    ds.put_keyword("StudyInstanceUID", record["StudyInstanceUID"])
    if record["PatientID"]:
        ds.put_keyword("PatientID", record["PatientID"])
    if record["PatientName"]:
        ds.put_keyword("PatientName", record["PatientName"])
    if record["StudyDescription"]:
        ds.put_keyword("StudyDescription", record["StudyDescription"])
    if record["StudyDate"]:
        ds.put_keyword("StudyDate", record["StudyDate"])
    if record["ModalitiesInStudy"]:
        ds.put_keyword("ModalitiesInStudy", "\\".join(record["ModalitiesInStudy"]))
    return dataset_to_json_dict(ds)


def _series_record_json(record: dict) -> dict:
    ds = DataSet()
    ds.put_keyword("SeriesInstanceUID", record["SeriesInstanceUID"])
    ds.put_keyword("StudyInstanceUID", record["StudyInstanceUID"])
    if record["Modality"]:
        ds.put_keyword("Modality", record["Modality"])
    if record["SeriesDescription"]:
        ds.put_keyword("SeriesDescription", record["SeriesDescription"])
    if record["BodyPartExamined"]:
        ds.put_keyword("BodyPartExamined", record["BodyPartExamined"])
    ds.put_keyword("NumberOfSeriesRelatedInstances",
                   str(record["NumberOfSeriesRelatedInstances"]))
    return dataset_to_json_dict(ds)


def _instance_record_json(record: dict) -> dict:
    ds = DataSet()
    ds.put_keyword("SOPInstanceUID", record["SOPInstanceUID"])
    if record["SOPClassUID"]:
        ds.put_keyword("SOPClassUID", record["SOPClassUID"])
    ds.put_keyword("StudyInstanceUID", record["StudyInstanceUID"])
    ds.put_keyword("SeriesInstanceUID", record["SeriesInstanceUID"])
    return dataset_to_json_dict(ds)


def parse_multipart_related(body: bytes, content_type: str) -> list[bytes]:
    """Extract application/dicom part payloads from a multipart/related body."""
    m = re.search(r'boundary="?([^";,]+)"?', content_type)
    if not m:
        raise ValueError("multipart content without boundary")
    boundary = b"--" + m.group(1).encode()
    payloads = []
    for chunk in body.split(boundary)[1:]:
        if chunk.startswith(b"--"):
            break  # closing delimiter
        chunk = chunk.lstrip(b"\r\n")
        sep = chunk.find(b"\r\n\r\n")
        if sep < 0:
            continue
        payload = chunk[sep + 4:]
        if payload.endswith(b"\r\n"):
            payload = payload[:-2]
        if payload:
            payloads.append(payload)
    return payloads


class _StubHandler(BaseHTTPRequestHandler):
    index: _ArchiveIndex  # injected by the server factory
    protocol_version = "HTTP/1.1"

    _ROUTES = [
        (re.compile(r"^/studies$"), "studies"),
        (re.compile(r"^/studies/([^/]+)/series$"), "series"),
        (re.compile(r"^/studies/([^/]+)/series/([^/]+)/instances$"), "instances"),
        (re.compile(r"^/studies/([^/]+)/series/([^/]+)/instances/([^/]+)$"), "instance"),
        (re.compile(r"^/studies/([^/]+)/series/([^/]+)/instances/([^/]+)/metadata$"),
         "metadata"),
    ]

    def log_message(self, fmt, *args):  # quiet by default
        log.debug("stub: " + fmt, *args)

    def _send_json(self, payload: object, status: int = 200,
                   extra_headers: Optional[dict] = None) -> None:
        raw = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/dicom+json")
        self.send_header("Content-Length", str(len(raw)))
        for k, v in (extra_headers or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(raw)

    def _send_error_body(self, status: int, reason: str) -> None:
        raw = reason.encode()
        self.send_response(status)
        self.send_header("Content-Type", "text/plain")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def _split_filter(self) -> tuple[QueryFilter, Optional[dict]]:
        query = dict(parse_qsl(urlparse(self.path).query))
        ignored = sorted(set(query) - SUPPORTED_QUERY_KEYS)
        filt = {k: v for k, v in query.items() if k in SUPPORTED_QUERY_KEYS}
        headers = None
        if ignored:
            headers = {"Warning": '299 radpathlink "ignored query keys: %s"'
                       % ", ".join(ignored)}
        return filt, headers

    def do_GET(self) -> None:
        path = urlparse(self.path).path
        try:
            for pattern, name in self._ROUTES:
                m = pattern.match(path)
                if not m:
                    continue
                getattr(self, "_get_" + name)(*m.groups())
                return
            self._send_error_body(404, "no such route")
        except BrokenPipeError:
            pass
        except Exception as exc:  # surfaced as HTTP 500 with a reason body
            log.exception("stub GET %s failed", path)
            self._send_error_body(500, str(exc))

    def _get_studies(self) -> None:
        filt, headers = self._split_filter()
        records = [_study_record_json(r) for r in self.index.study_records(filt)]
        self._send_json(records, extra_headers=headers)

    def _get_series(self, study_uid: str) -> None:
        filt, headers = self._split_filter()
        records = [_series_record_json(r)
                   for r in self.index.series_records(study_uid, filt)]
        self._send_json(records, extra_headers=headers)

    def _get_instances(self, study_uid: str, series_uid: str) -> None:
        records = [_instance_record_json(r)
                   for r in self.index.instance_records(study_uid, series_uid)]
        self._send_json(records)

    def _get_instance(self, study_uid: str, series_uid: str, sop_uid: str) -> None:
        path = self.index.instance_path(study_uid, series_uid, sop_uid)
        if path is None:
            self._send_error_body(404, "no such instance")
            return
        payload = path.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", "application/dicom")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _get_metadata(self, study_uid: str, series_uid: str, sop_uid: str) -> None:
        path = self.index.instance_path(study_uid, series_uid, sop_uid)
        if path is None:
            self._send_error_body(404, "no such instance")
            return
        file = dc.parse_part10(path.read_bytes())
        body = DataSet([el for el in file.body if el.tag != tag_for("PixelData")])
        self._send_json([dataset_to_json_dict(body)])

    def do_POST(self) -> None:
        path = urlparse(self.path).path
        if path != "/studies":
            self._send_error_body(404, "no such route")
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = self.rfile.read(length)
            content_type = self.headers.get("Content-Type", "")
            if "multipart/related" not in content_type:
                self._send_error_body(400, "expected multipart/related")
                return
            try:
                payloads = parse_multipart_related(body, content_type)
            except ValueError as exc:
                self._send_error_body(400, str(exc))
                return
            stored = 0
            failed = []
            for payload in payloads:
                uid, reason = self.index.store(payload)
                if reason is None:
                    stored += 1
                else:
                    failed.append({"uid": uid or "", "reason": reason})
            self._send_json({"stored": stored, "failed": failed})
        except BrokenPipeError:
            pass
        except Exception as exc:
            log.exception("stub POST failed")
            self._send_error_body(500, str(exc))


class StubServer:
    """A running stub archive; stop() shuts it down and joins the thread."""

    def __init__(self, root: Union[str, Path], bind: tuple[str, int] = ("127.0.0.1", 0)):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.index = _ArchiveIndex(self.root)
        self.index.rescan()
        handler = type("BoundStubHandler", (_StubHandler,), {"index": self.index})
        try:
            self._httpd = ThreadingHTTPServer(bind, handler)
        except OSError as exc:
            raise BindFailure("cannot bind %s: %s" % (bind, exc)) from exc
        self._thread = threading.Thread(
            target=lambda: self._httpd.serve_forever(poll_interval=0.05),
            name="stub-archive", daemon=True)

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return "http://%s:%d" % (host, port)

    def start(self) -> "StubServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._thread.join(timeout=10)
        self._httpd.server_close()


def serve_stub(root: Union[str, Path],
               bind: tuple[str, int] = ("127.0.0.1", 0)) -> StubServer:
    """Start a stub archive over a storage directory; returns the handle."""
    return StubServer(root, bind).start()
