"""REST API consumed by the viewer.

Endpoints proxy archive queries, expose body-part resolution, run link
pipelines in a bounded worker pool, and render slice frames, overlay
regions and WSI tiles. Responses are JSON except for the PNG image
endpoints.
"""

from __future__ import annotations

import io
import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qsl, urlparse

import numpy as np
from PIL import Image

from . import dicom_core as dc
from . import dicomweb as dw
from . import overlay
from .anatomy import AnatomyMaster, default_master, load_master_file, resolve_study
from .config import ServiceConfig
from .dicom_core import get_int, get_string, tag_for
from .manifests import LinkStatus, ManifestStore, new_manifest
from .pipeline import PipelineContext, _study_datasets, find_linked_wsi, \
    run_link_pipeline
from .seg import decode_seg
from .volume import BinaryMask, ScalarVolume, assemble_volume

log = logging.getLogger(__name__)

WSI_TILE_SIZE = 256


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


class _ApiState:
    """Shared service state: config, caches, manifest store, worker pool."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.archive = config.archive_endpoint
        self.master: AnatomyMaster = (
            load_master_file(config.master_table_path)
            if config.master_table_path else default_master())
        self.store = ManifestStore(config.manifest_store_path)
        self.executor = ThreadPoolExecutor(
            max_workers=config.max_concurrent_jobs, thread_name_prefix="link-job")
        self.seg_meta_dir = Path(config.manifest_store_path).parent / "seg-meta"
        self._lock = threading.Lock()
        self._volume_cache: dict[str, ScalarVolume] = {}
        self._series_study: dict[str, str] = {}
        self._regions_cache: dict[tuple[str, int, int], list] = {}
        self._seg_cache: dict[str, list] = {}

    def pipeline_context(self) -> PipelineContext:
        return PipelineContext(archive=self.archive, master=self.master,
                               engine=self.config.engine, store=self.store,
                               seg_meta_dir=self.seg_meta_dir)

    def close(self) -> None:
        self.executor.shutdown(wait=True)

    # -- archive lookups -----------------------------------------------

    def study_for_series(self, series_uid: str) -> str:
        with self._lock:
            cached = self._series_study.get(series_uid)
        if cached:
            return cached
        for study in dw.qido_studies(self.archive):
            for series in dw.qido_series(self.archive, study.study_uid):
                with self._lock:
                    self._series_study[series.series_uid] = study.study_uid
                if series.series_uid == series_uid:
                    return study.study_uid
        raise ApiError(404, "unknown series %s" % series_uid)

    def series_volume(self, series_uid: str) -> ScalarVolume:
        with self._lock:
            cached = self._volume_cache.get(series_uid)
        if cached is not None:
            return cached
        study_uid = self.study_for_series(series_uid)
        instances = []
        for sop_uid in dw.qido_instances(self.archive, study_uid, series_uid):
            raw = dw.wado_instance(self.archive, study_uid, series_uid, sop_uid)
            instances.append(dc.parse_part10(raw).body)
        if not instances:
            raise ApiError(404, "series %s has no instances" % series_uid)
        volume = assemble_volume(instances)
        with self._lock:
            self._volume_cache[series_uid] = volume
        return volume

    def seg_mask_for_series(self, series_uid: str) -> Optional[tuple[str, BinaryMask]]:
        """Newest SEG segment mask referencing the series, with its SOP UID."""
        study_uid = self.study_for_series(series_uid)
        best: Optional[tuple[str, str, BinaryMask]] = None
        for series in dw.qido_series(self.archive, study_uid, {"Modality": "SEG"}):
            for sop_uid in dw.qido_instances(self.archive, study_uid, series.series_uid):
                decoded = self._decode_seg_instance(study_uid, series.series_uid, sop_uid)
                if decoded is None:
                    continue
                stamp, referenced, segments = decoded
                if referenced != series_uid or not segments:
                    continue
                key = stamp + sop_uid
                if best is None or key > best[0]:
                    best = (key, sop_uid, segments[0][1])
        return (best[1], best[2]) if best else None

    def _decode_seg_instance(self, study_uid: str, series_uid: str, sop_uid: str):
        with self._lock:
            if sop_uid in self._seg_cache:
                return self._seg_cache[sop_uid]
        raw = dw.wado_instance(self.archive, study_uid, series_uid, sop_uid)
        try:
            file = dc.parse_part10(raw)
            segments = decode_seg(file)
        except Exception as exc:
            log.warning("cannot decode SEG %s: %s", sop_uid, exc)
            result = None
        else:
            referenced = ""
            for item in dc.get_sequence(file.body, tag_for("ReferencedSeriesSequence")):
                referenced = get_string(item, tag_for("SeriesInstanceUID")) or ""
            stamp = (get_string(file.body, tag_for("ContentDate")) or "") + \
                (get_string(file.body, tag_for("ContentTime")) or "")
            result = (stamp, referenced, segments)
        with self._lock:
            self._seg_cache[sop_uid] = result
        return result

    def regions_for(self, series_uid: str, slice_index: int,
                    min_pixels: int) -> tuple[int, list]:
        volume = self.series_volume(series_uid)
        if not 0 <= slice_index < volume.geometry.slices:
            raise ApiError(404, "slice %d out of range" % slice_index)
        found = self.seg_mask_for_series(series_uid)
        if found is None:
            return volume.geometry.slices, []
        seg_sop, mask = found
        key = (seg_sop, slice_index, min_pixels)
        with self._lock:
            if key in self._regions_cache:
                return volume.geometry.slices, self._regions_cache[key]
        if mask.geometry.slices != volume.geometry.slices:
            raise ApiError(500, "SEG frame count does not match the series")
        regions = overlay.regions_from_mask_slice(mask, slice_index, min_pixels)
        with self._lock:
            self._regions_cache[key] = regions
        return volume.geometry.slices, regions


def _study_record_payload(record: dw.StudyRecord) -> dict:
    return {
        "studyUid": record.study_uid,
        "patientId": record.patient_id,
        "patientName": record.patient_name,
        "studyDescription": record.study_description,
        "modalities": sorted(record.modalities_in_study),
        "studyDate": record.study_date,
    }


def _render_frame_png(volume: ScalarVolume, slice_index: int,
                      wc: Optional[float], ww: Optional[float]) -> bytes:
    plane = volume.voxels[slice_index].astype(np.float64)
    if wc is None or ww is None:
        lo = float(plane.min())
        hi = float(plane.max())
        wc = (hi + lo) / 2.0
        ww = max(hi - lo, 1.0)
    ww = max(float(ww), 1.0)
    lo = wc - ww / 2.0
    scaled = np.clip((plane - lo) / ww * 255.0, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(scaled, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def _tile_png(pixels: np.ndarray, level_rows: int, level_cols: int,
              x: int, y: int) -> bytes:
    x0, y0 = x * WSI_TILE_SIZE, y * WSI_TILE_SIZE
    if x0 >= level_cols or y0 >= level_rows or x < 0 or y < 0:
        raise ApiError(404, "tile outside level bounds")
    tile = pixels[y0:y0 + WSI_TILE_SIZE, x0:x0 + WSI_TILE_SIZE]
    buf = io.BytesIO()
    Image.fromarray(tile, mode="L").save(buf, format="PNG")
    return buf.getvalue()


class _ApiHandler(BaseHTTPRequestHandler):
    state: _ApiState  # injected
    static_dir: Optional[Path] = None
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("api: " + fmt, *args)

    # -- plumbing -------------------------------------------------------

    def _send(self, status: int, payload: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(payload)

    def _send_json(self, payload: object, status: int = 200) -> None:
        self._send(status, json.dumps(payload).encode(), "application/json")

    def _send_error_json(self, status: int, message: str) -> None:
        self._send_json({"error": message}, status)

    def _query(self) -> dict[str, str]:
        return dict(parse_qsl(urlparse(self.path).query))

    def do_OPTIONS(self) -> None:
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    _GET_ROUTES = [
        (re.compile(r"^/api/studies$"), "_studies"),
        (re.compile(r"^/api/studies/([^/]+)/series$"), "_series"),
        (re.compile(r"^/api/studies/([^/]+)/resolve$"), "_resolve"),
        (re.compile(r"^/api/link$"), "_link_list"),
        (re.compile(r"^/api/link/([^/]+)$"), "_link_get"),
        (re.compile(r"^/api/series/([^/]+)/slices/(\d+)/regions$"), "_regions"),
        (re.compile(r"^/api/series/([^/]+)/slices/(\d+)/frame$"), "_frame"),
        (re.compile(r"^/api/linked-wsi$"), "_linked_wsi"),
        (re.compile(r"^/api/wsi/([^/]+)/info$"), "_wsi_info"),
        (re.compile(r"^/api/wsi/([^/]+)/tiles/(\d+)/(\d+)/(\d+)$"), "_wsi_tile"),
    ]

    def do_GET(self) -> None:
        path = urlparse(self.path).path
        try:
            for pattern, name in self._GET_ROUTES:
                m = pattern.match(path)
                if m:
                    getattr(self, name)(*m.groups())
                    return
            if self.static_dir is not None and self._serve_static(path):
                return
            self._send_error_json(404, "no such route")
        except ApiError as exc:
            self._send_error_json(exc.status, exc.message)
        except dw.NotFound as exc:
            self._send_error_json(404, str(exc))
        except dw.Transport as exc:
            self._send_error_json(502, "archive unreachable: %s" % exc)
        except BrokenPipeError:
            pass
        except Exception as exc:
            log.exception("api GET %s failed", path)
            self._send_error_json(500, str(exc))

    def do_POST(self) -> None:
        path = urlparse(self.path).path
        try:
            if path == "/api/link":
                self._link_post()
            else:
                self._send_error_json(404, "no such route")
        except ApiError as exc:
            self._send_error_json(exc.status, exc.message)
        except BrokenPipeError:
            pass
        except Exception as exc:
            log.exception("api POST %s failed", path)
            self._send_error_json(500, str(exc))

    # -- endpoints ------------------------------------------------------

    def _studies(self) -> None:
        records = dw.qido_studies(self.state.archive)
        self._send_json([_study_record_payload(r) for r in records])

    def _series(self, study_uid: str) -> None:
        records = dw.qido_series(self.state.archive, study_uid)
        self._send_json([{
            "seriesUid": r.series_uid,
            "studyUid": r.study_uid,
            "modality": r.modality,
            "seriesDescription": r.series_description,
            "instanceCount": r.instance_count,
        } for r in records])

    def _resolve(self, study_uid: str) -> None:
        datasets = _study_datasets(self.state.archive, study_uid)
        if not datasets:
            raise ApiError(404, "study %s has no instances" % study_uid)
        resolved = resolve_study(datasets, self.state.master)
        self._send_json({
            "studyUid": study_uid,
            "resolved": resolved.to_json_dict() if resolved else None,
        })

    def _link_post(self) -> None:
        length = int(self.headers.get("Content-Length", "0"))
        try:
            doc = json.loads(self.rfile.read(length) or b"{}")
        except ValueError:
            raise ApiError(400, "body must be JSON")
        rad = doc.get("radiologyStudyUID") or ""
        wsi = doc.get("wsiStudyUID") or ""
        if not rad or not wsi:
            raise ApiError(400, "radiologyStudyUID and wsiStudyUID are required")
        active = self.state.store.active_for_pair(rad, wsi)
        if active is not None:
            raise ApiError(409, "link %s already in flight for this pair" % active.id)
        manifest = new_manifest(rad, wsi)
        self.state.store.append(manifest)
        ctx = self.state.pipeline_context()
        self.state.executor.submit(run_link_pipeline, rad, wsi, ctx, manifest)
        self._send_json({"id": manifest.id, "status": manifest.status}, status=202)

    def _link_list(self) -> None:
        self._send_json([m.to_json_dict() for m in self.state.store.list()])

    def _link_get(self, manifest_id: str) -> None:
        manifest = self.state.store.get(manifest_id)
        if manifest is None:
            raise ApiError(404, "no manifest %s" % manifest_id)
        self._send_json(manifest.to_json_dict())

    def _regions(self, series_uid: str, slice_text: str) -> None:
        query = self._query()
        min_pixels = int(query.get("min_pixels", overlay.DEFAULT_MIN_PIXELS))
        slice_index = int(slice_text)
        slice_count, regions = self.state.regions_for(series_uid, slice_index,
                                                      max(min_pixels, 1))
        self._send_json({
            "seriesUid": series_uid,
            "slice": slice_index,
            "sliceCount": slice_count,
            "regions": [r.to_json_dict() for r in regions],
        })

    def _frame(self, series_uid: str, slice_text: str) -> None:
        volume = self.state.series_volume(series_uid)
        slice_index = int(slice_text)
        if not 0 <= slice_index < volume.geometry.slices:
            raise ApiError(404, "slice %d out of range" % slice_index)
        query = self._query()
        wc = float(query["wc"]) if "wc" in query else None
        ww = float(query["ww"]) if "ww" in query else None
        png = _render_frame_png(volume, slice_index, wc, ww)
        self._send(200, png, "image/png")

    def _linked_wsi(self) -> None:
        query = self._query()
        study_uid = query.get("study", "")
        if not study_uid:
            raise ApiError(400, "study parameter is required")
        try:
            region = int(query.get("region", "1"))
        except ValueError:
            raise ApiError(400, "region must be an integer")
        record = find_linked_wsi(self.state.archive, study_uid, region,
                                 self.state.store.list(), self.state.master)
        self._send_json({"study": _study_record_payload(record) if record else None})

    # -- WSI tiles ------------------------------------------------------

    def _wsi_levels(self, study_uid: str) -> list[tuple[str, str]]:
        """(series_uid, sop_uid) per pyramid level, coarse ordering by
        InstanceNumber then SOP UID."""
        levels = []
        for series in dw.qido_series(self.state.archive, study_uid, {"Modality": "SM"}):
            for sop_uid in dw.qido_instances(self.state.archive, study_uid,
                                             series.series_uid):
                ds = dw.wado_metadata(self.state.archive, study_uid,
                                      series.series_uid, sop_uid)
                number = get_int(ds, tag_for("InstanceNumber")) or 0
                levels.append((number, sop_uid, series.series_uid))
        if not levels:
            raise ApiError(404, "study %s has no SM instances" % study_uid)
        levels.sort()
        return [(series_uid, sop_uid) for _, sop_uid, series_uid in levels]

    def _wsi_pixels(self, study_uid: str, level: int) -> np.ndarray:
        levels = self._wsi_levels(study_uid)
        if not 0 <= level < len(levels):
            raise ApiError(404, "level %d out of range" % level)
        series_uid, sop_uid = levels[level]
        raw = dw.wado_instance(self.state.archive, study_uid, series_uid, sop_uid)
        body = dc.parse_part10(raw).body
        rows = get_int(body, tag_for("Rows")) or 0
        cols = get_int(body, tag_for("Columns")) or 0
        payload = dc.get_bytes(body, tag_for("PixelData")) or b""
        bits = get_int(body, tag_for("BitsAllocated")) or 8
        if rows <= 0 or cols <= 0 or not payload:
            raise ApiError(404, "level %d carries no image" % level)
        if bits == 8:
            pixels = np.frombuffer(payload[:rows * cols], dtype=np.uint8)
        else:
            data = np.frombuffer(payload[:rows * cols * 2], dtype="<u2").astype(np.float64)
            top = max(float(data.max()), 1.0)
            pixels = (data / top * 255.0).astype(np.uint8)
        return pixels.reshape(rows, cols)

    def _wsi_info(self, study_uid: str) -> None:
        levels = []
        for index, (series_uid, sop_uid) in enumerate(self._wsi_levels(study_uid)):
            ds = dw.wado_metadata(self.state.archive, study_uid, series_uid, sop_uid)
            levels.append({
                "level": index,
                "rows": get_int(ds, tag_for("Rows")) or 0,
                "cols": get_int(ds, tag_for("Columns")) or 0,
                "tileSize": WSI_TILE_SIZE,
            })
        self._send_json({"studyUid": study_uid, "levels": levels})

    def _wsi_tile(self, study_uid: str, level_text: str, x_text: str,
                  y_text: str) -> None:
        level, x, y = int(level_text), int(x_text), int(y_text)
        pixels = self._wsi_pixels(study_uid, level)
        png = _tile_png(pixels, pixels.shape[0], pixels.shape[1], x, y)
        self._send(200, png, "image/png")

    # -- static assets ----------------------------------------------------

    _CONTENT_TYPES = {
        ".html": "text/html", ".js": "text/javascript", ".css": "text/css",
        ".map": "application/json", ".json": "application/json",
        ".svg": "image/svg+xml", ".png": "image/png", ".ico": "image/x-icon",
    }

    def _serve_static(self, path: str) -> bool:
        assert self.static_dir is not None
        name = path.lstrip("/") or "index.html"
        target = (self.static_dir / name).resolve()
        if not str(target).startswith(str(self.static_dir.resolve())) \
                or not target.is_file():
            return False
        content_type = self._CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        self._send(200, target.read_bytes(), content_type)
        return True


class ApiServer:
    """Running API service; stop() drains workers and closes the socket."""

    def __init__(self, config: ServiceConfig, static_dir: Optional[str] = None):
        config.validate()
        self.state = _ApiState(config)
        handler = type("BoundApiHandler", (_ApiHandler,), {
            "state": self.state,
            "static_dir": Path(static_dir) if static_dir else None,
        })
        self._httpd = ThreadingHTTPServer(config.bind_address, handler)
        self._thread = threading.Thread(
            target=lambda: self._httpd.serve_forever(poll_interval=0.05),
            name="link-api", daemon=True)

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return "http://%s:%d" % (host, port)

    def start(self) -> "ApiServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._thread.join(timeout=10)
        self._httpd.server_close()
        self.state.close()


def serve_api(config: ServiceConfig, static_dir: Optional[str] = None) -> ApiServer:
    """Start the REST API; returns the running handle."""
    return ApiServer(config, static_dir=static_dir).start()
