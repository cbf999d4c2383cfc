"""End-to-end link pipeline and study pairing.

The pipeline walks one radiology/WSI pair through resolution, volume
assembly, segmentation, SEG encoding and upload, advancing and persisting
the manifest at every stage boundary. A stage failure marks the manifest
Failed with a stage-prefixed message instead of raising.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import dicomweb as dw
from . import dicom_core as dc
from .anatomy import AnatomyMaster, ResolvedBodyPart, default_master, normalize_text, \
    resolve_study
from .dicom_core import DataSet, get_string, tag_for
from .engine import EngineConfig, run_engine
from .manifests import LinkManifest, LinkStatus, ManifestStore, new_manifest
from .seg import SegObject, encode_seg, decode_seg, generate_seg_meta
from .volume import ScalarVolume, assemble_volume, sort_by_position

log = logging.getLogger(__name__)


class PipelineError(Exception):
    """A stage failed; message carries the stage name."""


@dataclass
class PipelineContext:
    archive: str
    master: AnatomyMaster = field(default_factory=default_master)
    engine: EngineConfig = field(default_factory=EngineConfig)
    store: Optional[ManifestStore] = None
    seg_meta_dir: Optional[Path] = None


def discover_pairs(archive: str) -> list[tuple[dw.StudyRecord, dw.StudyRecord]]:
    """Pair every SM study with every MR/CT study of the same patient.

    Pairs whose members lack at least one non-empty series are excluded,
    with the reason logged.
    """
    studies = dw.qido_studies(archive)
    by_patient: dict[str, list[dw.StudyRecord]] = {}
    for record in studies:
        if not record.patient_id:
            log.info("study %s has no PatientID; skipping", record.study_uid)
            continue
        by_patient.setdefault(record.patient_id, []).append(record)

    def complete(record: dw.StudyRecord) -> bool:
        series = dw.qido_series(archive, record.study_uid)
        if any(s.instance_count >= 1 for s in series):
            return True
        log.info("study %s excluded: no series with instances", record.study_uid)
        return False

    pairs = []
    for patient_id in sorted(by_patient):
        group = by_patient[patient_id]
        wsi_studies = [r for r in group if "SM" in r.modalities_in_study]
        rad_studies = [r for r in group
                       if r.modalities_in_study & {"MR", "CT"}]
        for wsi in wsi_studies:
            for rad in rad_studies:
                if rad.study_uid == wsi.study_uid:
                    continue
                if complete(rad) and complete(wsi):
                    pairs.append((rad, wsi))
    return pairs


def _study_datasets(archive: str, study_uid: str,
                    modalities: Optional[set[str]] = None,
                    metadata_only: bool = True) -> list[DataSet]:
    """All instance datasets of a study, optionally restricted by modality."""
    datasets = []
    for series in dw.qido_series(archive, study_uid):
        if modalities and series.modality not in modalities:
            continue
        for sop_uid in dw.qido_instances(archive, study_uid, series.series_uid):
            if metadata_only:
                datasets.append(dw.wado_metadata(
                    archive, study_uid, series.series_uid, sop_uid))
            else:
                raw = dw.wado_instance(archive, study_uid, series.series_uid, sop_uid)
                datasets.append(dc.parse_part10(raw).body)
    return datasets


def _pick_image_series(archive: str, study_uid: str) -> dw.SeriesRecord:
    series = dw.qido_series(archive, study_uid)
    candidates = [s for s in series if s.modality in ("MR", "CT") and s.instance_count >= 1]
    if not candidates:
        raise PipelineError("study %s has no MR/CT series with instances" % study_uid)
    return candidates[0]


def _retrieve_series_instances(archive: str, study_uid: str,
                               series_uid: str) -> list[DataSet]:
    instances = []
    for sop_uid in dw.qido_instances(archive, study_uid, series_uid):
        raw = dw.wado_instance(archive, study_uid, series_uid, sop_uid)
        instances.append(dc.parse_part10(raw).body)
    if not instances:
        raise PipelineError("series %s has no instances" % series_uid)
    return instances


def _persist(ctx: PipelineContext, manifest: LinkManifest) -> LinkManifest:
    if ctx.store is not None:
        ctx.store.append(manifest)
    return manifest


def _write_seg_meta_descriptor(ctx: PipelineContext, manifest: LinkManifest,
                               seg: SegObject) -> None:
    if ctx.seg_meta_dir is None:
        return
    ctx.seg_meta_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "manifestId": manifest.id,
        "segSeriesUid": seg.series_uid,
        "referencedSeriesUid": seg.referenced_series_uid,
        "segments": [meta.to_json_dict() for meta, _ in seg.segments],
    }
    path = ctx.seg_meta_dir / ("%s.json" % manifest.id)
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")


def run_link_pipeline(radiology_study_uid: str, wsi_study_uid: str,
                      ctx: PipelineContext,
                      manifest: Optional[LinkManifest] = None) -> LinkManifest:
    """Run the full pipeline for one pair; returns the final manifest.

    Stage errors never propagate: the manifest comes back Failed with a
    stage-prefixed error message.
    """
    manifest = manifest or new_manifest(radiology_study_uid, wsi_study_uid)
    if manifest.status == LinkStatus.PENDING and \
            (ctx.store is None or ctx.store.get(manifest.id) is None):
        _persist(ctx, manifest)

    stage = "Resolving"
    try:
        manifest = _persist(ctx, manifest.advance(LinkStatus.RESOLVING))
        wsi_datasets = _study_datasets(ctx.archive, wsi_study_uid)
        if not wsi_datasets:
            raise PipelineError("WSI study %s has no instances" % wsi_study_uid)
        resolved = resolve_study(wsi_datasets, ctx.master)
        if resolved is None:
            raise PipelineError("no resolvable body part in WSI metadata")
        manifest = _persist(
            ctx, manifest.advance(LinkStatus.SEGMENTING, body_part=resolved))

        stage = "Segmenting"
        series = _pick_image_series(ctx.archive, radiology_study_uid)
        instances = _retrieve_series_instances(
            ctx.archive, radiology_study_uid, series.series_uid)
        volume = assemble_volume(instances)
        result = run_engine(volume, resolved, ctx.engine)
        if result.mask.set_count == 0:
            raise PipelineError(
                "engine produced an empty mask for %r" % resolved.label)
        manifest = _persist(ctx, manifest.advance(LinkStatus.ENCODING))

        stage = "Encoding"
        meta = generate_seg_meta(resolved, result.engine_name)
        seg = encode_seg([(meta, result.mask)], instances, volume.geometry)
        manifest = _persist(ctx, manifest.advance(LinkStatus.UPLOADING))

        stage = "Uploading"
        store_result = dw.stow_store(ctx.archive, [seg.file])
        if store_result.failed:
            raise PipelineError("archive rejected SEG: %s" % store_result.failed)
        manifest = _persist(ctx, manifest.advance(
            LinkStatus.COMPLETE, seg_series_uid=seg.series_uid))
        _write_seg_meta_descriptor(ctx, manifest, seg)
    except Exception as exc:  # every stage failure lands in the manifest
        message = str(exc) or type(exc).__name__
        log.warning("pipeline %s failed at %s: %s", manifest.id, stage, message)
        manifest = _persist(ctx, manifest.advance(
            LinkStatus.FAILED, error="%s: %s" % (stage, message)))
    return manifest


def _seg_target_label(archive: str, radiology_study_uid: str,
                      master: AnatomyMaster) -> Optional[str]:
    """Body-part label of the newest SEG in the study, if one exists."""
    best: Optional[tuple[str, str, str]] = None  # (label, content stamp, sop uid)
    for series in dw.qido_series(archive, radiology_study_uid, {"Modality": "SEG"}):
        for sop_uid in dw.qido_instances(archive, radiology_study_uid, series.series_uid):
            raw = dw.wado_instance(archive, radiology_study_uid, series.series_uid, sop_uid)
            try:
                file = dc.parse_part10(raw)
                segments = decode_seg(file)
            except Exception:
                continue
            content = (get_string(file.body, tag_for("ContentDate")) or "") + \
                (get_string(file.body, tag_for("ContentTime")) or "")
            for meta, _ in segments:
                label = meta.label.lower()
                if master.entry_for_token(label) is not None \
                        and (best is None or (content, sop_uid) > best[1:]):
                    best = (label, content, sop_uid)
    return best[0] if best else None


def find_linked_wsi(archive: str, radiology_study_uid: str, region_id: int,
                    manifests: list[LinkManifest],
                    master: Optional[AnatomyMaster] = None) -> Optional[dw.StudyRecord]:
    """The WSI study linked to a clicked overlay region.

    Complete manifests for the radiology study win. Without one, the
    archive is queried live: SM studies of the same patient whose
    BodyPartExamined resolves to the same label as the study's SEG (or,
    failing that, the radiology study's own metadata).
    """
    master = master or default_master()
    complete = [m for m in manifests
                if m.status == LinkStatus.COMPLETE
                and m.radiology_study_uid == radiology_study_uid]
    if complete:
        target = max(complete, key=lambda m: m.updated_at)
        records = dw.qido_studies(archive, {"StudyInstanceUID": target.wsi_study_uid})
        if records:
            return records[0]

    rad_records = dw.qido_studies(archive, {"StudyInstanceUID": radiology_study_uid})
    if not rad_records or not rad_records[0].patient_id:
        return None
    patient_id = rad_records[0].patient_id

    label = _seg_target_label(archive, radiology_study_uid, master)
    if label is None:
        datasets = _study_datasets(archive, radiology_study_uid, modalities={"MR", "CT"})
        resolved = resolve_study(datasets, master) if datasets else None
        label = resolved.label if resolved else None
    if label is None:
        return None

    for candidate in dw.qido_studies(
            archive, {"PatientID": patient_id, "ModalitiesInStudy": "SM"}):
        for series in dw.qido_series(archive, candidate.study_uid):
            bpe = _series_body_part(archive, candidate.study_uid, series.series_uid)
            if bpe is None:
                continue
            token, _ = normalize_text(bpe)
            entry = master.entry_for_token(token)
            if entry and entry.canonical_label == label:
                return candidate
    return None


def _series_body_part(archive: str, study_uid: str, series_uid: str) -> Optional[str]:
    for record in dw.qido_series(archive, study_uid, {"SeriesInstanceUID": series_uid}):
        if record.series_uid == series_uid:
            break
    for sop_uid in dw.qido_instances(archive, study_uid, series_uid)[:1]:
        ds = dw.wado_metadata(archive, study_uid, series_uid, sop_uid)
        return get_string(ds, tag_for("BodyPartExamined"))
    return None
