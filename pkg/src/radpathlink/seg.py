"""DICOM Segmentation Storage encoding and decoding.

Only BINARY segmentations with 1-bit packed frames are produced and
consumed. Frames are packed least-significant bit first and padded to a
byte boundary per frame, ordered segment-major then slice-ascending.
"""

from __future__ import annotations

import datetime
import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import dicom_core as dc
from .anatomy import ResolvedBodyPart
from .dicom_core import CodeItem, DataSet, DicomFile, get_code_items, get_float, \
    get_floats, get_int, get_sequence, get_string, tag_for
from .volume import BinaryMask, GeometryMismatch, VolumeGeometry, _cross, _dot, \
    _unit, sort_by_position


class SegError(Exception):
    """Base class for SEG codec failures."""


class EmptyMask(SegError):
    """An all-zero segment mask; encoding one indicates a pipeline failure."""


class MissingReference(SegError):
    """Reference series does not line up with the mask grid."""


class UnsupportedSegType(SegError):
    """Dataset is not a BINARY segmentation object."""


class MalformedFunctionalGroups(SegError):
    """Per-frame bookkeeping disagrees with the frame payload."""


class AlgorithmType(enum.Enum):
    AUTOMATIC = "AUTOMATIC"
    MANUAL = "MANUAL"


@dataclass(frozen=True)
class SegmentMeta:
    """Descriptive metadata of one encoded segment."""

    label: str
    anatomy_code: CodeItem
    algorithm_type: AlgorithmType = AlgorithmType.AUTOMATIC
    algorithm_name: str = ""

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("segment label must be non-empty")
        if self.anatomy_code.scheme != "SCT":
            raise ValueError("anatomy code scheme must be SCT")

    def to_json_dict(self) -> dict:
        return {
            "label": self.label,
            "anatomy_code": {
                "value": self.anatomy_code.code_value,
                "scheme": self.anatomy_code.scheme,
                "meaning": self.anatomy_code.meaning,
            },
            "algorithm_type": self.algorithm_type.value,
            "algorithm_name": self.algorithm_name,
        }


@dataclass
class SegObject:
    """An encoded segmentation: the Part-10 file plus its decoded view."""

    file: DicomFile
    segments: list[tuple[SegmentMeta, BinaryMask]]
    referenced_series_uid: str
    referenced_instance_uids: list[str]

    @property
    def series_uid(self) -> str:
        return get_string(self.file.body, tag_for("SeriesInstanceUID")) or ""

    @property
    def sop_instance_uid(self) -> str:
        return get_string(self.file.body, tag_for("SOPInstanceUID")) or ""


def generate_seg_meta(resolved: ResolvedBodyPart, engine_name: str) -> SegmentMeta:
    """Segment metadata for a resolved body part and the engine that drew it."""
    return SegmentMeta(
        label=resolved.label.title(),
        anatomy_code=resolved.code,
        algorithm_type=AlgorithmType.AUTOMATIC,
        algorithm_name=engine_name,
    )


def frame_byte_length(rows: int, cols: int) -> int:
    return math.ceil(rows * cols / 8)


def pack_frame(bits: np.ndarray) -> bytes:
    """Pack one slice of bits LSB-first, padded to a byte boundary."""
    flat = np.asarray(bits, dtype=bool).reshape(-1)
    return np.packbits(flat, bitorder="little").tobytes()


def unpack_frame(raw: bytes, rows: int, cols: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
    return bits[:rows * cols].astype(bool).reshape(rows, cols)


def _ds_text(values: Sequence[float]) -> str:
    # repr of a Python float round-trips exactly; DICOM's 16-char DS cap is
    # deliberately not enforced (lenient profile, see module docs).
    return "\\".join(repr(float(v)) for v in values)


def _code_item_dataset(code: CodeItem) -> DataSet:
    ds = DataSet()
    ds.put_keyword("CodeValue", code.code_value)
    ds.put_keyword("CodingSchemeDesignator", code.scheme)
    ds.put_keyword("CodeMeaning", code.meaning)
    return ds


_GENERIC_CATEGORY = CodeItem("123037004", "SCT", "Anatomical Structure")

_COPIED_FROM_REFERENCE = (
    "PatientName", "PatientID", "PatientBirthDate", "PatientSex",
    "StudyInstanceUID", "StudyDate", "StudyTime", "StudyID", "AccessionNumber",
)


def encode_seg(masks: Sequence[tuple[SegmentMeta, BinaryMask]],
               reference: Sequence[DataSet],
               source_geometry: VolumeGeometry) -> SegObject:
    """Encode masks as one Segmentation Storage object referencing the
    source series.

    Every mask must sit on exactly the source grid, and the reference must
    supply one instance per slice. Frames for all slices of each segment are
    emitted, empty planes included, so frame index k of segment s maps to
    slice k.
    """
    if not masks:
        raise SegError("no segments to encode")
    for meta, mask in masks:
        if mask.geometry != source_geometry:
            raise GeometryMismatch("segment %r not on the source grid" % meta.label)
        if mask.set_count == 0:
            raise EmptyMask("segment %r has no set voxels" % meta.label)

    if len(reference) != source_geometry.slices:
        raise MissingReference(
            "need %d reference instances, got %d" % (source_geometry.slices, len(reference)))
    ordered = sort_by_position(list(reference))
    ref_series_uid = get_string(ordered[0], tag_for("SeriesInstanceUID"))
    if not ref_series_uid:
        raise MissingReference("reference instances carry no SeriesInstanceUID")
    instance_uids = []
    instance_class_uids = []
    for ds in ordered:
        sop_uid = get_string(ds, tag_for("SOPInstanceUID"))
        if not sop_uid:
            raise MissingReference("reference instance without SOPInstanceUID")
        instance_uids.append(sop_uid)
        instance_class_uids.append(
            get_string(ds, tag_for("SOPClassUID")) or dc.MR_IMAGE_STORAGE)

    g = source_geometry
    now = datetime.datetime.now()
    body = DataSet()
    body.put_keyword("SOPClassUID", dc.SEGMENTATION_STORAGE)
    body.put_keyword("SOPInstanceUID", dc.new_uid())
    body.put_keyword("Modality", "SEG")
    body.put_keyword("SeriesInstanceUID", dc.new_uid())
    body.put_keyword("SeriesNumber", "99")
    body.put_keyword("InstanceNumber", "1")
    body.put_keyword("ImageType", "DERIVED\\PRIMARY")
    body.put_keyword("ContentDate", now.strftime("%Y%m%d"))
    body.put_keyword("ContentTime", now.strftime("%H%M%S"))
    body.put_keyword("ContentLabel", "SEGMENTATION")
    body.put_keyword("ContentDescription",
                     ", ".join(meta.label for meta, _ in masks))
    body.put_keyword("ContentCreatorName", "radpathlink")
    body.put_keyword("Manufacturer", "radpathlink")
    body.put_keyword("SeriesDescription",
                     "%s segmentation" % masks[0][0].label)

    for keyword in _COPIED_FROM_REFERENCE:
        value = get_string(ordered[0], tag_for(keyword))
        if value is not None:
            body.put_keyword(keyword, value)
    frame_of_ref = get_string(ordered[0], tag_for("FrameOfReferenceUID"))
    body.put_keyword("FrameOfReferenceUID", frame_of_ref or dc.new_uid())

    body.put_keyword("SamplesPerPixel", [1])
    body.put_keyword("PhotometricInterpretation", "MONOCHROME2")
    body.put_keyword("Rows", [g.rows])
    body.put_keyword("Columns", [g.cols])
    body.put_keyword("BitsAllocated", [1])
    body.put_keyword("BitsStored", [1])
    body.put_keyword("HighBit", [0])
    body.put_keyword("PixelRepresentation", [0])
    body.put_keyword("LossyImageCompression", "00")
    body.put_keyword("SegmentationType", "BINARY")
    body.put_keyword("NumberOfFrames", str(len(masks) * g.slices))

    segment_items = []
    for number, (meta, _) in enumerate(masks, start=1):
        item = DataSet()
        item.put_keyword("SegmentNumber", [number])
        item.put_keyword("SegmentLabel", meta.label)
        item.put_keyword("SegmentAlgorithmType", meta.algorithm_type.value)
        if meta.algorithm_name:
            item.put_keyword("SegmentAlgorithmName", meta.algorithm_name)
        item.put_keyword("SegmentedPropertyCategoryCodeSequence",
                         [_code_item_dataset(_GENERIC_CATEGORY)])
        item.put_keyword("SegmentedPropertyTypeCodeSequence",
                         [_code_item_dataset(meta.anatomy_code)])
        segment_items.append(item)
    body.put_keyword("SegmentSequence", segment_items)

    orientation = DataSet()
    orientation.put_keyword("ImageOrientationPatient",
                            _ds_text(list(g.row_dir) + list(g.col_dir)))
    measures = DataSet()
    measures.put_keyword("PixelSpacing", _ds_text([g.spacing[1], g.spacing[0]]))
    measures.put_keyword("SliceThickness", _ds_text([g.spacing[2]]))
    measures.put_keyword("SpacingBetweenSlices", _ds_text([g.spacing[2]]))
    shared = DataSet()
    shared.put_keyword("PlaneOrientationSequence", [orientation])
    shared.put_keyword("PixelMeasuresSequence", [measures])
    body.put_keyword("SharedFunctionalGroupsSequence", [shared])

    # Copy plane positions verbatim from the reference so they stay
    # byte-identical with the source series.
    positions = []
    for ds in ordered:
        el = ds.get(tag_for("ImagePositionPatient"))
        positions.append(el.value if el is not None else _ds_text(g.slice_origin(0)))

    per_frame_items = []
    frames = bytearray()
    for number, (_, mask) in enumerate(masks, start=1):
        for k in range(g.slices):
            source_item = DataSet()
            source_item.put_keyword("ReferencedSOPClassUID", instance_class_uids[k])
            source_item.put_keyword("ReferencedSOPInstanceUID", instance_uids[k])
            derivation = DataSet()
            derivation.put_keyword("SourceImageSequence", [source_item])
            ident = DataSet()
            ident.put_keyword("ReferencedSegmentNumber", [number])
            plane = DataSet()
            plane.put_keyword("ImagePositionPatient", positions[k])
            frame_item = DataSet()
            frame_item.put_keyword("DerivationImageSequence", [derivation])
            frame_item.put_keyword("SegmentIdentificationSequence", [ident])
            frame_item.put_keyword("PlanePositionSequence", [plane])
            per_frame_items.append(frame_item)
            frames += pack_frame(mask.bits[k])
    body.put_keyword("PerFrameFunctionalGroupsSequence", per_frame_items)

    ref_instances = []
    for class_uid, sop_uid in zip(instance_class_uids, instance_uids):
        item = DataSet()
        item.put_keyword("ReferencedSOPClassUID", class_uid)
        item.put_keyword("ReferencedSOPInstanceUID", sop_uid)
        ref_instances.append(item)
    ref_series = DataSet()
    ref_series.put_keyword("SeriesInstanceUID", ref_series_uid)
    ref_series.put_keyword("ReferencedInstanceSequence", ref_instances)
    body.put_keyword("ReferencedSeriesSequence", [ref_series])

    if len(frames) % 2:
        frames += b"\x00"  # keep the in-memory value even, like the wire form
    body.put(tag_for("PixelData"), "OB", bytes(frames))

    return SegObject(
        file=dc.wrap_dataset(body),
        segments=[(meta, mask) for meta, mask in masks],
        referenced_series_uid=ref_series_uid,
        referenced_instance_uids=instance_uids,
    )


def _segment_metas(body: DataSet) -> dict[int, SegmentMeta]:
    metas: dict[int, SegmentMeta] = {}
    for item in get_sequence(body, tag_for("SegmentSequence")):
        number = get_int(item, tag_for("SegmentNumber"))
        if number is None:
            raise MalformedFunctionalGroups("segment without SegmentNumber")
        codes = get_code_items(item, tag_for("SegmentedPropertyTypeCodeSequence"))
        code = codes[0] if codes else CodeItem("", "SCT", "")
        algo = get_string(item, tag_for("SegmentAlgorithmType")) or "AUTOMATIC"
        try:
            algo_type = AlgorithmType(algo)
        except ValueError:
            algo_type = AlgorithmType.AUTOMATIC
        metas[number] = SegmentMeta(
            label=get_string(item, tag_for("SegmentLabel")) or "segment %d" % number,
            anatomy_code=CodeItem(code.code_value, "SCT", code.meaning),
            algorithm_type=algo_type,
            algorithm_name=get_string(item, tag_for("SegmentAlgorithmName")) or "",
        )
    return metas


def decode_seg(file: DicomFile) -> list[tuple[SegmentMeta, BinaryMask]]:
    """Decode a BINARY segmentation into per-segment masks.

    Frames are grouped by their referenced segment number and ordered by
    plane position, so the output is independent of frame order in the file.
    """
    body = file.body
    if get_string(body, tag_for("SOPClassUID")) != dc.SEGMENTATION_STORAGE:
        raise UnsupportedSegType("not a Segmentation Storage object")
    seg_type = get_string(body, tag_for("SegmentationType"))
    if seg_type != "BINARY":
        raise UnsupportedSegType("SegmentationType %r" % seg_type)

    rows = get_int(body, tag_for("Rows"))
    cols = get_int(body, tag_for("Columns"))
    n_frames = get_int(body, tag_for("NumberOfFrames"))
    if not rows or not cols or n_frames is None:
        raise MalformedFunctionalGroups("Rows/Columns/NumberOfFrames missing")

    per_frame = get_sequence(body, tag_for("PerFrameFunctionalGroupsSequence"))
    if len(per_frame) != n_frames:
        raise MalformedFunctionalGroups(
            "NumberOfFrames=%d but %d per-frame items" % (n_frames, len(per_frame)))

    raw = None
    el = body.get(tag_for("PixelData"))
    if el is not None and isinstance(el.value, bytes):
        raw = el.value
    if raw is None:
        raise MalformedFunctionalGroups("PixelData missing")
    frame_len = frame_byte_length(rows, cols)
    if len(raw) < frame_len * n_frames:
        raise MalformedFunctionalGroups("PixelData shorter than the declared frames")

    shared_items = get_sequence(body, tag_for("SharedFunctionalGroupsSequence"))
    iop: Optional[list[float]] = None
    dx = dy = dz_hint = None
    if shared_items:
        shared = shared_items[0]
        for o in get_sequence(shared, tag_for("PlaneOrientationSequence")):
            vals = get_floats(o, tag_for("ImageOrientationPatient"))
            if len(vals) == 6:
                iop = vals
        for mitem in get_sequence(shared, tag_for("PixelMeasuresSequence")):
            ps = get_floats(mitem, tag_for("PixelSpacing"))
            if len(ps) == 2:
                dy, dx = float(ps[0]), float(ps[1])
            dz_hint = get_float(mitem, tag_for("SpacingBetweenSlices")) or \
                get_float(mitem, tag_for("SliceThickness")) or dz_hint
    if iop is None or dx is None or dy is None:
        raise MalformedFunctionalGroups("shared plane orientation or spacing missing")
    row_dir = _unit(iop[0:3])
    col_dir = _unit(iop[3:6])
    normal = _cross(row_dir, col_dir)

    per_segment: dict[int, list[tuple[float, tuple[float, float, float], int]]] = {}
    for index, item in enumerate(per_frame):
        idents = get_sequence(item, tag_for("SegmentIdentificationSequence"))
        number = get_int(idents[0], tag_for("ReferencedSegmentNumber")) if idents else None
        if number is None:
            raise MalformedFunctionalGroups("frame %d lacks a segment reference" % index)
        planes = get_sequence(item, tag_for("PlanePositionSequence"))
        pos = get_floats(planes[0], tag_for("ImagePositionPatient")) if planes else []
        if len(pos) != 3:
            raise MalformedFunctionalGroups("frame %d lacks a plane position" % index)
        projection = _dot(pos, normal)
        per_segment.setdefault(number, []).append(
            (projection, (pos[0], pos[1], pos[2]), index))

    metas = _segment_metas(body)
    for number in per_segment:
        if number not in metas:
            raise MalformedFunctionalGroups(
                "frames reference segment %d absent from SegmentSequence" % number)

    result = []
    for number in sorted(per_segment):
        entries = sorted(per_segment[number], key=lambda e: e[0])
        projections = [e[0] for e in entries]
        if len(entries) > 1:
            gaps = [b - a for a, b in zip(projections, projections[1:])]
            dz = sum(gaps) / len(gaps)
            if dz <= 0:
                raise MalformedFunctionalGroups(
                    "segment %d has coincident frame positions" % number)
        else:
            dz = dz_hint or 1.0
        geometry = VolumeGeometry(
            rows=rows, cols=cols, slices=len(entries),
            spacing=(dx, dy, float(dz)),
            row_dir=row_dir, col_dir=col_dir, origin=entries[0][1])
        bits = np.zeros((len(entries), rows, cols), dtype=bool)
        for k, (_, _, index) in enumerate(entries):
            frame = raw[index * frame_len:(index + 1) * frame_len]
            bits[k] = unpack_frame(frame, rows, cols)
        result.append((metas[number], BinaryMask(geometry, bits)))
    return result
