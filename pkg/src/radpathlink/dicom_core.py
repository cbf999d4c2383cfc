"""DICOM Part-10 file reading and writing.

Covers the two uncompressed little-endian transfer syntaxes and a small
built-in tag dictionary. Anything the dictionary does not know round-trips
as an opaque byte payload. Parsing is lenient, serialization is strict.
"""

from __future__ import annotations

import struct
import uuid
from dataclasses import dataclass
from typing import Iterator, Optional, Union

IMPLICIT_VR_LE = "1.2.840.10008.1.2"
EXPLICIT_VR_LE = "1.2.840.10008.1.2.1"
SUPPORTED_TRANSFER_SYNTAXES = (IMPLICIT_VR_LE, EXPLICIT_VR_LE)

SEGMENTATION_STORAGE = "1.2.840.10008.5.1.4.1.1.66.4"
MR_IMAGE_STORAGE = "1.2.840.10008.5.1.4.1.1.4"
VL_WHOLE_SLIDE_MICROSCOPY_STORAGE = "1.2.840.10008.5.1.4.1.1.77.1.6"

# Arbitrary UUID-derived UID identifying this implementation in file meta.
IMPLEMENTATION_CLASS_UID = "2.25.313988069418544931371533279467233544181"
IMPLEMENTATION_VERSION = "RADPATHLINK01"


class DicomError(Exception):
    """Base class for codec failures."""


class MagicMissing(DicomError):
    """Stream does not carry the DICM marker after the preamble."""


class Truncated(DicomError):
    """Stream ended or was inconsistent mid-element."""


class UnsupportedTransferSyntax(DicomError):
    """Only the uncompressed little-endian syntaxes are handled here."""


class InvariantViolation(DicomError):
    """File violates a structural invariant required for writing."""


@dataclass(frozen=True, order=True)
class Tag:
    """A (group, element) attribute tag, ordered lexicographically."""

    group: int
    element: int

    def __str__(self) -> str:
        return "(%04X,%04X)" % (self.group, self.element)


def _t(group: int, element: int) -> Tag:
    return Tag(group, element)


# VR families. DS and IS are kept as text so the original formatting
# survives a round trip; use get_floats/get_ints to interpret them.
TEXT_VRS = frozenset(
    {"AE", "AS", "CS", "DA", "DS", "DT", "IS", "LO", "LT", "PN", "SH", "ST",
     "TM", "UC", "UI", "UR", "UT"}
)
INT_VRS = frozenset({"SL", "SS", "UL", "US"})
FLOAT_VRS = frozenset({"FL", "FD"})
BYTE_VRS = frozenset({"AT", "OB", "OD", "OF", "OL", "OW", "UN"})

# VRs using the 12-byte explicit header (2 reserved bytes + 4-byte length).
_LONG_HEADER_VRS = frozenset({"OB", "OD", "OF", "OL", "OW", "SQ", "UC", "UN", "UR", "UT"})

_INT_FORMATS = {"US": "<H", "UL": "<I", "SS": "<h", "SL": "<i"}
_FLOAT_FORMATS = {"FL": "<f", "FD": "<d"}

_UNDEFINED_LENGTH = 0xFFFFFFFF
_ITEM_TAG = _t(0xFFFE, 0xE000)
_ITEM_DELIM_TAG = _t(0xFFFE, 0xE00D)
_SEQ_DELIM_TAG = _t(0xFFFE, 0xE0DD)

# The subset of PS3.6 this pipeline touches. Everything else is UN.
DICTIONARY: dict[Tag, tuple[str, str]] = {
    _t(0x0002, 0x0000): ("UL", "FileMetaInformationGroupLength"),
    _t(0x0002, 0x0001): ("OB", "FileMetaInformationVersion"),
    _t(0x0002, 0x0002): ("UI", "MediaStorageSOPClassUID"),
    _t(0x0002, 0x0003): ("UI", "MediaStorageSOPInstanceUID"),
    _t(0x0002, 0x0010): ("UI", "TransferSyntaxUID"),
    _t(0x0002, 0x0012): ("UI", "ImplementationClassUID"),
    _t(0x0002, 0x0013): ("SH", "ImplementationVersionName"),
    _t(0x0008, 0x0005): ("CS", "SpecificCharacterSet"),
    _t(0x0008, 0x0008): ("CS", "ImageType"),
    _t(0x0008, 0x0016): ("UI", "SOPClassUID"),
    _t(0x0008, 0x0018): ("UI", "SOPInstanceUID"),
    _t(0x0008, 0x0020): ("DA", "StudyDate"),
    _t(0x0008, 0x0021): ("DA", "SeriesDate"),
    _t(0x0008, 0x0023): ("DA", "ContentDate"),
    _t(0x0008, 0x0030): ("TM", "StudyTime"),
    _t(0x0008, 0x0033): ("TM", "ContentTime"),
    _t(0x0008, 0x0050): ("SH", "AccessionNumber"),
    _t(0x0008, 0x0060): ("CS", "Modality"),
    _t(0x0008, 0x0061): ("CS", "ModalitiesInStudy"),
    _t(0x0008, 0x0070): ("LO", "Manufacturer"),
    _t(0x0008, 0x0090): ("PN", "ReferringPhysicianName"),
    _t(0x0008, 0x0100): ("SH", "CodeValue"),
    _t(0x0008, 0x0102): ("SH", "CodingSchemeDesignator"),
    _t(0x0008, 0x0104): ("LO", "CodeMeaning"),
    _t(0x0008, 0x1030): ("LO", "StudyDescription"),
    _t(0x0008, 0x103E): ("LO", "SeriesDescription"),
    _t(0x0008, 0x1084): ("SQ", "AdmittingDiagnosesCodeSequence"),
    _t(0x0008, 0x1115): ("SQ", "ReferencedSeriesSequence"),
    _t(0x0008, 0x114A): ("SQ", "ReferencedInstanceSequence"),
    _t(0x0008, 0x1150): ("UI", "ReferencedSOPClassUID"),
    _t(0x0008, 0x1155): ("UI", "ReferencedSOPInstanceUID"),
    _t(0x0008, 0x2112): ("SQ", "SourceImageSequence"),
    _t(0x0008, 0x2218): ("SQ", "AnatomicRegionSequence"),
    _t(0x0008, 0x9124): ("SQ", "DerivationImageSequence"),
    _t(0x0010, 0x0010): ("PN", "PatientName"),
    _t(0x0010, 0x0020): ("LO", "PatientID"),
    _t(0x0010, 0x0030): ("DA", "PatientBirthDate"),
    _t(0x0010, 0x0040): ("CS", "PatientSex"),
    _t(0x0018, 0x0015): ("CS", "BodyPartExamined"),
    _t(0x0018, 0x0050): ("DS", "SliceThickness"),
    _t(0x0018, 0x0088): ("DS", "SpacingBetweenSlices"),
    _t(0x0018, 0x1030): ("LO", "ProtocolName"),
    _t(0x0020, 0x000D): ("UI", "StudyInstanceUID"),
    _t(0x0020, 0x000E): ("UI", "SeriesInstanceUID"),
    _t(0x0020, 0x0010): ("SH", "StudyID"),
    _t(0x0020, 0x0011): ("IS", "SeriesNumber"),
    _t(0x0020, 0x0013): ("IS", "InstanceNumber"),
    _t(0x0020, 0x0032): ("DS", "ImagePositionPatient"),
    _t(0x0020, 0x0037): ("DS", "ImageOrientationPatient"),
    _t(0x0020, 0x0052): ("UI", "FrameOfReferenceUID"),
    _t(0x0020, 0x1041): ("DS", "SliceLocation"),
    _t(0x0020, 0x1209): ("IS", "NumberOfSeriesRelatedInstances"),
    _t(0x0020, 0x9113): ("SQ", "PlanePositionSequence"),
    _t(0x0020, 0x9116): ("SQ", "PlaneOrientationSequence"),
    _t(0x0028, 0x0002): ("US", "SamplesPerPixel"),
    _t(0x0028, 0x0004): ("CS", "PhotometricInterpretation"),
    _t(0x0028, 0x0008): ("IS", "NumberOfFrames"),
    _t(0x0028, 0x0010): ("US", "Rows"),
    _t(0x0028, 0x0011): ("US", "Columns"),
    _t(0x0028, 0x0030): ("DS", "PixelSpacing"),
    _t(0x0028, 0x0100): ("US", "BitsAllocated"),
    _t(0x0028, 0x0101): ("US", "BitsStored"),
    _t(0x0028, 0x0102): ("US", "HighBit"),
    _t(0x0028, 0x0103): ("US", "PixelRepresentation"),
    _t(0x0028, 0x1050): ("DS", "WindowCenter"),
    _t(0x0028, 0x1051): ("DS", "WindowWidth"),
    _t(0x0028, 0x1052): ("DS", "RescaleIntercept"),
    _t(0x0028, 0x1053): ("DS", "RescaleSlope"),
    _t(0x0028, 0x2110): ("CS", "LossyImageCompression"),
    _t(0x0028, 0x9110): ("SQ", "PixelMeasuresSequence"),
    _t(0x0062, 0x0001): ("CS", "SegmentationType"),
    _t(0x0062, 0x0002): ("SQ", "SegmentSequence"),
    _t(0x0062, 0x0003): ("SQ", "SegmentedPropertyCategoryCodeSequence"),
    _t(0x0062, 0x0004): ("US", "SegmentNumber"),
    _t(0x0062, 0x0005): ("LO", "SegmentLabel"),
    _t(0x0062, 0x0008): ("CS", "SegmentAlgorithmType"),
    _t(0x0062, 0x0009): ("LO", "SegmentAlgorithmName"),
    _t(0x0062, 0x000A): ("SQ", "SegmentIdentificationSequence"),
    _t(0x0062, 0x000B): ("US", "ReferencedSegmentNumber"),
    _t(0x0062, 0x000F): ("SQ", "SegmentedPropertyTypeCodeSequence"),
    _t(0x0070, 0x0080): ("CS", "ContentLabel"),
    _t(0x0070, 0x0081): ("LO", "ContentDescription"),
    _t(0x0070, 0x0084): ("PN", "ContentCreatorName"),
    _t(0x5200, 0x9229): ("SQ", "SharedFunctionalGroupsSequence"),
    _t(0x5200, 0x9230): ("SQ", "PerFrameFunctionalGroupsSequence"),
    _t(0x7FE0, 0x0010): ("OW", "PixelData"),
}

KEYWORD_TO_TAG: dict[str, Tag] = {kw: tag for tag, (_, kw) in DICTIONARY.items()}


def tag_for(keyword: str) -> Tag:
    return KEYWORD_TO_TAG[keyword]


def vr_for(tag: Tag) -> str:
    entry = DICTIONARY.get(tag)
    return entry[0] if entry else "UN"


def keyword_for(tag: Tag) -> Optional[str]:
    entry = DICTIONARY.get(tag)
    return entry[1] if entry else None


def new_uid() -> str:
    """Generate a UUID-derived UID (2.25 root, always <= 64 chars)."""
    return "2.25.%d" % uuid.uuid4().int


ElementValue = Union[str, list, bytes]


class DataElement:
    """One attribute: tag, VR and a decoded value.

    Values are normalized at construction so that a serialize/parse round
    trip reproduces the element exactly:

    * text VRs store a string with trailing pad characters stripped
    * US/UL/SS/SL store a list of ints, FL/FD a list of floats
      (FL values are snapped to 32-bit precision)
    * byte VRs store raw bytes
    * SQ stores a list of DataSet items
    """

    __slots__ = ("tag", "vr", "value")

    def __init__(self, tag: Tag, vr: str, value: ElementValue):
        if len(vr) != 2 or not vr.isascii():
            raise ValueError("bad VR %r" % vr)
        self.tag = tag
        self.vr = vr
        self.value = self._normalize(vr, value)

    @staticmethod
    def _normalize(vr: str, value: ElementValue) -> ElementValue:
        if vr == "SQ":
            items = list(value)  # type: ignore[arg-type]
            for item in items:
                if not isinstance(item, DataSet):
                    raise ValueError("SQ items must be DataSet instances")
            return items
        if vr in TEXT_VRS:
            if isinstance(value, bytes):
                value = value.decode("latin-1")
            if not isinstance(value, str):
                raise ValueError("%s expects str, got %r" % (vr, type(value)))
            return value.rstrip(" \x00")
        if vr in INT_VRS:
            vals = [value] if isinstance(value, int) else list(value)  # type: ignore[arg-type]
            return [int(v) for v in vals]
        if vr in FLOAT_VRS:
            vals = [value] if isinstance(value, (int, float)) else list(value)  # type: ignore[arg-type]
            vals = [float(v) for v in vals]
            if vr == "FL":
                vals = [struct.unpack("<f", struct.pack("<f", v))[0] for v in vals]
            return vals
        # Remaining VRs (OB/OW/UN/..., unknown alphabetic codes) hold bytes.
        if isinstance(value, str):
            value = value.encode("latin-1")
        return bytes(value)  # type: ignore[arg-type]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DataElement):
            return NotImplemented
        return (self.tag, self.vr, self.value) == (other.tag, other.vr, other.value)

    def __repr__(self) -> str:
        kw = keyword_for(self.tag)
        label = " %s" % kw if kw else ""
        return "<%s%s %s %r>" % (self.tag, label, self.vr, self.value)


class DataSet:
    """An ordered tag -> element map; iteration is ascending tag order."""

    __slots__ = ("_elements",)

    def __init__(self, elements: Optional[list[DataElement]] = None):
        self._elements: dict[Tag, DataElement] = {}
        for el in elements or []:
            self.add(el)

    def add(self, element: DataElement) -> None:
        """Insert an element, replacing any prior element with the same tag."""
        self._elements[element.tag] = element

    def put(self, tag: Tag, vr: str, value: ElementValue) -> None:
        self.add(DataElement(tag, vr, value))

    def put_keyword(self, keyword: str, value: ElementValue) -> None:
        tag = tag_for(keyword)
        self.put(tag, vr_for(tag), value)

    def get(self, tag: Tag) -> Optional[DataElement]:
        return self._elements.get(tag)

    def remove(self, tag: Tag) -> None:
        self._elements.pop(tag, None)

    def __contains__(self, tag: Tag) -> bool:
        return tag in self._elements

    def __iter__(self) -> Iterator[DataElement]:
        return iter(sorted(self._elements.values(), key=lambda e: e.tag))

    def __len__(self) -> int:
        return len(self._elements)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DataSet):
            return NotImplemented
        return self._elements == other._elements

    def __repr__(self) -> str:
        return "DataSet(%d elements)" % len(self._elements)


@dataclass
class DicomFile:
    """A parsed Part-10 file: group-0002 meta plus the main dataset."""

    meta: DataSet
    body: DataSet
    transfer_syntax: str

    def validate(self) -> None:
        for kw in ("MediaStorageSOPClassUID", "MediaStorageSOPInstanceUID",
                   "TransferSyntaxUID"):
            if tag_for(kw) not in self.meta:
                raise InvariantViolation("file meta missing %s" % kw)
        for el in self.body:
            if el.tag.group == 0x0002:
                raise InvariantViolation("group-0002 element %s in body" % el.tag)


# ---------------------------------------------------------------------------
# Typed accessors


@dataclass(frozen=True)
class CodeItem:
    """A coded-concept triplet from a code sequence item."""

    code_value: str
    scheme: str
    meaning: str


def get_string(ds: DataSet, tag: Tag) -> Optional[str]:
    """Trimmed text value of the tag, or None if absent or not a text VR.

    Multi-valued strings stay joined with the backslash separator.
    """
    el = ds.get(tag)
    if el is None or el.vr not in TEXT_VRS:
        return None
    return el.value.strip()


def get_strings(ds: DataSet, tag: Tag) -> list[str]:
    raw = get_string(ds, tag)
    if raw is None or raw == "":
        return []
    return [part.strip() for part in raw.split("\\")]


def get_ints(ds: DataSet, tag: Tag) -> list[int]:
    el = ds.get(tag)
    if el is None:
        return []
    if el.vr in INT_VRS:
        return list(el.value)
    if el.vr in TEXT_VRS:
        return [int(part) for part in get_strings(ds, tag)]
    return []


def get_int(ds: DataSet, tag: Tag) -> Optional[int]:
    vals = get_ints(ds, tag)
    return vals[0] if vals else None


def get_floats(ds: DataSet, tag: Tag) -> list[float]:
    el = ds.get(tag)
    if el is None:
        return []
    if el.vr in FLOAT_VRS:
        return list(el.value)
    if el.vr in INT_VRS:
        return [float(v) for v in el.value]
    if el.vr in TEXT_VRS:
        return [float(part) for part in get_strings(ds, tag)]
    return []


def get_float(ds: DataSet, tag: Tag) -> Optional[float]:
    vals = get_floats(ds, tag)
    return vals[0] if vals else None


def get_bytes(ds: DataSet, tag: Tag) -> Optional[bytes]:
    el = ds.get(tag)
    if el is None or not isinstance(el.value, bytes):
        return None
    return el.value


def get_sequence(ds: DataSet, tag: Tag) -> list[DataSet]:
    el = ds.get(tag)
    if el is None or el.vr != "SQ":
        return []
    return list(el.value)


def get_code_items(ds: DataSet, tag: Tag) -> list[CodeItem]:
    """(CodeValue, CodingSchemeDesignator, CodeMeaning) triplets of a code
    sequence. Items without a CodeValue are skipped."""
    items = []
    for item in get_sequence(ds, tag):
        code_value = get_string(item, tag_for("CodeValue"))
        if not code_value:
            continue
        items.append(CodeItem(
            code_value=code_value,
            scheme=get_string(item, tag_for("CodingSchemeDesignator")) or "",
            meaning=get_string(item, tag_for("CodeMeaning")) or "",
        ))
    return items


# ---------------------------------------------------------------------------
# Parsing


class _Reader:
    """Bounded little-endian byte reader; overruns raise Truncated."""

    __slots__ = ("data", "pos", "end")

    def __init__(self, data: bytes, pos: int = 0, end: Optional[int] = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def remaining(self) -> int:
        return self.end - self.pos

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise Truncated("need %d bytes at offset %d" % (n, self.pos))
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def peek_tag(self) -> Optional[Tag]:
        if self.remaining() < 4:
            return None
        group, element = struct.unpack_from("<HH", self.data, self.pos)
        return Tag(group, element)

    def sub(self, length: int) -> "_Reader":
        if self.pos + length > self.end:
            raise Truncated("declared length %d overruns stream" % length)
        sub = _Reader(self.data, self.pos, self.pos + length)
        self.pos += length
        return sub


def _decode_value(vr: str, raw: bytes) -> ElementValue:
    if vr in TEXT_VRS:
        return raw.decode("latin-1")
    if vr in INT_VRS:
        fmt = _INT_FORMATS[vr]
        size = struct.calcsize(fmt)
        count = len(raw) // size
        return [struct.unpack_from(fmt, raw, i * size)[0] for i in range(count)]
    if vr in FLOAT_VRS:
        fmt = _FLOAT_FORMATS[vr]
        size = struct.calcsize(fmt)
        count = len(raw) // size
        return [struct.unpack_from(fmt, raw, i * size)[0] for i in range(count)]
    return raw


def _read_sequence_items(reader: _Reader, length: int, explicit: bool) -> list[DataSet]:
    items: list[DataSet] = []
    if length == _UNDEFINED_LENGTH:
        while True:
            tag = Tag(reader.u16(), reader.u16())
            item_len = reader.u32()
            if tag == _SEQ_DELIM_TAG:
                return items
            if tag != _ITEM_TAG:
                raise Truncated("unexpected tag %s inside sequence" % tag)
            items.append(_read_item(reader, item_len, explicit))
    else:
        sub = reader.sub(length)
        while sub.remaining() > 0:
            tag = Tag(sub.u16(), sub.u16())
            item_len = sub.u32()
            if tag != _ITEM_TAG:
                raise Truncated("unexpected tag %s inside sequence" % tag)
            items.append(_read_item(sub, item_len, explicit))
        return items


def _read_item(reader: _Reader, length: int, explicit: bool) -> DataSet:
    ds = DataSet()
    if length == _UNDEFINED_LENGTH:
        while True:
            tag = reader.peek_tag()
            if tag is None:
                raise Truncated("unterminated sequence item")
            if tag == _ITEM_DELIM_TAG:
                reader.take(4)
                reader.u32()  # delimiter length, always 0
                return ds
            ds.add(_read_element(reader, explicit))
    else:
        sub = reader.sub(length)
        while sub.remaining() > 0:
            ds.add(_read_element(sub, explicit))
        return ds


def _read_element(reader: _Reader, explicit: bool) -> DataElement:
    tag = Tag(reader.u16(), reader.u16())
    if explicit:
        vr = reader.take(2).decode("ascii", "replace")
        if not (vr.isalpha() and vr.isupper()):
            raise Truncated("corrupt VR %r at %s" % (vr, tag))
        if vr in _LONG_HEADER_VRS:
            reader.take(2)
            length = reader.u32()
        else:
            length = reader.u16()
    else:
        vr = vr_for(tag)
        length = reader.u32()

    if vr == "SQ":
        return DataElement(tag, "SQ", _read_sequence_items(reader, length, explicit))
    if length == _UNDEFINED_LENGTH:
        # Undefined-length non-SQ payloads are encapsulated item streams;
        # the two supported syntaxes only produce them for sequences (UN).
        items = _read_sequence_items(reader, length, explicit=False)
        return DataElement(tag, "SQ", items)
    return DataElement(tag, vr, _decode_value(vr, reader.take(length)))


def parse_part10(data: bytes) -> DicomFile:
    """Parse Part-10 bytes into a DicomFile.

    Raises MagicMissing, Truncated or UnsupportedTransferSyntax. The file
    meta group-length element is consumed during parsing and recomputed on
    write, so it never appears in the returned meta dataset.
    """
    if len(data) < 132:
        raise MagicMissing("stream shorter than preamble plus magic")
    if data[128:132] != b"DICM":
        raise MagicMissing("DICM marker not found")

    reader = _Reader(data, 132)
    meta = DataSet()
    while True:
        tag = reader.peek_tag()
        if tag is None or tag.group != 0x0002:
            break
        el = _read_element(reader, explicit=True)
        if el.tag != _t(0x0002, 0x0000):
            meta.add(el)

    ts = get_string(meta, tag_for("TransferSyntaxUID"))
    if ts is None:
        raise UnsupportedTransferSyntax("file meta carries no TransferSyntaxUID")
    if ts not in SUPPORTED_TRANSFER_SYNTAXES:
        raise UnsupportedTransferSyntax(ts)

    body = DataSet()
    explicit = ts == EXPLICIT_VR_LE
    while reader.remaining() > 0:
        body.add(_read_element(reader, explicit))
    return DicomFile(meta=meta, body=body, transfer_syntax=ts)


# ---------------------------------------------------------------------------
# Serialization


def _encode_value(el: DataElement) -> bytes:
    vr, value = el.vr, el.value
    if vr in TEXT_VRS:
        raw = value.encode("latin-1")
        if len(raw) % 2:
            raw += b"\x00" if vr == "UI" else b" "
        return raw
    if vr in INT_VRS:
        fmt = _INT_FORMATS[vr]
        return b"".join(struct.pack(fmt, v) for v in value)
    if vr in FLOAT_VRS:
        fmt = _FLOAT_FORMATS[vr]
        return b"".join(struct.pack(fmt, v) for v in value)
    raw = bytes(value)
    if len(raw) % 2:
        raw += b"\x00"
    return raw


def _write_element(out: bytearray, el: DataElement, explicit: bool) -> None:
    if el.vr == "SQ":
        payload = bytearray()
        for item in el.value:
            item_bytes = _serialize_dataset(item, explicit)
            payload += struct.pack("<HHI", 0xFFFE, 0xE000, len(item_bytes))
            payload += item_bytes
        raw = bytes(payload)
    else:
        raw = _encode_value(el)

    out += struct.pack("<HH", el.tag.group, el.tag.element)
    if explicit:
        out += el.vr.encode("ascii")
        if el.vr in _LONG_HEADER_VRS:
            out += struct.pack("<HI", 0, len(raw))
        else:
            if len(raw) > 0xFFFF:
                raise InvariantViolation(
                    "%s value too long for explicit %s" % (el.tag, el.vr))
            out += struct.pack("<H", len(raw))
    else:
        out += struct.pack("<I", len(raw))
    out += raw


def _serialize_dataset(ds: DataSet, explicit: bool) -> bytes:
    out = bytearray()
    for el in ds:
        _write_element(out, el, explicit)
    return bytes(out)


def serialize_part10(file: DicomFile) -> bytes:
    """Serialize a DicomFile to conformant Part-10 bytes.

    The meta group is written in explicit VR LE with a recomputed group
    length; the body follows the file's transfer syntax. Sequences are
    written with defined lengths and elements in ascending tag order.
    """
    file.validate()
    if file.transfer_syntax not in SUPPORTED_TRANSFER_SYNTAXES:
        raise UnsupportedTransferSyntax(file.transfer_syntax)

    meta_bytes = _serialize_dataset(file.meta, explicit=True)
    out = bytearray(b"\x00" * 128)
    out += b"DICM"
    _write_element(out, DataElement(_t(0x0002, 0x0000), "UL", [len(meta_bytes)]),
                   explicit=True)
    out += meta_bytes
    out += _serialize_dataset(file.body, explicit=file.transfer_syntax == EXPLICIT_VR_LE)
    return bytes(out)


def build_file_meta(sop_class_uid: str, sop_instance_uid: str,
                    transfer_syntax: str = EXPLICIT_VR_LE) -> DataSet:
    """Standard file meta group for a new instance."""
    meta = DataSet()
    meta.put_keyword("FileMetaInformationVersion", b"\x00\x01")
    meta.put_keyword("MediaStorageSOPClassUID", sop_class_uid)
    meta.put_keyword("MediaStorageSOPInstanceUID", sop_instance_uid)
    meta.put_keyword("TransferSyntaxUID", transfer_syntax)
    meta.put_keyword("ImplementationClassUID", IMPLEMENTATION_CLASS_UID)
    meta.put_keyword("ImplementationVersionName", IMPLEMENTATION_VERSION)
    return meta


def wrap_dataset(body: DataSet, transfer_syntax: str = EXPLICIT_VR_LE) -> DicomFile:
    """Build a DicomFile around a dataset, deriving meta from its SOP UIDs."""
    sop_class = get_string(body, tag_for("SOPClassUID")) or ""
    sop_instance = get_string(body, tag_for("SOPInstanceUID")) or ""
    return DicomFile(
        meta=build_file_meta(sop_class, sop_instance, transfer_syntax),
        body=body,
        transfer_syntax=transfer_syntax,
    )
