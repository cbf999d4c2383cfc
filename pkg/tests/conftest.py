"""Shared fixture builders: synthetic DICOM studies and random file generation."""

from __future__ import annotations

import random
import string

import numpy as np
import pytest

from radpathlink import dicom_core as dc
from radpathlink.dicom_core import DataElement, DataSet, DicomFile, Tag, tag_for


def make_mr_slice(study_uid: str, series_uid: str, k: int, *,
                  rows: int = 16, cols: int = 16, dz: float = 2.0,
                  patient_id: str = "P001", frame_of_ref: str = "2.25.777",
                  pixels: np.ndarray | None = None,
                  study_description: str = "MRT Becken",
                  series_description: str = "T2 axial",
                  sop_uid: str | None = None) -> DataSet:
    ds = DataSet()
    ds.put_keyword("SOPClassUID", dc.MR_IMAGE_STORAGE)
    ds.put_keyword("SOPInstanceUID", sop_uid or dc.new_uid())
    ds.put_keyword("StudyInstanceUID", study_uid)
    ds.put_keyword("SeriesInstanceUID", series_uid)
    ds.put_keyword("PatientID", patient_id)
    ds.put_keyword("PatientName", "Demo^Patient")
    ds.put_keyword("Modality", "MR")
    ds.put_keyword("StudyDescription", study_description)
    ds.put_keyword("SeriesDescription", series_description)
    ds.put_keyword("Rows", [rows])
    ds.put_keyword("Columns", [cols])
    ds.put_keyword("BitsAllocated", [16])
    ds.put_keyword("BitsStored", [16])
    ds.put_keyword("HighBit", [15])
    ds.put_keyword("PixelRepresentation", [1])
    ds.put_keyword("ImageOrientationPatient", "1\\0\\0\\0\\1\\0")
    ds.put_keyword("PixelSpacing", "1\\1")
    ds.put_keyword("ImagePositionPatient", "0\\0\\%s" % repr(dz * k))
    ds.put_keyword("SliceThickness", repr(dz))
    ds.put_keyword("FrameOfReferenceUID", frame_of_ref)
    if pixels is None:
        pixels = np.zeros((rows, cols), dtype=np.int16)
    ds.put(tag_for("PixelData"), "OW", pixels.astype("<i2").tobytes())
    return ds


def make_mr_series(study_uid: str, series_uid: str, *, slices: int = 8,
                   rows: int = 16, cols: int = 16,
                   blob: tuple[int, int] | None = (2, 6),
                   blob_value: int = 900, **kwargs) -> list[DataSet]:
    """An MR series whose slices blob[0]..blob[1] carry a bright 6x6 square."""
    out = []
    for k in range(slices):
        pixels = np.zeros((rows, cols), dtype=np.int16)
        if blob is not None and blob[0] <= k < blob[1]:
            pixels[rows // 3:rows // 3 + 6, cols // 3:cols // 3 + 6] = blob_value
        out.append(make_mr_slice(study_uid, series_uid, k, rows=rows, cols=cols,
                                 pixels=pixels, **kwargs))
    return out


def make_sm_instance(study_uid: str, series_uid: str, *, level: int = 0,
                     rows: int = 16, cols: int = 16, patient_id: str = "P001",
                     body_part: str = "PROSTATE",
                     description: str = "Histology") -> DataSet:
    ds = DataSet()
    ds.put_keyword("SOPClassUID", dc.VL_WHOLE_SLIDE_MICROSCOPY_STORAGE)
    ds.put_keyword("SOPInstanceUID", dc.new_uid())
    ds.put_keyword("StudyInstanceUID", study_uid)
    ds.put_keyword("SeriesInstanceUID", series_uid)
    ds.put_keyword("PatientID", patient_id)
    ds.put_keyword("PatientName", "Demo^Patient")
    ds.put_keyword("Modality", "SM")
    if body_part:
        ds.put_keyword("BodyPartExamined", body_part)
    ds.put_keyword("StudyDescription", description)
    ds.put_keyword("InstanceNumber", str(level + 1))
    ds.put_keyword("Rows", [rows])
    ds.put_keyword("Columns", [cols])
    ds.put_keyword("BitsAllocated", [8])
    rng = np.random.default_rng(level + rows)
    ds.put(tag_for("PixelData"), "OB",
           rng.integers(0, 255, (rows, cols)).astype(np.uint8).tobytes())
    return ds


def wrap_all(datasets) -> list[DicomFile]:
    return [dc.wrap_dataset(ds) for ds in datasets]


# ---------------------------------------------------------------------------
# Random DICOM file generation for codec round trips

_TEXT_ALPHABET = string.ascii_uppercase + string.digits + " "


def _random_text(rng: random.Random, max_len: int = 12) -> str:
    n = rng.randint(1, max_len)
    return "".join(rng.choice(_TEXT_ALPHABET) for _ in range(n)).strip() or "X"


def _random_uid(rng: random.Random) -> str:
    return "1.2." + ".".join(str(rng.randint(0, 999)) for _ in range(rng.randint(2, 6)))


def _random_value(rng: random.Random, vr: str, depth: int):
    if vr == "SQ":
        return [random_dataset(rng, depth + 1, max_elements=4)
                for _ in range(rng.randint(0, 3))]
    if vr == "UI":
        return _random_uid(rng)
    if vr == "PN":
        return "%s^%s" % (_random_text(rng, 8).replace(" ", ""),
                          _random_text(rng, 8).replace(" ", ""))
    if vr == "DA":
        return "20%02d%02d%02d" % (rng.randint(0, 30), rng.randint(1, 12), rng.randint(1, 28))
    if vr == "TM":
        return "%02d%02d%02d" % (rng.randint(0, 23), rng.randint(0, 59), rng.randint(0, 59))
    if vr == "IS":
        return "\\".join(str(rng.randint(-999, 999)) for _ in range(rng.randint(1, 3)))
    if vr == "DS":
        return "\\".join("%.6g" % rng.uniform(-100, 100) for _ in range(rng.randint(1, 3)))
    if vr in dc.TEXT_VRS:
        return _random_text(rng)
    if vr == "US":
        return [rng.randint(0, 0xFFFF) for _ in range(rng.randint(1, 3))]
    if vr == "UL":
        return [rng.randint(0, 0xFFFFFFFF) for _ in range(rng.randint(1, 3))]
    if vr == "SS":
        return [rng.randint(-0x8000, 0x7FFF) for _ in range(rng.randint(1, 3))]
    if vr == "SL":
        return [rng.randint(-0x80000000, 0x7FFFFFFF) for _ in range(rng.randint(1, 3))]
    if vr in dc.FLOAT_VRS:
        return [rng.uniform(-1e6, 1e6) for _ in range(rng.randint(1, 3))]
    # byte payloads must have even length to survive the wire exactly
    return bytes(rng.getrandbits(8) for _ in range(2 * rng.randint(0, 8)))


_BODY_TAGS = [tag for tag in dc.DICTIONARY if tag.group != 0x0002]


def random_dataset(rng: random.Random, depth: int = 0,
                   max_elements: int = 12) -> DataSet:
    ds = DataSet()
    for tag in rng.sample(_BODY_TAGS, rng.randint(1, max_elements)):
        vr = dc.vr_for(tag)
        if vr == "SQ" and depth >= 3:
            continue
        ds.add(DataElement(tag, vr, _random_value(rng, vr, depth)))
    return ds


def random_dicom_file(rng: random.Random) -> DicomFile:
    transfer_syntax = rng.choice(dc.SUPPORTED_TRANSFER_SYNTAXES)
    body = random_dataset(rng)
    meta = dc.build_file_meta(_random_uid(rng), _random_uid(rng), transfer_syntax)
    return DicomFile(meta=meta, body=body, transfer_syntax=transfer_syntax)


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20260809)
