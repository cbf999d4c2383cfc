import struct

import pytest

from radpathlink import dicom_core as dc
from radpathlink.dicom_core import DataElement, DataSet, DicomFile, Tag, tag_for

from conftest import random_dicom_file


def minimal_file(transfer_syntax=dc.EXPLICIT_VR_LE, body=None):
    meta = DataSet()
    meta.put_keyword("MediaStorageSOPClassUID", dc.MR_IMAGE_STORAGE)
    meta.put_keyword("MediaStorageSOPInstanceUID", "1.2.3")
    meta.put_keyword("TransferSyntaxUID", transfer_syntax)
    return DicomFile(meta=meta, body=body or DataSet(), transfer_syntax=transfer_syntax)


class TestTag:
    def test_render(self):
        assert str(Tag(0x0008, 0x103E)) == "(0008,103E)"

    def test_ordering_is_lexicographic(self):
        assert Tag(0x0008, 0xFFFF) < Tag(0x0010, 0x0000)
        assert Tag(0x0010, 0x0010) < Tag(0x0010, 0x0020)


class TestDataSet:
    def test_iteration_sorted(self):
        ds = DataSet()
        ds.put_keyword("SeriesInstanceUID", "1.2")
        ds.put_keyword("PatientID", "P")
        ds.put_keyword("Modality", "MR")
        tags = [el.tag for el in ds]
        assert tags == sorted(tags)

    def test_put_replaces_same_tag(self):
        ds = DataSet()
        ds.put_keyword("PatientID", "A")
        ds.put_keyword("PatientID", "B")
        assert len(ds) == 1
        assert dc.get_string(ds, tag_for("PatientID")) == "B"


class TestRoundTrip:
    def test_patient_id_fixture(self):
        body = DataSet()
        body.put_keyword("PatientID", "P001")
        raw = dc.serialize_part10(minimal_file(body=body))
        parsed = dc.parse_part10(raw)
        assert dc.get_string(parsed.body, tag_for("PatientID")) == "P001"

    @pytest.mark.parametrize("ts", dc.SUPPORTED_TRANSFER_SYNTAXES)
    def test_round_trip_both_syntaxes(self, rng, ts):
        for _ in range(25):
            f = random_dicom_file(rng)
            f = DicomFile(dc.build_file_meta("1.2", "1.3", ts), f.body, ts)
            parsed = dc.parse_part10(dc.serialize_part10(f))
            assert parsed == f

    def test_reserialization_byte_stable(self, rng):
        for _ in range(25):
            f = random_dicom_file(rng)
            raw = dc.serialize_part10(f)
            assert dc.serialize_part10(dc.parse_part10(raw)) == raw

    def test_nested_sequence_depth_3(self):
        inner = DataSet()
        inner.put_keyword("CodeValue", "X1")
        mid = DataSet()
        mid.put_keyword("AnatomicRegionSequence", [inner])
        outer = DataSet()
        outer.put_keyword("SegmentSequence", [mid])
        body = DataSet()
        body.put_keyword("SharedFunctionalGroupsSequence", [outer])
        f = minimal_file(body=body)
        parsed = dc.parse_part10(dc.serialize_part10(f))
        assert parsed == f

    def test_private_tag_payload_preserved(self):
        body = DataSet()
        body.add(DataElement(Tag(0x0009, 0x0010), "UN", b"\x01\x02\x03\x04"))
        f = minimal_file(body=body)
        parsed = dc.parse_part10(dc.serialize_part10(f))
        assert parsed == f


class TestSerializeLayout:
    def test_elements_written_in_ascending_tag_order(self):
        body = DataSet()
        body.put_keyword("SeriesInstanceUID", "1.2.3.4")
        body.put_keyword("PatientID", "P9")
        body.put_keyword("Modality", "MR")
        raw = dc.serialize_part10(minimal_file(body=body))
        # independent scan: walk top-level explicit VR elements after meta
        tags = _scan_toplevel_tags(raw)
        body_tags = [t for t in tags if t.group != 0x0002]
        assert body_tags == sorted(body_tags)

    def test_minimal_meta_exact_byte_count(self):
        f = minimal_file()
        raw = dc.serialize_part10(f)
        # hand-computed from the Part-10 layout: preamble + magic + group
        # length element (12) + three UI elements (8-byte header + padded value)
        def element_size(value: str) -> int:
            return 8 + len(value) + (len(value) % 2)
        expected = 128 + 4 + 12 \
            + element_size(dc.MR_IMAGE_STORAGE) \
            + element_size("1.2.3") \
            + element_size(dc.EXPLICIT_VR_LE)
        assert len(raw) == expected

    def test_group_0002_in_body_rejected(self):
        body = DataSet()
        body.put_keyword("TransferSyntaxUID", dc.EXPLICIT_VR_LE)
        with pytest.raises(dc.InvariantViolation):
            dc.serialize_part10(minimal_file(body=body))

    def test_missing_meta_uid_rejected(self):
        f = minimal_file()
        f.meta.remove(tag_for("MediaStorageSOPInstanceUID"))
        with pytest.raises(dc.InvariantViolation):
            dc.serialize_part10(f)


def _scan_toplevel_tags(raw: bytes) -> list[Tag]:
    """Minimal independent explicit-VR walker used to audit byte layout."""
    pos = 132
    tags = []
    while pos < len(raw):
        group, element = struct.unpack_from("<HH", raw, pos)
        vr = raw[pos + 4:pos + 6].decode("ascii")
        if vr in ("OB", "OW", "OF", "OD", "OL", "SQ", "UC", "UR", "UT", "UN"):
            (length,) = struct.unpack_from("<I", raw, pos + 8)
            pos += 12
        else:
            (length,) = struct.unpack_from("<H", raw, pos + 6)
            pos += 8
        tags.append(Tag(group, element))
        pos += length
    return tags


class TestSequenceByteLayout:
    def test_two_item_sequence_nesting(self):
        # audit against the nesting rules: SQ payload must be a run of
        # (FFFE,E000) items, each wrapping a well-formed dataset
        item1 = DataSet()
        item1.put_keyword("CodeValue", "41216001")
        item1.put_keyword("CodingSchemeDesignator", "SCT")
        item2 = DataSet()
        item2.put_keyword("CodeValue", "80891009")
        item2.put_keyword("CodingSchemeDesignator", "SCT")
        body = DataSet()
        body.put_keyword("AnatomicRegionSequence", [item1, item2])
        raw = dc.serialize_part10(minimal_file(body=body))

        offset = raw.index(struct.pack("<HH", 0x0008, 0x2218))
        assert raw[offset + 4:offset + 6] == b"SQ"
        (seq_len,) = struct.unpack_from("<I", raw, offset + 8)
        payload = raw[offset + 12:offset + 12 + seq_len]
        items = 0
        pos = 0
        while pos < len(payload):
            group, element, item_len = struct.unpack_from("<HHI", payload, pos)
            assert (group, element) == (0xFFFE, 0xE000)
            item_bytes = payload[pos + 8:pos + 8 + item_len]
            assert struct.pack("<HH", 0x0008, 0x0100) in item_bytes  # CodeValue
            pos += 8 + item_len
            items += 1
        assert items == 2

        parsed = dc.parse_part10(raw)
        seq = dc.get_sequence(parsed.body, tag_for("AnatomicRegionSequence"))
        assert len(seq) == 2
        assert all(tag_for("CodeValue") in item for item in seq)

    def test_undefined_length_sequence_parses(self):
        # hand-build an implicit VR body with an undefined-length sequence
        item_body = struct.pack("<HHI", 0x0008, 0x0100, 4) + b"C1\x00 "
        seq_payload = struct.pack("<HHI", 0xFFFE, 0xE000, len(item_body)) + item_body \
            + struct.pack("<HHI", 0xFFFE, 0xE0DD, 0)
        body = struct.pack("<HHI", 0x0008, 0x2218, 0xFFFFFFFF) + seq_payload
        raw = _implicit_file_bytes(body)
        parsed = dc.parse_part10(raw)
        seq = dc.get_sequence(parsed.body, tag_for("AnatomicRegionSequence"))
        assert len(seq) == 1
        assert dc.get_string(seq[0], tag_for("CodeValue")) == "C1"

    def test_undefined_length_item_parses(self):
        inner = struct.pack("<HHI", 0x0008, 0x0100, 2) + b"C2"
        item = struct.pack("<HHI", 0xFFFE, 0xE000, 0xFFFFFFFF) + inner \
            + struct.pack("<HHI", 0xFFFE, 0xE00D, 0)
        body = struct.pack("<HHI", 0x0008, 0x2218, 0xFFFFFFFF) + item \
            + struct.pack("<HHI", 0xFFFE, 0xE0DD, 0)
        raw = _implicit_file_bytes(body)
        seq = dc.get_sequence(dc.parse_part10(raw).body,
                              tag_for("AnatomicRegionSequence"))
        assert dc.get_string(seq[0], tag_for("CodeValue")) == "C2"


def _implicit_file_bytes(body: bytes) -> bytes:
    f = minimal_file(dc.IMPLICIT_VR_LE)
    return dc.serialize_part10(f) + body


class TestAccessors:
    def test_get_string_absent(self):
        assert dc.get_string(DataSet(), tag_for("StudyDescription")) is None

    def test_get_string_trims_trailing_pad(self):
        # craft the padded on-wire form by hand: "PROSTATE " pads to 10 bytes
        body = struct.pack("<HH", 0x0018, 0x0015) + b"CS" \
            + struct.pack("<H", 10) + b"PROSTATE  "
        raw = dc.serialize_part10(minimal_file()) + body
        parsed = dc.parse_part10(raw)
        assert dc.get_string(parsed.body, tag_for("BodyPartExamined")) == "PROSTATE"

    def test_get_string_lo_value(self):
        body = DataSet()
        body.put_keyword("SeriesDescription", "MRI Prostata nativ")
        parsed = dc.parse_part10(dc.serialize_part10(minimal_file(body=body)))
        assert dc.get_string(parsed.body, tag_for("SeriesDescription")) \
            == "MRI Prostata nativ"

    def test_multi_valued_string_kept_joined(self):
        ds = DataSet()
        ds.put_keyword("ImageType", "DERIVED\\PRIMARY")
        assert dc.get_string(ds, tag_for("ImageType")) == "DERIVED\\PRIMARY"
        assert dc.get_strings(ds, tag_for("ImageType")) == ["DERIVED", "PRIMARY"]

    def test_get_floats_parses_ds_text(self):
        ds = DataSet()
        ds.put_keyword("PixelSpacing", "0.5\\0.25")
        assert dc.get_floats(ds, tag_for("PixelSpacing")) == [0.5, 0.25]

    def test_get_code_items_empty_dataset(self):
        assert dc.get_code_items(DataSet(), tag_for("AnatomicRegionSequence")) == []

    def test_get_code_items_triplet(self):
        item = DataSet()
        item.put_keyword("CodeValue", "41216001")
        item.put_keyword("CodingSchemeDesignator", "SCT")
        item.put_keyword("CodeMeaning", "Prostate")
        ds = DataSet()
        ds.put_keyword("AnatomicRegionSequence", [item])
        items = dc.get_code_items(ds, tag_for("AnatomicRegionSequence"))
        assert items == [dc.CodeItem("41216001", "SCT", "Prostate")]

    def test_get_code_items_skips_missing_code_value(self):
        good = DataSet()
        good.put_keyword("CodeValue", "80891009")
        bad = DataSet()
        bad.put_keyword("CodeMeaning", "no value")
        ds = DataSet()
        ds.put_keyword("AnatomicRegionSequence", [bad, good])
        items = dc.get_code_items(ds, tag_for("AnatomicRegionSequence"))
        assert len(items) == 1
        assert items[0].code_value == "80891009"


class TestErrors:
    def test_magic_missing(self):
        with pytest.raises(dc.MagicMissing):
            dc.parse_part10(b"\x00" * 128 + b"NOPE")

    def test_short_stream(self):
        with pytest.raises(dc.MagicMissing):
            dc.parse_part10(b"\x00" * 10)

    def test_truncated_element(self):
        raw = dc.serialize_part10(minimal_file())
        raw += struct.pack("<HH", 0x0010, 0x0020) + b"LO" + struct.pack("<H", 40)
        with pytest.raises(dc.Truncated):
            dc.parse_part10(raw + b"ab")

    def test_unsupported_transfer_syntax(self):
        meta = DataSet()
        meta.put_keyword("MediaStorageSOPClassUID", "1.2")
        meta.put_keyword("MediaStorageSOPInstanceUID", "1.3")
        meta.put_keyword("TransferSyntaxUID", "1.2.840.10008.1.2.4.50")  # JPEG baseline
        f = DicomFile(meta, DataSet(), dc.EXPLICIT_VR_LE)
        raw = dc.serialize_part10(f)
        with pytest.raises(dc.UnsupportedTransferSyntax):
            dc.parse_part10(raw)

    def test_fuzzed_mutations_never_hang(self, rng):
        base = dc.serialize_part10(random_dicom_file(rng))
        for _ in range(200):
            mutated = bytearray(base)
            for _ in range(rng.randint(1, 8)):
                mutated[rng.randrange(len(mutated))] = rng.randrange(256)
            try:
                dc.parse_part10(bytes(mutated))
            except dc.DicomError:
                pass

    def test_truncations_never_hang(self, rng):
        base = dc.serialize_part10(random_dicom_file(rng))
        for cut in range(133, len(base), max(1, len(base) // 64)):
            try:
                dc.parse_part10(base[:cut])
            except dc.DicomError:
                pass


def _walk_datasets(ds: DataSet):
    yield ds
    for el in ds:
        if el.vr == "SQ":
            for item in el.value:
                yield from _walk_datasets(item)


class TestParserInvariants:
    def test_tag_order_holds_recursively(self, rng):
        for _ in range(20):
            f = random_dicom_file(rng)
            parsed = dc.parse_part10(dc.serialize_part10(f))
            for ds in _walk_datasets(parsed.body):
                tags = [el.tag for el in ds]
                assert tags == sorted(tags)
                assert len(tags) == len(set(tags))
