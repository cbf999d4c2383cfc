import math
import random

import numpy as np
import pytest

from radpathlink import dicom_core as dc
from radpathlink import seg as segmod
from radpathlink import volume as vol
from radpathlink.anatomy import Laterality, MatchTier, ResolvedBodyPart, default_master
from radpathlink.dicom_core import CodeItem, tag_for

from conftest import make_mr_slice


def pack_oracle(bits: np.ndarray) -> bytes:
    """Reference packer: one explicit loop, LSB first, byte-padded."""
    flat = np.asarray(bits, dtype=bool).reshape(-1)
    out = bytearray(math.ceil(len(flat) / 8))
    for i, bit in enumerate(flat):
        if bit:
            out[i // 8] |= 1 << (i % 8)
    return bytes(out)


def make_series(rows, cols, slices, dz=2.0):
    study, series = dc.new_uid(), dc.new_uid()
    instances = [make_mr_slice(study, series, k, rows=rows, cols=cols, dz=dz)
                 for k in range(slices)]
    geometry = vol.assemble_volume(instances).geometry
    return instances, geometry


def random_segment_mask(rng, geometry):
    bits = np.zeros((geometry.slices, geometry.rows, geometry.cols), dtype=bool)
    while not bits.any():
        flat = np.array([rng.random() < 0.3 for _ in range(geometry.voxel_count)])
        bits = flat.reshape(geometry.slices, geometry.rows, geometry.cols)
    return vol.BinaryMask(geometry, bits)


PROSTATE = CodeItem("41216001", "SCT", "Prostate")


def prostate_meta(engine="synthetic-v1"):
    return segmod.SegmentMeta("Prostate", PROSTATE,
                              segmod.AlgorithmType.AUTOMATIC, engine)


class TestBitPacking:
    def test_three_by_three_all_set(self):
        frame = segmod.pack_frame(np.ones((3, 3), dtype=bool))
        assert frame == b"\xff\x01"
        assert frame == pack_oracle(np.ones((3, 3), dtype=bool))

    def test_random_frames_match_oracle(self):
        rng = random.Random(77)
        for _ in range(50):
            rows, cols = rng.randint(1, 17), rng.randint(1, 17)
            bits = np.array([rng.random() < 0.5 for _ in range(rows * cols)]
                            ).reshape(rows, cols)
            packed = segmod.pack_frame(bits)
            assert packed == pack_oracle(bits)
            assert len(packed) == math.ceil(rows * cols / 8)
            assert np.array_equal(segmod.unpack_frame(packed, rows, cols), bits)


class TestEncodeDecode:
    def test_round_trip_masks_and_labels(self):
        rng = random.Random(31)
        instances, geometry = make_series(8, 8, 4)
        mask = random_segment_mask(rng, geometry)
        obj = segmod.encode_seg([(prostate_meta(), mask)], instances, geometry)
        raw = dc.serialize_part10(obj.file)
        decoded = segmod.decode_seg(dc.parse_part10(raw))
        assert len(decoded) == 1
        meta, back = decoded[0]
        assert meta.label == "Prostate"
        assert meta.anatomy_code == PROSTATE
        assert meta.algorithm_type is segmod.AlgorithmType.AUTOMATIC
        assert meta.algorithm_name == "synthetic-v1"
        assert np.array_equal(back.bits, mask.bits)
        assert vol.geometry_close(back.geometry, geometry, pos_tol=1e-6)

    def test_multi_segment_round_trip(self):
        rng = random.Random(32)
        instances, geometry = make_series(6, 6, 3)
        masks = [
            (segmod.SegmentMeta("Kidney", CodeItem("64033007", "SCT", "Kidney")),
             random_segment_mask(rng, geometry)),
            (prostate_meta(), random_segment_mask(rng, geometry)),
        ]
        obj = segmod.encode_seg(masks, instances, geometry)
        decoded = segmod.decode_seg(dc.parse_part10(dc.serialize_part10(obj.file)))
        assert [m.label for m, _ in decoded] == ["Kidney", "Prostate"]
        for (_, original), (_, back) in zip(masks, decoded):
            assert np.array_equal(back.bits, original.bits)

    def test_seg_file_round_trips_byte_exactly(self):
        rng = random.Random(33)
        instances, geometry = make_series(5, 7, 3)
        mask = random_segment_mask(rng, geometry)
        obj = segmod.encode_seg([(prostate_meta(), mask)], instances, geometry)
        raw = dc.serialize_part10(obj.file)
        assert dc.parse_part10(raw) == obj.file
        assert dc.serialize_part10(dc.parse_part10(raw)) == raw

    def test_reencoding_decoded_object_decodes_identically(self):
        rng = random.Random(34)
        instances, geometry = make_series(8, 8, 4)
        mask = random_segment_mask(rng, geometry)
        obj = segmod.encode_seg([(prostate_meta(), mask)], instances, geometry)
        decoded = segmod.decode_seg(obj.file)
        re_obj = segmod.encode_seg(decoded, instances, decoded[0][1].geometry)
        re_decoded = segmod.decode_seg(re_obj.file)
        assert np.array_equal(re_decoded[0][1].bits, mask.bits)
        assert re_decoded[0][0].label == decoded[0][0].label

    def test_packed_frames_in_file_match_oracle(self):
        rng = random.Random(35)
        instances, geometry = make_series(5, 5, 2)
        mask = random_segment_mask(rng, geometry)
        obj = segmod.encode_seg([(prostate_meta(), mask)], instances, geometry)
        payload = dc.get_bytes(obj.file.body, tag_for("PixelData"))
        frame_len = segmod.frame_byte_length(5, 5)
        for k in range(2):
            assert payload[k * frame_len:(k + 1) * frame_len] \
                == pack_oracle(mask.bits[k])

    def test_segment_sequence_carries_sct_code(self):
        rng = random.Random(36)
        instances, geometry = make_series(4, 4, 2)
        mask = random_segment_mask(rng, geometry)
        obj = segmod.encode_seg([(prostate_meta(), mask)], instances, geometry)
        items = dc.get_sequence(obj.file.body, tag_for("SegmentSequence"))
        assert len(items) == 1
        codes = dc.get_code_items(items[0], tag_for("SegmentedPropertyTypeCodeSequence"))
        assert codes == [PROSTATE]
        assert codes[0].scheme == "SCT"

    def test_references_every_source_instance(self):
        rng = random.Random(37)
        instances, geometry = make_series(4, 4, 3)
        mask = random_segment_mask(rng, geometry)
        obj = segmod.encode_seg([(prostate_meta(), mask)], instances, geometry)
        source_uids = {dc.get_string(ds, tag_for("SOPInstanceUID"))
                       for ds in instances}
        assert set(obj.referenced_instance_uids) == source_uids
        per_frame = dc.get_sequence(obj.file.body,
                                    tag_for("PerFrameFunctionalGroupsSequence"))
        referenced = set()
        for item in per_frame:
            for deriv in dc.get_sequence(item, tag_for("DerivationImageSequence")):
                for src in dc.get_sequence(deriv, tag_for("SourceImageSequence")):
                    referenced.add(dc.get_string(src, tag_for("ReferencedSOPInstanceUID")))
        assert referenced == source_uids


class TestEncodeErrors:
    def test_empty_mask_rejected(self):
        instances, geometry = make_series(4, 4, 2)
        empty = vol.empty_mask(geometry)
        with pytest.raises(segmod.EmptyMask):
            segmod.encode_seg([(prostate_meta(), empty)], instances, geometry)

    def test_geometry_mismatch_rejected(self):
        rng = random.Random(38)
        instances, geometry = make_series(4, 4, 2)
        other_geometry = vol.VolumeGeometry(
            rows=4, cols=4, slices=2, spacing=(2.0, 2.0, 2.0),
            row_dir=(1.0, 0.0, 0.0), col_dir=(0.0, 1.0, 0.0), origin=(0.0, 0.0, 0.0))
        mask = random_segment_mask(rng, other_geometry)
        with pytest.raises(vol.GeometryMismatch):
            segmod.encode_seg([(prostate_meta(), mask)], instances, geometry)

    def test_reference_count_mismatch(self):
        rng = random.Random(39)
        instances, geometry = make_series(4, 4, 3)
        mask = random_segment_mask(rng, geometry)
        with pytest.raises(segmod.MissingReference):
            segmod.encode_seg([(prostate_meta(), mask)], instances[:2], geometry)

    def test_reference_without_sop_uid(self):
        rng = random.Random(40)
        instances, geometry = make_series(4, 4, 2)
        mask = random_segment_mask(rng, geometry)
        instances[0].remove(tag_for("SOPInstanceUID"))
        with pytest.raises(segmod.MissingReference):
            segmod.encode_seg([(prostate_meta(), mask)], instances, geometry)


class TestDecodeErrors:
    def _encoded(self):
        rng = random.Random(41)
        instances, geometry = make_series(4, 4, 2)
        mask = random_segment_mask(rng, geometry)
        return segmod.encode_seg([(prostate_meta(), mask)], instances, geometry)

    def test_fractional_rejected(self):
        obj = self._encoded()
        obj.file.body.put_keyword("SegmentationType", "FRACTIONAL")
        with pytest.raises(segmod.UnsupportedSegType):
            segmod.decode_seg(obj.file)

    def test_non_seg_sop_class_rejected(self):
        obj = self._encoded()
        obj.file.body.put_keyword("SOPClassUID", dc.MR_IMAGE_STORAGE)
        with pytest.raises(segmod.UnsupportedSegType):
            segmod.decode_seg(obj.file)

    def test_frame_count_mismatch_rejected(self):
        obj = self._encoded()
        items = dc.get_sequence(obj.file.body,
                                tag_for("PerFrameFunctionalGroupsSequence"))
        obj.file.body.put_keyword("PerFrameFunctionalGroupsSequence", items[:-1])
        with pytest.raises(segmod.MalformedFunctionalGroups):
            segmod.decode_seg(obj.file)

    def test_short_pixel_data_rejected(self):
        obj = self._encoded()
        obj.file.body.put(tag_for("PixelData"), "OB", b"\x00\x00")
        with pytest.raises(segmod.MalformedFunctionalGroups):
            segmod.decode_seg(obj.file)


class TestGenerateSegMeta:
    def test_prostate(self):
        resolved = ResolvedBodyPart("prostate", PROSTATE, MatchTier.EXACT_LABEL,
                                    "BodyPartExamined")
        meta = segmod.generate_seg_meta(resolved, "synthetic-v1")
        assert meta.label == "Prostate"
        assert meta.algorithm_type is segmod.AlgorithmType.AUTOMATIC
        assert meta.algorithm_name == "synthetic-v1"
        assert meta.anatomy_code == PROSTATE

    def test_heart_title_case(self):
        entry = default_master().entry_for_label("heart")
        resolved = ResolvedBodyPart(entry.canonical_label, entry.code,
                                    MatchTier.EXACT_LABEL, "BodyPartExamined")
        assert segmod.generate_seg_meta(resolved, "x").label == "Heart"

    def test_bilateral_label_has_no_side_designator(self):
        entry = default_master().entry_for_label("kidney")
        resolved = ResolvedBodyPart(entry.canonical_label, entry.code,
                                    MatchTier.EXACT_LABEL, "BodyPartExamined",
                                    laterality=Laterality.BILATERAL)
        meta = segmod.generate_seg_meta(resolved, "x")
        assert meta.label == "Kidney"

    def test_scheme_must_be_sct(self):
        with pytest.raises(ValueError):
            segmod.SegmentMeta("X", CodeItem("1", "LOINC", ""))
