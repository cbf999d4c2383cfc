import re
import threading

import pytest
import requests

from radpathlink import dicom_core as dc
from radpathlink import dicomweb as dw
from radpathlink.dicom_core import DataSet, tag_for

from conftest import make_mr_slice, make_sm_instance, wrap_all


@pytest.fixture
def stub(tmp_path):
    server = dw.serve_stub(tmp_path / "archive")
    yield server
    server.stop()


def _two_patient_fixture():
    """Two patients, three studies: P01 MR, P01 SM, Q01 MR."""
    mr1_study, mr1_series = dc.new_uid(), dc.new_uid()
    sm_study, sm_series = dc.new_uid(), dc.new_uid()
    mr2_study, mr2_series = dc.new_uid(), dc.new_uid()
    files = wrap_all(
        [make_mr_slice(mr1_study, mr1_series, k, patient_id="P01") for k in range(2)]
        + [make_sm_instance(sm_study, sm_series, patient_id="P01")]
        + [make_mr_slice(mr2_study, mr2_series, 0, patient_id="Q01")]
    )
    return files, {"mr1": mr1_study, "sm": sm_study, "mr2": mr2_study}


class TestQidoStudies:
    def test_fresh_root_empty(self, stub):
        assert dw.qido_studies(stub.url) == []

    def test_empty_filter_returns_all(self, stub):
        files, uids = _two_patient_fixture()
        dw.stow_store(stub.url, files)
        records = dw.qido_studies(stub.url)
        assert {r.study_uid for r in records} == set(uids.values())

    def test_modalities_in_study_filter(self, stub):
        files, uids = _two_patient_fixture()
        dw.stow_store(stub.url, files)
        # oracle: brute-force scan of the fixture files' metadata
        expected = set()
        for f in files:
            if dc.get_string(f.body, tag_for("Modality")) == "SM":
                expected.add(dc.get_string(f.body, tag_for("StudyInstanceUID")))
        records = dw.qido_studies(stub.url, {"ModalitiesInStudy": "SM"})
        assert {r.study_uid for r in records} == expected
        assert expected == {uids["sm"]}

    def test_prefix_wildcard_on_patient_id(self, stub):
        files, uids = _two_patient_fixture()
        dw.stow_store(stub.url, files)
        records = dw.qido_studies(stub.url, {"PatientID": "P0*"})
        assert {r.study_uid for r in records} == {uids["mr1"], uids["sm"]}
        exact = dw.qido_studies(stub.url, {"PatientID": "P01"})
        assert {r.study_uid for r in exact} == {uids["mr1"], uids["sm"]}
        assert dw.qido_studies(stub.url, {"PatientID": "P0"}) == []

    def test_results_ascend_by_study_uid(self, stub):
        files, _ = _two_patient_fixture()
        dw.stow_store(stub.url, files)
        records = dw.qido_studies(stub.url)
        uids = [r.study_uid for r in records]
        assert uids == sorted(uids)

    def test_unknown_filter_key_rejected_client_side(self, stub):
        with pytest.raises(ValueError):
            dw.qido_studies(stub.url, {"NoSuchKeyword": "x"})

    def test_unknown_key_ignored_with_warning_header(self, stub):
        resp = requests.get(stub.url + "/studies", params={"NoSuchKeyword": "x"})
        assert resp.status_code == 200
        assert "ignored query keys" in resp.headers.get("Warning", "")


class TestQidoSeries:
    def test_modality_filter(self, stub):
        study = dc.new_uid()
        mr_series, seg_series = dc.new_uid(), dc.new_uid()
        seg_body = make_mr_slice(study, seg_series, 0)
        seg_body.put_keyword("Modality", "SEG")
        dw.stow_store(stub.url, wrap_all(
            [make_mr_slice(study, mr_series, 0), seg_body]))
        records = dw.qido_series(stub.url, study, {"Modality": "SEG"})
        assert len(records) == 1
        assert records[0].series_uid == seg_series

    def test_unknown_study_is_empty_not_error(self, stub):
        assert dw.qido_series(stub.url, "1.2.3.999") == []

    def test_no_filter_all_series_ascending(self, stub):
        study = dc.new_uid()
        series = sorted(dc.new_uid() for _ in range(3))
        files = [make_mr_slice(study, s, 0) for s in series]
        dw.stow_store(stub.url, wrap_all(files))
        records = dw.qido_series(stub.url, study)
        assert [r.series_uid for r in records] == series
        assert all(r.instance_count == 1 for r in records)


class TestWado:
    def test_store_then_retrieve_byte_identical(self, stub):
        study, series = dc.new_uid(), dc.new_uid()
        f = dc.wrap_dataset(make_mr_slice(study, series, 0))
        raw = dc.serialize_part10(f)
        dw.stow_store(stub.url, [raw])
        sop = dw.qido_instances(stub.url, study, series)[0]
        assert dw.wado_instance(stub.url, study, series, sop) == raw

    def test_unknown_instance_not_found(self, stub):
        study, series = dc.new_uid(), dc.new_uid()
        dw.stow_store(stub.url, wrap_all([make_mr_slice(study, series, 0)]))
        with pytest.raises(dw.NotFound):
            dw.wado_instance(stub.url, study, series, "1.2.3.4.5")

    def test_three_instances_distinct_uids(self, stub):
        study, series = dc.new_uid(), dc.new_uid()
        files = wrap_all([make_mr_slice(study, series, k) for k in range(3)])
        dw.stow_store(stub.url, files)
        sops = dw.qido_instances(stub.url, study, series)
        assert len(sops) == 3
        seen = set()
        for sop in sops:
            raw = dw.wado_instance(stub.url, study, series, sop)
            parsed = dc.parse_part10(raw)
            seen.add(dc.get_string(parsed.body, tag_for("SOPInstanceUID")))
        assert len(seen) == 3

    def test_metadata_omits_pixel_data(self, stub):
        study, series = dc.new_uid(), dc.new_uid()
        dw.stow_store(stub.url, wrap_all([make_mr_slice(study, series, 0)]))
        sop = dw.qido_instances(stub.url, study, series)[0]
        ds = dw.wado_metadata(stub.url, study, series, sop)
        assert tag_for("PixelData") not in ds
        assert dc.get_string(ds, tag_for("PatientID")) == "P001"


class TestStow:
    def test_duplicate_uid_replaces(self, stub):
        study, series = dc.new_uid(), dc.new_uid()
        sop = dc.new_uid()
        a = make_mr_slice(study, series, 0, sop_uid=sop)
        b = make_mr_slice(study, series, 1, sop_uid=dc.new_uid())
        dup = make_mr_slice(study, series, 2, sop_uid=sop)
        result = dw.stow_store(stub.url, wrap_all([a, b, dup]))
        assert result.stored == 3
        assert result.failed == []
        assert len(dw.qido_instances(stub.url, study, series)) == 2
        raw = dw.wado_instance(stub.url, study, series, sop)
        parsed = dc.parse_part10(raw)
        # the replacement (position z=2*2.0) won
        assert dc.get_floats(parsed.body, tag_for("ImagePositionPatient"))[2] == 4.0

    def test_missing_study_uid_fails_that_instance_only(self, stub):
        good = make_mr_slice(dc.new_uid(), dc.new_uid(), 0)
        bad = make_mr_slice(dc.new_uid(), dc.new_uid(), 0)
        bad.remove(tag_for("StudyInstanceUID"))
        result = dw.stow_store(stub.url, wrap_all([good, bad]))
        assert result.stored == 1
        assert len(result.failed) == 1
        assert "StudyInstanceUID" in result.failed[0][1]

    def test_store_updates_query_index(self, stub):
        study = dc.new_uid()
        assert dw.qido_studies(stub.url, {"StudyInstanceUID": study}) == []
        dw.stow_store(stub.url, wrap_all([make_mr_slice(study, dc.new_uid(), 0)]))
        records = dw.qido_studies(stub.url, {"StudyInstanceUID": study})
        assert [r.study_uid for r in records] == [study]


class TestStubLifecycle:
    def test_restart_preserves_query_results(self, tmp_path):
        root = tmp_path / "archive"
        server = dw.serve_stub(root)
        files, _ = _two_patient_fixture()
        dw.stow_store(server.url, files)
        before_studies = dw.qido_studies(server.url)
        before_series = {r.study_uid: dw.qido_series(server.url, r.study_uid)
                         for r in before_studies}
        server.stop()

        server = dw.serve_stub(root)
        try:
            after_studies = dw.qido_studies(server.url)
            assert after_studies == before_studies
            for study_uid, series in before_series.items():
                assert dw.qido_series(server.url, study_uid) == series
        finally:
            server.stop()

    def test_store_order_does_not_change_results(self, tmp_path):
        files, _ = _two_patient_fixture()
        results = []
        for ordering in (files, list(reversed(files))):
            server = dw.serve_stub(tmp_path / ("a%d" % len(results)))
            try:
                for f in ordering:
                    dw.stow_store(server.url, [f])
                results.append((dw.qido_studies(server.url),
                                dw.qido_instances(
                                    server.url,
                                    dc.get_string(files[0].body, tag_for("StudyInstanceUID")),
                                    dc.get_string(files[0].body, tag_for("SeriesInstanceUID")))))
            finally:
                server.stop()
        assert results[0] == results[1]

    def test_concurrent_reads_and_stores(self, stub):
        study, series = dc.new_uid(), dc.new_uid()
        files = wrap_all([make_mr_slice(study, series, k) for k in range(10)])
        errors = []

        def reader():
            try:
                for _ in range(20):
                    dw.qido_studies(stub.url)
            except Exception as exc:  # noqa: BLE001 - collected for the assert
                errors.append(exc)

        threads = [threading.Thread(target=reader) for _ in range(4)]
        for t in threads:
            t.start()
        for f in files:
            dw.stow_store(stub.url, [f])
        for t in threads:
            t.join()
        assert errors == []
        assert len(dw.qido_instances(stub.url, study, series)) == 10


_JSON_KEY = re.compile(r"^[0-9A-F]{8}$")


def _assert_valid_dicom_json(doc: object) -> None:
    assert isinstance(doc, list)
    for record in doc:
        assert isinstance(record, dict)
        for key, entry in record.items():
            assert _JSON_KEY.match(key), key
            assert "vr" in entry and len(entry["vr"]) == 2
            extra = set(entry) - {"vr", "Value", "InlineBinary"}
            assert not extra, extra
            if "Value" in entry:
                assert isinstance(entry["Value"], list) and entry["Value"]


class TestDicomJson:
    def test_qido_responses_are_valid_dicom_json(self, stub):
        files, uids = _two_patient_fixture()
        dw.stow_store(stub.url, files)
        for url in ("/studies",
                    "/studies/%s/series" % uids["mr1"]):
            _assert_valid_dicom_json(requests.get(stub.url + url).json())

    def test_metadata_response_is_valid_dicom_json(self, stub):
        study, series = dc.new_uid(), dc.new_uid()
        dw.stow_store(stub.url, wrap_all([make_mr_slice(study, series, 0)]))
        sop = dw.qido_instances(stub.url, study, series)[0]
        doc = requests.get("%s/studies/%s/series/%s/instances/%s/metadata"
                           % (stub.url, study, series, sop)).json()
        _assert_valid_dicom_json(doc)

    def test_dataset_json_round_trip(self):
        ds = DataSet()
        ds.put_keyword("PatientName", "Doe^Jane")
        ds.put_keyword("PatientID", "P7")
        ds.put_keyword("Rows", [16])
        ds.put_keyword("PixelSpacing", "0.5\\0.5")
        item = DataSet()
        item.put_keyword("CodeValue", "41216001")
        ds.put_keyword("AnatomicRegionSequence", [item])
        doc = dw.dataset_to_json_dict(ds)
        back = dw.json_dict_to_dataset(doc)
        assert dc.get_string(back, tag_for("PatientName")) == "Doe^Jane"
        assert dc.get_string(back, tag_for("PatientID")) == "P7"
        assert dc.get_floats(back, tag_for("PixelSpacing")) == [0.5, 0.5]
        seq = dc.get_sequence(back, tag_for("AnatomicRegionSequence"))
        assert dc.get_string(seq[0], tag_for("CodeValue")) == "41216001"


class TestTransportErrors:
    def test_unreachable_archive_raises_transport(self):
        with pytest.raises(dw.Transport):
            dw.qido_studies("http://127.0.0.1:9", None)

    def test_non_json_response_raises_protocol_error(self, stub):
        # the instance endpoint serves bytes; feed it to the QIDO parser
        study, series = dc.new_uid(), dc.new_uid()
        dw.stow_store(stub.url, wrap_all([make_mr_slice(study, series, 0)]))
        sop = dw.qido_instances(stub.url, study, series)[0]
        resp = requests.get("%s/studies/%s/series/%s/instances/%s"
                            % (stub.url, study, series, sop))
        with pytest.raises(dw.ProtocolError):
            dw._json_records(resp)
