"""Seed an archive with a synthetic MR + WSI pair and run one link pipeline.

Usage: python3 tools/seed_demo.py --archive http://127.0.0.1:8042
"""

from __future__ import annotations

import argparse
import json
import tempfile

import numpy as np

from radpathlink import dicom_core as dc
from radpathlink import dicomweb as dw
from radpathlink.dicom_core import DataSet, tag_for
from radpathlink.engine import EngineConfig
from radpathlink.manifests import ManifestStore
from radpathlink.pipeline import PipelineContext, run_link_pipeline


def build_mr_series(study_uid: str, series_uid: str, *, slices: int = 8,
                    rows: int = 64, cols: int = 64,
                    patient_id: str = "P001") -> list[DataSet]:
    frame_of_ref = dc.new_uid()
    out = []
    yy, xx = np.mgrid[0:rows, 0:cols]
    for k in range(slices):
        ds = DataSet()
        ds.put_keyword("SOPClassUID", dc.MR_IMAGE_STORAGE)
        ds.put_keyword("SOPInstanceUID", dc.new_uid())
        ds.put_keyword("StudyInstanceUID", study_uid)
        ds.put_keyword("SeriesInstanceUID", series_uid)
        ds.put_keyword("PatientID", patient_id)
        ds.put_keyword("PatientName", "Demo^Patient")
        ds.put_keyword("Modality", "MR")
        ds.put_keyword("StudyDescription", "MRT Becken")
        ds.put_keyword("SeriesDescription", "T2 axial")
        ds.put_keyword("StudyDate", "20260101")
        ds.put_keyword("Rows", [rows])
        ds.put_keyword("Columns", [cols])
        ds.put_keyword("BitsAllocated", [16])
        ds.put_keyword("BitsStored", [16])
        ds.put_keyword("HighBit", [15])
        ds.put_keyword("PixelRepresentation", [1])
        ds.put_keyword("ImageOrientationPatient", "1\\0\\0\\0\\1\\0")
        ds.put_keyword("PixelSpacing", "1\\1")
        ds.put_keyword("ImagePositionPatient", "0\\0\\%g" % (3.0 * k))
        ds.put_keyword("SliceThickness", "3.0")
        ds.put_keyword("FrameOfReferenceUID", frame_of_ref)

        # noisy background with a bright organ-ish ellipsoid; the z radius
        # spans the whole stack so every slice shows a clickable region
        rng = np.random.default_rng(k)
        pixels = rng.integers(20, 120, (rows, cols)).astype(np.int16)
        cz = (slices - 1) / 2
        r2 = (((xx - cols / 2) / (cols / 5)) ** 2
              + ((yy - rows / 2) / (rows / 6)) ** 2
              + ((k - cz) / (slices * 0.7)) ** 2)
        pixels[r2 < 1.0] = 900
        ds.put(tag_for("PixelData"), "OW", pixels.astype("<i2").tobytes())
        out.append(ds)
    return out


def build_wsi_pyramid(study_uid: str, series_uid: str, *,
                      patient_id: str = "P001", base: int = 512,
                      levels: int = 3) -> list[DataSet]:
    """Level 0 is the coarse overview (single 128px tile), deeper levels
    double the resolution up to `base`."""
    out = []
    rng = np.random.default_rng(42)
    full = None
    sizes = [base >> (levels - 1 - i) for i in range(levels)]  # coarse first
    for level, size in enumerate(sizes):
        ds = DataSet()
        ds.put_keyword("SOPClassUID", dc.VL_WHOLE_SLIDE_MICROSCOPY_STORAGE)
        ds.put_keyword("SOPInstanceUID", dc.new_uid())
        ds.put_keyword("StudyInstanceUID", study_uid)
        ds.put_keyword("SeriesInstanceUID", series_uid)
        ds.put_keyword("PatientID", patient_id)
        ds.put_keyword("PatientName", "Demo^Patient")
        ds.put_keyword("Modality", "SM")
        ds.put_keyword("BodyPartExamined", "PROSTATE")
        ds.put_keyword("StudyDescription", "Histology prostate biopsy")
        ds.put_keyword("InstanceNumber", str(level + 1))
        ds.put_keyword("Rows", [size])
        ds.put_keyword("Columns", [size])
        ds.put_keyword("BitsAllocated", [8])
        if full is None:
            # blotchy tissue-like texture at full resolution, downsampled
            # for the coarser levels
            full = rng.integers(120, 250, (base, base)).astype(np.uint8)
            for _ in range(60):
                y, x = rng.integers(0, base, 2)
                r = int(rng.integers(6, 30))
                yy, xx = np.mgrid[0:base, 0:base]
                full[(yy - y) ** 2 + (xx - x) ** 2 < r * r] //= 2
        step = base // size
        pixels = full[::step, ::step]
        ds.put(tag_for("PixelData"), "OB", np.ascontiguousarray(pixels).tobytes())
        out.append(ds)
    return out


def seed(archive: str, run_link: bool = True,
         manifest_store_path: str | None = None) -> dict:
    mr_study, mr_series = dc.new_uid(), dc.new_uid()
    sm_study, sm_series = dc.new_uid(), dc.new_uid()
    files = [dc.wrap_dataset(ds) for ds in
             build_mr_series(mr_study, mr_series)
             + build_wsi_pyramid(sm_study, sm_series)]
    result = dw.stow_store(archive, files)
    if result.failed:
        raise SystemExit("seed failed: %s" % result.failed)

    info = {"archive": archive, "mrStudy": mr_study, "mrSeries": mr_series,
            "wsiStudy": sm_study}
    if run_link:
        store_path = manifest_store_path or \
            tempfile.NamedTemporaryFile(suffix=".jsonl", delete=False).name
        ctx = PipelineContext(archive=archive,
                              engine=EngineConfig(synthetic_threshold=500),
                              store=ManifestStore(store_path))
        manifest = run_link_pipeline(mr_study, sm_study, ctx)
        info["manifestId"] = manifest.id
        info["manifestStatus"] = manifest.status
        info["segSeriesUid"] = manifest.seg_series_uid
        info["manifestStore"] = store_path
    return info


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--archive", required=True)
    parser.add_argument("--no-link", action="store_true",
                        help="seed studies only, do not run the pipeline")
    parser.add_argument("--manifest-store-path")
    args = parser.parse_args()
    info = seed(args.archive, run_link=not args.no_link,
                manifest_store_path=args.manifest_store_path)
    print(json.dumps(info, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
