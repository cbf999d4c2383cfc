"""Command-line interface.

Exit codes: 0 success, 1 pipeline or lookup failure, 2 usage errors
(argparse's default).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional

from . import dicom_core as dc
from .anatomy import default_master, load_master_file, resolve_study
from .api import serve_api
from .config import ConfigError, ServiceConfig, load_config
from .dicomweb import serve_stub
from .engine import EngineConfig, EngineKind
from .manifests import LinkStatus, ManifestStore
from .pipeline import PipelineContext, _study_datasets, discover_pairs, \
    run_link_pipeline
from .seg import AlgorithmType, SegmentMeta, decode_seg, encode_seg
from .volume import BinaryMask, assemble_volume, geometry_close, mask_from_volume, \
    read_nifti1, write_nifti1

log = logging.getLogger(__name__)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--archive-endpoint", help="DICOMweb archive base URL")
    parser.add_argument("--master-table-path", help="absolute path of the master table")
    parser.add_argument("--manifest-store-path", help="manifest log file")
    parser.add_argument("--bind-address", help="host:port to bind")
    parser.add_argument("--max-concurrent-jobs", type=int)
    parser.add_argument("--engine-kind", choices=[k.value for k in EngineKind])
    parser.add_argument("--engine-command",
                        help="external command template with {input} and {output_dir}")
    parser.add_argument("--engine-timeout", type=float)
    parser.add_argument("--synthetic-threshold", type=int)


def _config_from_args(args: argparse.Namespace) -> ServiceConfig:
    overrides = {
        "archive_endpoint": args.archive_endpoint,
        "master_table_path": args.master_table_path,
        "manifest_store_path": args.manifest_store_path,
        "bind_address": args.bind_address,
        "max_concurrent_jobs": args.max_concurrent_jobs,
    }
    cfg = load_config(args.config, overrides=overrides)
    engine_changes = {}
    if args.engine_kind:
        engine_changes["kind"] = EngineKind(args.engine_kind)
    if args.engine_command:
        engine_changes["command_template"] = args.engine_command
    if args.engine_timeout:
        engine_changes["timeout"] = args.engine_timeout
    if args.synthetic_threshold is not None:
        engine_changes["synthetic_threshold"] = args.synthetic_threshold
    if engine_changes:
        base = cfg.engine
        cfg.engine = EngineConfig(
            kind=engine_changes.get("kind", base.kind),
            command_template=engine_changes.get("command_template",
                                                base.command_template),
            target_map=base.target_map,
            timeout=engine_changes.get("timeout", base.timeout),
            synthetic_threshold=engine_changes.get("synthetic_threshold",
                                                   base.synthetic_threshold),
        )
    return cfg


def _pipeline_context(cfg: ServiceConfig) -> PipelineContext:
    master = load_master_file(cfg.master_table_path) if cfg.master_table_path \
        else default_master()
    store = ManifestStore(cfg.manifest_store_path)
    return PipelineContext(
        archive=cfg.archive_endpoint, master=master, engine=cfg.engine,
        store=store, seg_meta_dir=Path(cfg.manifest_store_path).parent / "seg-meta")


def _wait_forever() -> None:
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass


def cmd_serve(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    server = serve_api(cfg, static_dir=args.static_dir)
    print("link API listening on %s (archive %s)" % (server.url, cfg.archive_endpoint))
    try:
        _wait_forever()
    finally:
        server.stop()
    return 0


def cmd_pacs_stub(args: argparse.Namespace) -> int:
    host, _, port = args.bind.rpartition(":")
    server = serve_stub(args.root, (host or "127.0.0.1", int(port)))
    print("stub archive listening on %s (root %s)" % (server.url, args.root))
    try:
        _wait_forever()
    finally:
        server.stop()
    return 0


def cmd_link(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    ctx = _pipeline_context(cfg)
    manifest = run_link_pipeline(args.radiology, args.wsi, ctx)
    print(json.dumps(manifest.to_json_dict(), indent=2))
    return 0 if manifest.status == LinkStatus.COMPLETE else 1


def cmd_resolve(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    master = load_master_file(cfg.master_table_path) if cfg.master_table_path \
        else default_master()
    try:
        datasets = _study_datasets(cfg.archive_endpoint, args.study)
    except Exception as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    resolved = resolve_study(datasets, master) if datasets else None
    if resolved is None:
        print("no body part resolved for study %s" % args.study)
        return 1
    print(json.dumps(resolved.to_json_dict(), indent=2))
    return 0


def cmd_discover(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    try:
        pairs = discover_pairs(cfg.archive_endpoint)
    except Exception as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    if args.json:
        print(json.dumps([{
            "patientId": rad.patient_id,
            "radiologyStudyUid": rad.study_uid,
            "wsiStudyUid": wsi.study_uid,
        } for rad, wsi in pairs], indent=2))
    else:
        for rad, wsi in pairs:
            print("%s\t%s\t%s" % (rad.patient_id, rad.study_uid, wsi.study_uid))
    return 0


def _safe_name(label: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in label.lower()).strip("_")


def cmd_seg_decode(args: argparse.Namespace) -> int:
    raw = Path(args.input).read_bytes()
    try:
        segments = decode_seg(dc.parse_part10(raw))
    except Exception as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for meta, mask in segments:
        stem = _safe_name(meta.label) or "segment"
        write_nifti1(mask, str(out_dir / ("%s.nii" % stem)))
        (out_dir / ("%s.meta.json" % stem)).write_text(
            json.dumps(meta.to_json_dict(), indent=2), encoding="utf-8")
        print("%s: %d voxels -> %s.nii" % (meta.label, mask.set_count, stem))
    return 0


def _load_segment_meta(path: Path) -> SegmentMeta:
    doc = json.loads(path.read_text(encoding="utf-8"))
    code = doc["anatomy_code"]
    return SegmentMeta(
        label=doc["label"],
        anatomy_code=dc.CodeItem(code["value"], code.get("scheme", "SCT"),
                                 code.get("meaning", "")),
        algorithm_type=AlgorithmType(doc.get("algorithm_type", "AUTOMATIC")),
        algorithm_name=doc.get("algorithm_name", ""),
    )


def cmd_seg_encode(args: argparse.Namespace) -> int:
    if len(args.mask) != len(args.meta):
        print("error: need one --meta per --mask", file=sys.stderr)
        return 1
    reference_dir = Path(args.reference)
    instances = []
    for path in sorted(reference_dir.glob("*.dcm")):
        instances.append(dc.parse_part10(path.read_bytes()).body)
    if not instances:
        print("error: no .dcm instances under %s" % reference_dir, file=sys.stderr)
        return 1
    try:
        volume = assemble_volume(instances)
        pairs = []
        for mask_path, meta_path in zip(args.mask, args.meta):
            mask_vol = read_nifti1(mask_path)
            if not geometry_close(mask_vol.geometry, volume.geometry):
                print("error: %s is not on the reference grid" % mask_path,
                      file=sys.stderr)
                return 1
            pairs.append((_load_segment_meta(Path(meta_path)),
                          BinaryMask(volume.geometry, mask_vol.voxels != 0)))
        seg = encode_seg(pairs, instances, volume.geometry)
    except Exception as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1
    Path(args.output).write_bytes(dc.serialize_part10(seg.file))
    print("wrote %s (series %s, %d segment(s))"
          % (args.output, seg.series_uid, len(pairs)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radpathlink",
        description="Link pathology studies to radiology studies in a PACS")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the link API service")
    _add_config_flags(p)
    p.add_argument("--static-dir", help="serve a built web client from this directory")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("pacs-stub", help="run the stub DICOMweb archive")
    p.add_argument("--root", required=True, help="storage directory")
    p.add_argument("--bind", default="127.0.0.1:8042", help="host:port")
    p.set_defaults(func=cmd_pacs_stub)

    p = sub.add_parser("link", help="run one link pipeline and print the manifest")
    _add_config_flags(p)
    p.add_argument("--radiology", required=True, help="radiology StudyInstanceUID")
    p.add_argument("--wsi", required=True, help="WSI StudyInstanceUID")
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("resolve", help="print the resolved body part of a study")
    _add_config_flags(p)
    p.add_argument("--study", required=True, help="StudyInstanceUID")
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("discover", help="print candidate radiology/WSI pairs")
    _add_config_flags(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("seg", help="file-level SEG codec access")
    seg_sub = p.add_subparsers(dest="seg_command", required=True)

    q = seg_sub.add_parser("decode", help="unpack a SEG file into NIfTI masks")
    q.add_argument("--input", required=True, help="SEG .dcm file")
    q.add_argument("--output-dir", required=True)
    q.set_defaults(func=cmd_seg_decode)

    q = seg_sub.add_parser("encode", help="build a SEG file from NIfTI masks")
    q.add_argument("--mask", action="append", required=True,
                   help="mask .nii (repeatable)")
    q.add_argument("--meta", action="append", required=True,
                   help="segment metadata .json (repeatable, paired with --mask)")
    q.add_argument("--reference", required=True,
                   help="directory of the source series .dcm files")
    q.add_argument("--output", required=True, help="output SEG .dcm")
    q.set_defaults(func=cmd_seg_encode)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
