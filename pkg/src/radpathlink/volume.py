"""Voxel volumes assembled from MR series, plus a minimal NIfTI-1 interchange.

Array layout is (slices, rows, cols) throughout, C-contiguous, which is
slice-major then row-major in memory. Geometry follows the DICOM patient
coordinate system (LPS, millimetres); the NIfTI writer flips to RAS.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .dicom_core import DataSet, get_float, get_floats, get_int, get_string, tag_for


class VolumeError(Exception):
    """Base class for volume construction and I/O failures."""


class InconsistentGeometry(VolumeError):
    """Series instances disagree on orientation, spacing or shape."""


class NonUniformSpacing(VolumeError):
    """Adjacent slice gaps differ beyond tolerance."""


class MissingPosition(VolumeError):
    """An instance carries no ImagePositionPatient."""


class GeometryMismatch(VolumeError):
    """Two grids that must align do not."""


class BadMagic(VolumeError):
    """Not a single-file NIfTI-1 stream."""


class UnsupportedDtype(VolumeError):
    """Only int16 (code 4) and uint8 (code 2) payloads are handled."""


class HeaderSizeMismatch(VolumeError):
    """Header does not declare the 348-byte NIfTI-1 layout."""


_COSINE_TOL = 1e-4
_SPACING_TOL = 0.01  # mm

Vec3 = tuple[float, float, float]


def _unit(v: Sequence[float]) -> Vec3:
    return (float(v[0]), float(v[1]), float(v[2]))


def _cross(a: Vec3, b: Vec3) -> Vec3:
    return (a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0])


def _dot(a: Sequence[float], b: Sequence[float]) -> float:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _norm(v: Sequence[float]) -> float:
    return math.sqrt(_dot(v, v))


@dataclass(frozen=True)
class VolumeGeometry:
    """Grid shape, spacing and patient-space placement of a volume.

    row_dir is the direction of increasing column index and col_dir the
    direction of increasing row index, matching the two halves of the DICOM
    ImageOrientationPatient attribute. The slice normal is row_dir x col_dir.
    """

    rows: int
    cols: int
    slices: int
    spacing: Vec3  # (dx, dy, dz) in mm
    row_dir: Vec3
    col_dir: Vec3
    origin: Vec3

    def __post_init__(self) -> None:
        if min(self.rows, self.cols, self.slices) <= 0:
            raise InconsistentGeometry("grid dimensions must be positive")
        if min(self.spacing) <= 0:
            raise InconsistentGeometry("spacing components must be positive")
        for name, v in (("row_dir", self.row_dir), ("col_dir", self.col_dir)):
            if abs(_norm(v) - 1.0) > _COSINE_TOL:
                raise InconsistentGeometry("%s is not a unit vector" % name)
        if abs(_dot(self.row_dir, self.col_dir)) > _COSINE_TOL:
            raise InconsistentGeometry("row_dir and col_dir are not orthogonal")

    @property
    def normal(self) -> Vec3:
        return _cross(self.row_dir, self.col_dir)

    @property
    def voxel_count(self) -> int:
        return self.rows * self.cols * self.slices

    def slice_origin(self, k: int) -> Vec3:
        n = self.normal
        dz = self.spacing[2]
        return (self.origin[0] + k * dz * n[0],
                self.origin[1] + k * dz * n[1],
                self.origin[2] + k * dz * n[2])


def geometry_close(a: VolumeGeometry, b: VolumeGeometry,
                   pos_tol: float = _SPACING_TOL, cos_tol: float = _COSINE_TOL) -> bool:
    if (a.rows, a.cols, a.slices) != (b.rows, b.cols, b.slices):
        return False
    if any(abs(x - y) > pos_tol for x, y in zip(a.spacing, b.spacing)):
        return False
    if any(abs(x - y) > pos_tol for x, y in zip(a.origin, b.origin)):
        return False
    for u, v in ((a.row_dir, b.row_dir), (a.col_dir, b.col_dir)):
        if any(abs(x - y) > cos_tol for x, y in zip(u, v)):
            return False
    return True


class ScalarVolume:
    """Signed 16-bit voxel grid with its geometry."""

    __slots__ = ("geometry", "voxels")

    def __init__(self, geometry: VolumeGeometry, voxels: np.ndarray):
        voxels = np.ascontiguousarray(voxels, dtype=np.int16)
        expected = (geometry.slices, geometry.rows, geometry.cols)
        if voxels.shape != expected:
            raise InconsistentGeometry(
                "voxel shape %s does not match geometry %s" % (voxels.shape, expected))
        self.geometry = geometry
        self.voxels = voxels

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScalarVolume):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.voxels, other.voxels)

    def __repr__(self) -> str:
        g = self.geometry
        return "ScalarVolume(%dx%dx%d)" % (g.rows, g.cols, g.slices)


class BinaryMask:
    """One bit per voxel, same layout and geometry as ScalarVolume."""

    __slots__ = ("geometry", "bits")

    def __init__(self, geometry: VolumeGeometry, bits: np.ndarray):
        bits = np.ascontiguousarray(bits, dtype=bool)
        expected = (geometry.slices, geometry.rows, geometry.cols)
        if bits.shape != expected:
            raise InconsistentGeometry(
                "mask shape %s does not match geometry %s" % (bits.shape, expected))
        self.geometry = geometry
        self.bits = bits

    @property
    def set_count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.bits, other.bits)

    def __repr__(self) -> str:
        g = self.geometry
        return "BinaryMask(%dx%dx%d, %d set)" % (g.rows, g.cols, g.slices, self.set_count)


def empty_mask(geometry: VolumeGeometry) -> BinaryMask:
    return BinaryMask(geometry, np.zeros(
        (geometry.slices, geometry.rows, geometry.cols), dtype=bool))


def mask_from_volume(vol: ScalarVolume) -> BinaryMask:
    """Nonzero voxels become set bits; used to read engine mask outputs."""
    return BinaryMask(vol.geometry, vol.voxels != 0)


def union_masks(a: BinaryMask, b: BinaryMask) -> BinaryMask:
    """Voxelwise OR of two masks on the same grid."""
    if a.geometry != b.geometry:
        raise GeometryMismatch("mask geometries differ")
    return BinaryMask(a.geometry, a.bits | b.bits)


# ---------------------------------------------------------------------------
# Series assembly


def slice_projection(ds: DataSet, normal: Vec3) -> float:
    pos = get_floats(ds, tag_for("ImagePositionPatient"))
    if len(pos) != 3:
        raise MissingPosition("instance has no usable ImagePositionPatient")
    return _dot(pos, normal)


def sort_by_position(instances: Sequence[DataSet]) -> list[DataSet]:
    """Order instances ascending along the slice normal of the first one."""
    iop = get_floats(instances[0], tag_for("ImageOrientationPatient"))
    if len(iop) != 6:
        raise InconsistentGeometry("instance has no usable ImageOrientationPatient")
    normal = _cross(_unit(iop[0:3]), _unit(iop[3:6]))
    return sorted(instances, key=lambda ds: slice_projection(ds, normal))


def _slice_pixels(ds: DataSet, rows: int, cols: int) -> np.ndarray:
    raw = None
    el = ds.get(tag_for("PixelData"))
    if el is not None and isinstance(el.value, bytes):
        raw = el.value
    if raw is None:
        raise VolumeError("instance has no PixelData")
    bits = get_int(ds, tag_for("BitsAllocated")) or 16
    signed = (get_int(ds, tag_for("PixelRepresentation")) or 0) == 1
    if bits == 16:
        dtype = np.dtype("<i2") if signed else np.dtype("<u2")
    elif bits == 8:
        dtype = np.dtype("i1") if signed else np.dtype("u1")
    else:
        raise VolumeError("unsupported BitsAllocated %d" % bits)
    count = rows * cols
    if len(raw) < count * dtype.itemsize:
        raise VolumeError("PixelData shorter than Rows*Columns")
    pixels = np.frombuffer(raw[:count * dtype.itemsize], dtype=dtype).reshape(rows, cols)

    slope = get_float(ds, tag_for("RescaleSlope"))
    intercept = get_float(ds, tag_for("RescaleIntercept"))
    if (slope is not None and slope != 1.0) or (intercept is not None and intercept != 0.0):
        scaled = pixels.astype(np.float64) * (slope if slope is not None else 1.0)
        scaled += intercept if intercept is not None else 0.0
        return np.clip(np.rint(scaled), -32768, 32767).astype(np.int16)
    return np.clip(pixels.astype(np.int32), -32768, 32767).astype(np.int16)


def assemble_volume(instances: Sequence[DataSet]) -> ScalarVolume:
    """Build a ScalarVolume from the instances of one MR series.

    Slices are sorted by their projection on the slice normal; the result is
    therefore invariant under permutations of the input. Gap non-uniformity
    beyond 0.01 mm and orientation disagreement beyond 1e-4 are rejected.
    """
    if not instances:
        raise VolumeError("no instances to assemble")

    first = instances[0]
    rows = get_int(first, tag_for("Rows"))
    cols = get_int(first, tag_for("Columns"))
    iop = get_floats(first, tag_for("ImageOrientationPatient"))
    pixel_spacing = get_floats(first, tag_for("PixelSpacing"))
    series_uid = get_string(first, tag_for("SeriesInstanceUID"))
    if rows is None or cols is None:
        raise InconsistentGeometry("Rows/Columns missing")
    if len(iop) != 6:
        raise InconsistentGeometry("ImageOrientationPatient missing or malformed")
    if len(pixel_spacing) != 2:
        raise InconsistentGeometry("PixelSpacing missing or malformed")

    for ds in instances[1:]:
        if get_string(ds, tag_for("SeriesInstanceUID")) != series_uid:
            raise InconsistentGeometry("instances from different series")
        if get_int(ds, tag_for("Rows")) != rows or get_int(ds, tag_for("Columns")) != cols:
            raise InconsistentGeometry("Rows/Columns differ across slices")
        other_iop = get_floats(ds, tag_for("ImageOrientationPatient"))
        if len(other_iop) != 6 or any(
                abs(a - b) > _COSINE_TOL for a, b in zip(iop, other_iop)):
            raise InconsistentGeometry("ImageOrientationPatient differs across slices")
        other_ps = get_floats(ds, tag_for("PixelSpacing"))
        if len(other_ps) != 2 or any(
                abs(a - b) > _SPACING_TOL for a, b in zip(pixel_spacing, other_ps)):
            raise InconsistentGeometry("PixelSpacing differs across slices")

    row_dir = _unit(iop[0:3])
    col_dir = _unit(iop[3:6])
    normal = _cross(row_dir, col_dir)

    keyed = sorted(
        ((slice_projection(ds, normal), ds) for ds in instances), key=lambda kv: kv[0])
    projections = [k for k, _ in keyed]
    ordered = [ds for _, ds in keyed]

    if len(ordered) > 1:
        gaps = [b - a for a, b in zip(projections, projections[1:])]
        if max(gaps) - min(gaps) > _SPACING_TOL:
            raise NonUniformSpacing(
                "slice gaps range %.4f..%.4f mm" % (min(gaps), max(gaps)))
        dz = sum(gaps) / len(gaps)
        if dz <= 0:
            raise NonUniformSpacing("coincident slice positions")
    else:
        dz = get_float(first, tag_for("SliceThickness")) or 1.0

    voxels = np.stack([_slice_pixels(ds, rows, cols) for ds in ordered])
    origin = _unit(get_floats(ordered[0], tag_for("ImagePositionPatient")))
    geometry = VolumeGeometry(
        rows=rows, cols=cols, slices=len(ordered),
        spacing=(float(pixel_spacing[1]), float(pixel_spacing[0]), float(dz)),
        row_dir=row_dir, col_dir=col_dir, origin=origin)
    return ScalarVolume(geometry, voxels)


def instance_uids_by_position(instances: Sequence[DataSet]) -> list[str]:
    ordered = sort_by_position(list(instances))
    return [get_string(ds, tag_for("SOPInstanceUID")) or "" for ds in ordered]


# ---------------------------------------------------------------------------
# NIfTI-1 single-file interchange

_NIFTI_HEADER_SIZE = 348
_NIFTI_VOX_OFFSET = 352.0
_NIFTI_MAGIC = b"n+1\x00"
_DT_UINT8 = 2
_DT_INT16 = 4

# DICOM patient coordinates are LPS; NIfTI affines are RAS.
_LPS_TO_RAS = (-1.0, -1.0, 1.0)


def _affine_rows(g: VolumeGeometry) -> tuple[list[float], list[float], list[float]]:
    cols = []
    for d, s in ((g.row_dir, g.spacing[0]), (g.col_dir, g.spacing[1]),
                 (g.normal, g.spacing[2])):
        cols.append([d[i] * s * _LPS_TO_RAS[i] for i in range(3)])
    t = [g.origin[i] * _LPS_TO_RAS[i] for i in range(3)]
    return ([cols[0][0], cols[1][0], cols[2][0], t[0]],
            [cols[0][1], cols[1][1], cols[2][1], t[1]],
            [cols[0][2], cols[1][2], cols[2][2], t[2]])


def write_nifti1(vol: Union[ScalarVolume, BinaryMask], path: str) -> None:
    """Write a volume (int16) or mask (uint8) as a single-file NIfTI-1."""
    if isinstance(vol, BinaryMask):
        data = vol.bits.astype(np.uint8)
        datatype, bitpix = _DT_UINT8, 8
    else:
        data = vol.voxels.astype("<i2")
        datatype, bitpix = _DT_INT16, 16
    g = vol.geometry

    header = bytearray(_NIFTI_HEADER_SIZE)
    struct.pack_into("<i", header, 0, _NIFTI_HEADER_SIZE)
    struct.pack_into("<8h", header, 40, 3, g.cols, g.rows, g.slices, 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, datatype)
    struct.pack_into("<h", header, 72, bitpix)
    struct.pack_into("<8f", header, 76, 1.0, g.spacing[0], g.spacing[1], g.spacing[2],
                     0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", header, 108, _NIFTI_VOX_OFFSET)
    struct.pack_into("<f", header, 112, 1.0)  # scl_slope
    struct.pack_into("B", header, 123, 2)  # spatial units: mm
    struct.pack_into("<h", header, 254, 1)  # sform: scanner anatomical
    rx, ry, rz = _affine_rows(g)
    struct.pack_into("<4f", header, 280, *rx)
    struct.pack_into("<4f", header, 296, *ry)
    struct.pack_into("<4f", header, 312, *rz)
    header[344:348] = _NIFTI_MAGIC

    with open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(b"\x00" * 4)  # pad to vox_offset
        fh.write(data.tobytes())  # C-order (k,j,i) == NIfTI i-fastest


def read_nifti1(path: str) -> ScalarVolume:
    """Read a single-file NIfTI-1 volume written by this module or compatible
    tools. uint8 payloads (masks) come back as 0/1 int16 voxels."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _NIFTI_HEADER_SIZE:
        raise HeaderSizeMismatch("file shorter than a NIfTI-1 header")
    if blob[344:348] != _NIFTI_MAGIC:
        raise BadMagic("magic is %r, expected n+1" % blob[344:348])
    (sizeof_hdr,) = struct.unpack_from("<i", blob, 0)
    if sizeof_hdr != _NIFTI_HEADER_SIZE:
        raise HeaderSizeMismatch("sizeof_hdr=%d" % sizeof_hdr)

    dim = struct.unpack_from("<8h", blob, 40)
    (datatype,) = struct.unpack_from("<h", blob, 70)
    pixdim = struct.unpack_from("<8f", blob, 76)
    (vox_offset,) = struct.unpack_from("<f", blob, 108)
    (sform_code,) = struct.unpack_from("<h", blob, 254)

    if datatype == _DT_INT16:
        dtype = np.dtype("<i2")
    elif datatype == _DT_UINT8:
        dtype = np.dtype("u1")
    else:
        raise UnsupportedDtype("datatype code %d" % datatype)

    ni = dim[1] if dim[0] >= 1 else 1
    nj = dim[2] if dim[0] >= 2 else 1
    nk = dim[3] if dim[0] >= 3 else 1
    if min(ni, nj, nk) <= 0:
        raise HeaderSizeMismatch("non-positive dimensions %r" % (dim[:4],))

    if sform_code >= 1:
        rx = struct.unpack_from("<4f", blob, 280)
        ry = struct.unpack_from("<4f", blob, 296)
        rz = struct.unpack_from("<4f", blob, 312)
        m = [[rx[c], ry[c], rz[c]] for c in range(4)]  # columns
        spacing = [max(_norm(m[c]), 1e-12) for c in range(3)]
        row_dir = _unit([m[0][i] * _LPS_TO_RAS[i] / spacing[0] for i in range(3)])
        col_dir = _unit([m[1][i] * _LPS_TO_RAS[i] / spacing[1] for i in range(3)])
        origin = _unit([m[3][i] * _LPS_TO_RAS[i] for i in range(3)])
        dx, dy, dz = spacing
    else:
        row_dir, col_dir = (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)
        origin = (0.0, 0.0, 0.0)
        dx = pixdim[1] or 1.0
        dy = pixdim[2] or 1.0
        dz = pixdim[3] or 1.0

    offset = int(vox_offset) if vox_offset >= _NIFTI_HEADER_SIZE else _NIFTI_HEADER_SIZE
    count = ni * nj * nk
    payload = blob[offset:offset + count * dtype.itemsize]
    if len(payload) < count * dtype.itemsize:
        raise HeaderSizeMismatch("data payload shorter than declared dimensions")
    data = np.frombuffer(payload, dtype=dtype).reshape(nk, nj, ni)

    geometry = VolumeGeometry(rows=nj, cols=ni, slices=nk,
                              spacing=(float(dx), float(dy), float(dz)),
                              row_dir=row_dir, col_dir=col_dir, origin=origin)
    return ScalarVolume(geometry, data.astype(np.int16))
