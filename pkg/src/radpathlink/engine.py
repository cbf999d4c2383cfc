"""Organ mask production.

Two engines share one contract: an external command invoked over NIfTI
files (the production path) and a deterministic synthetic engine used by
tests and demos. Both return a mask bound to the input volume's grid.
"""

from __future__ import annotations

import enum
import os
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .anatomy import ResolvedBodyPart, default_master
from .volume import BinaryMask, GeometryMismatch, ScalarVolume, geometry_close, \
    mask_from_volume, read_nifti1, write_nifti1


class EngineError(Exception):
    """Base class for engine failures."""


class EngineTimeout(EngineError):
    """Command did not finish within the configured timeout."""


class EngineExit(EngineError):
    """Command exited nonzero; carries captured stderr."""

    def __init__(self, status: int, stderr: str):
        super().__init__("engine exited %d: %s" % (status, stderr.strip()[-500:]))
        self.status = status
        self.stderr = stderr


class MissingOutput(EngineError):
    """An expected per-structure output file never appeared."""


class EngineKind(enum.Enum):
    EXTERNAL = "external"
    SYNTHETIC = "synthetic"


def default_target_map() -> dict[str, list[str]]:
    """Structure-name mapping derived from the bundled master table: paired
    organs map to their _left/_right file names, everything else to itself."""
    mapping: dict[str, list[str]] = {}
    for entry in default_master().entries:
        stem = entry.canonical_label.replace(" ", "_")
        if entry.paired:
            mapping[entry.canonical_label] = [stem + "_left", stem + "_right"]
        else:
            mapping[entry.canonical_label] = [stem]
    return mapping


@dataclass
class EngineConfig:
    kind: EngineKind = EngineKind.SYNTHETIC
    command_template: str = ""
    target_map: dict[str, list[str]] = field(default_factory=default_target_map)
    timeout: float = 300.0
    synthetic_threshold: int = 128

    def __post_init__(self) -> None:
        if isinstance(self.kind, str):
            self.kind = EngineKind(self.kind)
        if self.kind is EngineKind.EXTERNAL and not self.command_template:
            raise ValueError("external engine requires a command_template")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")

    @property
    def engine_name(self) -> str:
        if self.kind is EngineKind.SYNTHETIC:
            return "synthetic"
        argv = shlex.split(self.command_template)
        return os.path.basename(argv[0]) if argv else "external"


@dataclass
class EngineResult:
    mask: BinaryMask
    structure_names: list[str]
    engine_name: str
    elapsed: float


@dataclass
class EngineReport:
    kind: EngineKind
    ok: bool
    issues: list[str]
    discovered: list[str]


_NEIGHBORS_6 = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


def largest_component_6(bits: np.ndarray) -> np.ndarray:
    """Keep the largest 6-connected component of a 3-D boolean array."""
    bits = np.asarray(bits, dtype=bool)
    visited = np.zeros_like(bits)
    best: list[tuple[int, int, int]] = []
    nz, ny, nx = bits.shape
    for seed in zip(*np.nonzero(bits)):
        if visited[seed]:
            continue
        stack = [seed]
        visited[seed] = True
        component = []
        while stack:
            z, y, x = stack.pop()
            component.append((z, y, x))
            for dz, dy, dx in _NEIGHBORS_6:
                nz_, ny_, nx_ = z + dz, y + dy, x + dx
                if 0 <= nz_ < nz and 0 <= ny_ < ny and 0 <= nx_ < nx \
                        and bits[nz_, ny_, nx_] and not visited[nz_, ny_, nx_]:
                    visited[nz_, ny_, nx_] = True
                    stack.append((nz_, ny_, nx_))
        if len(component) > len(best):
            best = component
    out = np.zeros_like(bits)
    if best:
        zz, yy, xx = zip(*best)
        out[list(zz), list(yy), list(xx)] = True
    return out


def _run_synthetic(vol: ScalarVolume, target: ResolvedBodyPart,
                   cfg: EngineConfig) -> EngineResult:
    started = time.monotonic()
    bits = vol.voxels >= cfg.synthetic_threshold
    if bits.any():
        bits = largest_component_6(bits)
    mask = BinaryMask(vol.geometry, bits)
    return EngineResult(mask=mask, structure_names=[target.label],
                        engine_name=cfg.engine_name,
                        elapsed=time.monotonic() - started)


def _invoke(cfg: EngineConfig, input_path: str, output_dir: str) -> None:
    command = cfg.command_template.replace("{input}", input_path) \
        .replace("{output_dir}", output_dir)
    argv = shlex.split(command)
    try:
        proc = subprocess.run(argv, capture_output=True, text=True,
                              timeout=cfg.timeout)
    except subprocess.TimeoutExpired as exc:
        raise EngineTimeout("no exit within %.0f s" % cfg.timeout) from exc
    except OSError as exc:
        raise EngineExit(127, str(exc)) from exc
    if proc.returncode != 0:
        raise EngineExit(proc.returncode, proc.stderr)


def _run_external(vol: ScalarVolume, target: ResolvedBodyPart,
                  cfg: EngineConfig) -> EngineResult:
    structures = cfg.target_map.get(target.label)
    if not structures:
        raise EngineError("target %r has no structure mapping" % target.label)

    started = time.monotonic()
    with tempfile.TemporaryDirectory(prefix="radpathlink-engine-") as td:
        input_path = os.path.join(td, "input.nii")
        output_dir = os.path.join(td, "out")
        os.mkdir(output_dir)
        write_nifti1(vol, input_path)
        _invoke(cfg, input_path, output_dir)

        bits = np.zeros_like(vol.voxels, dtype=bool)
        for structure in structures:
            path = os.path.join(output_dir, structure + ".nii")
            if not os.path.exists(path):
                raise MissingOutput("%s.nii not produced" % structure)
            structure_vol = read_nifti1(path)
            if not geometry_close(structure_vol.geometry, vol.geometry):
                raise GeometryMismatch(
                    "engine output %r is not on the input grid" % structure)
            bits |= mask_from_volume(structure_vol).bits
    # Rebind to the exact input geometry: NIfTI floats are only close.
    mask = BinaryMask(vol.geometry, bits)
    return EngineResult(mask=mask, structure_names=list(structures),
                        engine_name=cfg.engine_name,
                        elapsed=time.monotonic() - started)


def run_engine(vol: ScalarVolume, target: ResolvedBodyPart,
               cfg: EngineConfig) -> EngineResult:
    """Produce the organ mask for the resolved target.

    The external path unions one mask per mapped structure name (left and
    right organs collapse into a single segment); the synthetic path
    thresholds the volume and keeps the largest 6-connected component.
    """
    if cfg.kind is EngineKind.SYNTHETIC:
        return _run_synthetic(vol, target, cfg)
    return _run_external(vol, target, cfg)


def _probe_volume() -> ScalarVolume:
    from .volume import VolumeGeometry
    geometry = VolumeGeometry(rows=4, cols=4, slices=2, spacing=(1.0, 1.0, 1.0),
                              row_dir=(1.0, 0.0, 0.0), col_dir=(0.0, 1.0, 0.0),
                              origin=(0.0, 0.0, 0.0))
    voxels = np.zeros((2, 4, 4), dtype=np.int16)
    voxels[:, 1:3, 1:3] = 500
    return ScalarVolume(geometry, voxels)


def validate_engine(cfg: EngineConfig) -> EngineReport:
    """Probe the engine configuration; failures land in the report, not as
    exceptions."""
    if cfg.kind is EngineKind.SYNTHETIC:
        return EngineReport(kind=cfg.kind, ok=True, issues=[], discovered=[])

    issues: list[str] = []
    discovered: list[str] = []
    with tempfile.TemporaryDirectory(prefix="radpathlink-probe-") as td:
        input_path = os.path.join(td, "probe.nii")
        output_dir = os.path.join(td, "out")
        os.mkdir(output_dir)
        write_nifti1(_probe_volume(), input_path)
        try:
            _invoke(cfg, input_path, output_dir)
        except EngineError as exc:
            issues.append("%s: %s" % (type(exc).__name__, exc))
        discovered = sorted(p.name for p in Path(output_dir).iterdir())
        if not issues and not discovered:
            issues.append("MissingOutput: command produced no files in {output_dir}")
    return EngineReport(kind=cfg.kind, ok=not issues, issues=issues,
                        discovered=discovered)
