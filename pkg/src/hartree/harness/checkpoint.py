"""Binary checkpoint files.

Layout (little-endian): magic ``b"HRTE"``, uint32 version, uint32 n, uint32 M,
float64 L, t, dt, s, N, mu, then M**n complex128 samples as interleaved
(re, im) pairs in row-major axis order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..dynamics import _resize_coeffs
from ..spectral import ComplexField, GridSpec, forward_transform, inverse_transform, SpectralCoeffs

MAGIC = b"HRTE"
VERSION = 1
_HEADER = struct.Struct("<4sIII6d")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class Checkpoint:
    field: ComplexField
    t: float
    dt: float
    s: float
    N: float
    mu: float
    version: int = VERSION

    @property
    def grid(self) -> GridSpec:
        return self.field.grid

    @property
    def step(self) -> int:
        return round(self.t / self.dt)


def save_checkpoint(path: str | Path, ck: Checkpoint) -> None:
    g = ck.grid
    header = _HEADER.pack(MAGIC, VERSION, g.n, g.M, g.L, ck.t, ck.dt, ck.s, ck.N, float(ck.mu))
    body = np.ascontiguousarray(ck.field.values, dtype="<c16").tobytes()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(header + body)
    tmp.replace(path)


def load_checkpoint(path: str | Path, grid: GridSpec | None = None, resample: bool = False) -> Checkpoint:
    """Read a checkpoint; ``grid`` enforces a match unless ``resample`` is set."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if len(data) < 4 or data[:4] != MAGIC:
        raise CheckpointError(f"bad magic {data[:4]!r} at byte 0, expected {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise CheckpointError(f"truncated header: file ends at byte {len(data)}, header needs {_HEADER.size}")
    _, version, n, M, L, t, dt, s, N, mu = _HEADER.unpack_from(data)
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version}, this build reads version {VERSION}")
    try:
        file_grid = GridSpec(n, M, L)
    except ValueError as exc:
        raise CheckpointError(f"invalid grid in header: {exc}") from None
    need = _HEADER.size + 16 * file_grid.size
    if len(data) != need:
        raise CheckpointError(
            f"truncated payload: file ends at byte {len(data)}, expected {need} bytes"
            if len(data) < need
            else f"trailing data after byte {need} ({len(data) - need} extra bytes)"
        )
    vals = np.frombuffer(data, dtype="<c16", offset=_HEADER.size).reshape(file_grid.shape)
    fld = ComplexField(file_grid, vals.astype(np.complex128))
    if grid is not None and grid != file_grid:
        if not resample:
            raise CheckpointError(f"checkpoint grid {file_grid} does not match run grid {grid}")
        fld = resample_field(fld, grid)
    return Checkpoint(fld, t, dt, s, N, mu, version)


def resample_field(f: ComplexField, grid: GridSpec) -> ComplexField:
    """Spectral resampling onto another resolution of the same box."""
    if grid.n != f.grid.n or grid.L != f.grid.L:
        raise CheckpointError("resampling only changes M; n and L must agree")
    c, _ = _resize_coeffs(forward_transform(f).coeffs, grid.M)
    return inverse_transform(SpectralCoeffs(grid, c))
