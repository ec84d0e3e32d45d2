"""Binary voxel volumes and their 2-D projections.

Axis convention used throughout the package: x = left-right,
y = anterior-posterior, z = inferior-superior.  The axial view projects
along z, the coronal view along y and the sagittal view along x.

Volumes are stored on disk in the MVOL container: an ASCII magic line
``MVOL1``, one header line (dims, spacing, dtype), then the raw payload
in x-fastest linear order.  Binary masks use one unsigned byte per voxel
(values 0/1); projection stacks reuse the container with dtype ``f8``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"MVOL1"

CORONAL = "cor"
SAGITTAL = "sag"
AXIAL = "ax"
VIEWS = (CORONAL, SAGITTAL, AXIAL)

# axis each view projects along
_VIEW_AXIS = {CORONAL: 1, SAGITTAL: 0, AXIAL: 2}


class MvolFormatError(ValueError):
    """Malformed MVOL file; the message names the offending field."""


def _check_spacing(spacing):
    s = tuple(float(v) for v in spacing)
    if len(s) != 3 or any(not math.isfinite(v) or v <= 0 for v in s):
        raise ValueError(f"spacing must be three positive finite reals, got {spacing!r}")
    return s


@dataclass(frozen=True)
class VoxelGrid:
    """3-D binary occupancy mask with physical voxel spacing.

    ``data`` is uint8 with values in {0, 1}, indexed ``data[x, y, z]``.
    The serialized linear order is x-fastest: index = x + nx*(y + ny*z).
    """

    data: np.ndarray
    spacing_mm: tuple[float, float, float]

    def __post_init__(self):
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"grid data must be 3-D and non-empty, got shape {self.data.shape}")
        if self.data.dtype != np.uint8:
            object.__setattr__(self, "data", self.data.astype(np.uint8))
        if self.data.max(initial=0) > 1:
            raise ValueError("grid data must be binary (0/1)")
        object.__setattr__(self, "spacing_mm", _check_spacing(self.spacing_mm))
        self.data.flags.writeable = False

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def extent_mm(self) -> tuple[float, float, float]:
        """Physical extent per axis: dims * spacing."""
        return tuple(n * s for n, s in zip(self.data.shape, self.spacing_mm))

    def occupied_count(self) -> int:
        return int(self.data.sum())

    def __eq__(self, other):
        if not isinstance(other, VoxelGrid):
            return NotImplemented
        return self.spacing_mm == other.spacing_mm and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class ViewStack:
    """One 3-channel projection image for one anatomical view.

    ``data`` is float64 shaped (height, width, 3) with channels
    (airway_mean, airway_mip, lung_mean), all values in [0, 1].
    """

    view: str
    data: np.ndarray

    def __post_init__(self):
        if self.view not in VIEWS:
            raise ValueError(f"view must be one of {VIEWS}, got {self.view!r}")
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"stack data must be (H, W, 3), got shape {self.data.shape}")
        if self.data.dtype != np.float64:
            object.__setattr__(self, "data", self.data.astype(np.float64))
        lo, hi = float(self.data.min()), float(self.data.max())
        if lo < -1e-12 or hi > 1 + 1e-12:
            raise ValueError(f"stack values must lie in [0, 1], got range [{lo}, {hi}]")
        self.data.flags.writeable = False

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


# ---------------------------------------------------------------------------
# MVOL I/O
# ---------------------------------------------------------------------------

def _format_header(dims, spacing, dtype, view=None) -> bytes:
    parts = ["dims", *map(str, dims), "spacing", *(repr(float(s)) for s in spacing),
             "dtype", dtype]
    if view is not None:
        parts += ["view", view]
    return (" ".join(parts) + "\n").encode("ascii")


def _parse_header(line: bytes) -> dict:
    toks = line.decode("ascii", errors="replace").split()
    fields = {}
    i = 0
    try:
        while i < len(toks):
            key = toks[i]
            if key == "dims":
                fields["dims"] = tuple(int(t) for t in toks[i + 1:i + 4])
                i += 4
            elif key == "spacing":
                fields["spacing"] = tuple(float(t) for t in toks[i + 1:i + 4])
                i += 4
            elif key == "dtype":
                fields["dtype"] = toks[i + 1]
                i += 2
            elif key == "view":
                fields["view"] = toks[i + 1]
                i += 2
            else:
                raise MvolFormatError(f"unknown header field {key!r}")
    except (ValueError, IndexError) as exc:
        if isinstance(exc, MvolFormatError):
            raise
        raise MvolFormatError(f"bad header near field {toks[i] if i < len(toks) else '<end>'!r}") from exc
    for req in ("dims", "spacing", "dtype"):
        if req not in fields:
            raise MvolFormatError(f"header missing field {req!r}")
    if len(fields["dims"]) != 3 or any(d <= 0 for d in fields["dims"]):
        raise MvolFormatError("bad header field 'dims'")
    if len(fields["spacing"]) != 3 or any(not math.isfinite(s) or s <= 0 for s in fields["spacing"]):
        raise MvolFormatError("bad header field 'spacing'")
    return fields


def write_mvol(grid: VoxelGrid, path) -> None:
    """Write a binary grid; roundtrips bit-exactly through read_mvol."""
    payload = grid.data.ravel(order="F").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(_format_header(grid.dims, grid.spacing_mm, "u8"))
        fh.write(payload)


def read_mvol(path) -> VoxelGrid:
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != MAGIC:
            raise MvolFormatError(f"bad magic {magic[:16]!r}, expected {MAGIC!r}")
        fields = _parse_header(fh.readline().rstrip(b"\n"))
        if fields["dtype"] != "u8":
            raise MvolFormatError(f"bad header field 'dtype': expected u8, got {fields['dtype']!r}")
        nx, ny, nz = fields["dims"]
        payload = fh.read()
    expected = nx * ny * nz
    if len(payload) != expected:
        raise MvolFormatError(f"payload size mismatch: header dims imply {expected} bytes, got {len(payload)}")
    raw = np.frombuffer(payload, dtype=np.uint8)
    if raw.max(initial=0) > 1:
        bad = int(np.argmax(raw > 1))
        raise MvolFormatError(f"non-binary voxel value {raw[bad]} at linear index {bad}")
    data = raw.reshape((nx, ny, nz), order="F").copy()
    return VoxelGrid(data=data, spacing_mm=fields["spacing"])


def write_stack(stack: ViewStack, path) -> None:
    """Serialize a projection stack in the MVOL container, nz=3, dtype f8."""
    dims = (stack.height, stack.width, 3)
    payload = stack.data.astype("<f8").ravel(order="F").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC + b"\n")
        fh.write(_format_header(dims, (1.0, 1.0, 1.0), "f8", view=stack.view))
        fh.write(payload)


def read_stack(path) -> ViewStack:
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != MAGIC:
            raise MvolFormatError(f"bad magic {magic[:16]!r}, expected {MAGIC!r}")
        fields = _parse_header(fh.readline().rstrip(b"\n"))
        if fields["dtype"] != "f8":
            raise MvolFormatError(f"bad header field 'dtype': expected f8, got {fields['dtype']!r}")
        h, w, c = fields["dims"]
        if c != 3:
            raise MvolFormatError(f"bad header field 'dims': stack needs 3 channels, got {c}")
        payload = fh.read()
    expected = h * w * c * 8
    if len(payload) != expected:
        raise MvolFormatError(f"payload size mismatch: header dims imply {expected} bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype="<f8").reshape((h, w, c), order="F").copy()
    return ViewStack(view=fields.get("view", CORONAL), data=data)


def write_pgm(channel: np.ndarray, path) -> None:
    """8-bit PGM export of one [0,1] channel, for eyeballing."""
    img = np.clip(np.rint(channel * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


# ---------------------------------------------------------------------------
# Geometry operations
# ---------------------------------------------------------------------------

def pad_to_fov(grid: VoxelGrid, target_extent_mm) -> VoxelGrid:
    """Zero-pad a grid to the target physical extent, content centered.

    The target must be at least the grid extent on every axis; the output
    extent matches the target to within one voxel.  When the padding is
    odd, the extra voxel goes to the high-index side.
    """
    ex = tuple(float(v) for v in target_extent_mm)
    pads = []
    for axis in range(3):
        n, s = grid.dims[axis], grid.spacing_mm[axis]
        if ex[axis] < n * s - 1e-9:
            raise ValueError(
                f"target extent {ex[axis]} mm on axis {axis} is smaller than grid extent {n * s} mm"
            )
        n_target = max(n, int(round(ex[axis] / s)))
        lo = (n_target - n) // 2
        pads.append((lo, n_target - n - lo))
    data = np.pad(grid.data, pads, mode="constant", constant_values=0)
    return VoxelGrid(data=data, spacing_mm=grid.spacing_mm)


def resample_nn(grid: VoxelGrid, target_dims) -> VoxelGrid:
    """Nearest-neighbor resample to target dims, preserving physical extent.

    Each output voxel takes the value of the source voxel whose center is
    nearest to the output voxel center; exact ties break toward the lower
    source index.  Spacing is rescaled so extent is unchanged.
    """
    td = tuple(int(v) for v in target_dims)
    if len(td) != 3 or any(v < 1 for v in td):
        raise ValueError(f"target dims must be three positive ints, got {target_dims!r}")
    if td == grid.dims:
        return VoxelGrid(data=grid.data.copy(), spacing_mm=grid.spacing_mm)
    new_spacing = tuple(n * s / t for n, s, t in zip(grid.dims, grid.spacing_mm, td))
    idx = []
    for axis in range(3):
        # output center (i+0.5)*new_s maps to source coordinate q in voxel units
        q = (np.arange(td[axis]) + 0.5) * new_spacing[axis] / grid.spacing_mm[axis] - 0.5
        j = np.ceil(q - 0.5).astype(np.int64)  # round half down: tie toward lower index
        idx.append(np.clip(j, 0, grid.dims[axis] - 1))
    data = grid.data[np.ix_(idx[0], idx[1], idx[2])]
    return VoxelGrid(data=np.ascontiguousarray(data), spacing_mm=new_spacing)


def project(airway: VoxelGrid, lung: VoxelGrid, view: str) -> ViewStack:
    """Tri-channel projection (airway mean, airway MIP, lung mean) for one view."""
    if view not in VIEWS:
        raise ValueError(f"view must be one of {VIEWS}, got {view!r}")
    if airway.dims != lung.dims or airway.spacing_mm != lung.spacing_mm:
        raise ValueError(
            f"airway and lung grids must share dims and spacing, got "
            f"{airway.dims}/{airway.spacing_mm} vs {lung.dims}/{lung.spacing_mm}"
        )
    axis = _VIEW_AXIS[view]
    aw = airway.data.astype(np.float64)
    lu = lung.data.astype(np.float64)
    # remaining axes come out as (first, second); transpose puts z (or y for
    # axial) on image rows so every view is (rows, cols)
    aw_mean = aw.mean(axis=axis).T
    aw_mip = aw.max(axis=axis).T
    lu_mean = lu.mean(axis=axis).T
    return ViewStack(view=view, data=np.stack([aw_mean, aw_mip, lu_mean], axis=-1))


def volume_mm3(grid: VoxelGrid) -> float:
    sx, sy, sz = grid.spacing_mm
    return float(grid.data.sum(dtype=np.int64)) * sx * sy * sz
