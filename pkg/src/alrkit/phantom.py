"""Synthetic paired full-lung / cardiac mask volumes with known ALR.

A phantom is two tangent lung ellipsoids plus a binary tree of tapered
cylindrical tubes descending from a trachea.  Tube radii are known
analytically, so the phantom's airway-to-lung ratio is exact: the mean
of the first 19 branch diameters in breadth-first order divided by the
cube root of the voxelized lung volume.  The simulated cardiac
acquisition keeps only the inferior portion of the volume at a coarser
slice spacing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .volgrid import VoxelGrid, volume_mm3, write_mvol

FL_SLICE_MM = 0.5
# in-plane spacing per scanner stratum, spanning the cardiac-CT range
STRATUM_INPLANE_MM = (0.625, 0.547, 0.703, 0.781)

DEFAULT_Z_FRACTION = 2.0 / 3.0
DEFAULT_SLICE_FACTOR = 5

_CANVAS_MARGIN_MM = 3.0
_N_GT_BRANCHES = 19
_SPLIT_TAG = 24180  # keeps split shuffles independent of spec sampling


@dataclass(frozen=True)
class PhantomSpec:
    seed: int
    lung_semi_axes_mm: tuple[float, float, float] = (11.0, 8.0, 15.0)
    trachea_radius_mm: float = 2.5
    tree_depth: int = 5
    taper: float = 0.8
    branch_angle_deg: float = 38.0
    jitter: float = 0.0
    stratum: int = 0

    def __post_init__(self):
        a, b, c = self.lung_semi_axes_mm
        if min(a, b, c) <= 0 or self.trachea_radius_mm <= 0:
            raise ValueError("lung semi-axes and trachea radius must be positive")
        if self.tree_depth < 3:
            raise ValueError("tree_depth must be >= 3")
        if not 0.0 < self.taper < 1.0:
            raise ValueError("taper must lie in (0, 1)")
        if not 0.0 <= self.jitter <= 0.3:
            raise ValueError("jitter must lie in [0, 0.3]")


@dataclass(frozen=True)
class TreeBranch:
    id: int
    gen: int
    parent: int
    p0: np.ndarray  # mm, world frame
    p1: np.ndarray
    radius_mm: float

    @property
    def length_mm(self) -> float:
        return float(np.linalg.norm(self.p1 - self.p0))


@dataclass(frozen=True)
class PhantomPair:
    id: int
    fl_lung: VoxelGrid
    fl_airway: VoxelGrid
    cc_lung: VoxelGrid
    cc_airway: VoxelGrid
    alr_gt: float
    branch_table: list  # (branch id, analytic diameter mm, generation)
    stratum: int


def _rotate(v: np.ndarray, axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation of v about a unit axis."""
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return v * c + np.cross(axis, v) * s + axis * float(np.dot(axis, v)) * (1.0 - c)


def build_tree(spec: PhantomSpec, root_mm: np.ndarray, trachea_len_mm: float,
               rng: np.random.Generator) -> list[TreeBranch]:
    """Breadth-first binary tree of tapered tubes below a trachea.

    Children split off at +/- branch_angle from the parent direction; the
    branching plane rotates 90 degrees per generation so the tree spreads
    in 3-D.  Jitter perturbs angles, lengths and radii per branch.
    """
    j = spec.jitter
    theta0 = math.radians(spec.branch_angle_deg)
    root_dir = np.array([0.0, 0.0, -1.0])
    root_u = np.array([1.0, 0.0, 0.0])

    branches = [TreeBranch(0, 0, -1, root_mm.copy(), root_mm + root_dir * trachea_len_mm,
                           spec.trachea_radius_mm)]
    frames = {0: (root_dir, root_u, trachea_len_mm)}
    next_id = 1
    frontier = [0]
    for gen in range(1, spec.tree_depth):
        new_frontier = []
        for pid in frontier:
            parent = branches[pid]
            d, u, plen = frames[pid]
            phi = math.radians(90.0) + rng.uniform(-1.0, 1.0) * j * math.radians(45.0)
            axis = _rotate(u, d, phi)
            axis /= np.linalg.norm(axis)
            for sign in (+1.0, -1.0):
                theta = theta0 * (1.0 + rng.uniform(-0.5, 0.5) * j)
                cdir = _rotate(d, axis, sign * theta)
                cdir /= np.linalg.norm(cdir)
                clen = spec.taper * plen * (1.0 + rng.uniform(-0.3, 0.3) * j)
                crad = spec.taper * parent.radius_mm * (1.0 + rng.uniform(-0.3, 0.3) * j)
                p0 = parent.p1.copy()
                branches.append(TreeBranch(next_id, gen, pid, p0, p0 + cdir * clen, crad))
                frames[next_id] = (cdir, axis, clen)
                new_frontier.append(next_id)
                next_id += 1
        frontier = new_frontier
    return branches


def voxelize_tree(branches, shape, spacing_mm, max_voxel_mm=None) -> np.ndarray:
    """Rasterize tube capsules onto a voxel grid (centers at (i+0.5)*spacing)."""
    sp = np.asarray(spacing_mm, dtype=np.float64)
    if max_voxel_mm is None:
        max_voxel_mm = float(sp.max())
    mask = np.zeros(shape, dtype=np.uint8)
    axes = [(np.arange(n) + 0.5) * s for n, s in zip(shape, sp)]
    for br in branches:
        if 2.0 * br.radius_mm < max_voxel_mm:
            raise ValueError(
                f"branch {br.id} (generation {br.gen}): tube diameter "
                f"{2 * br.radius_mm:.3f} mm is thinner than one voxel ({max_voxel_mm:.3f} mm)"
            )
        if br.length_mm <= 1e-9:
            raise ValueError(f"branch {br.id} (generation {br.gen}): degenerate zero-length tube")
        lo_mm = np.minimum(br.p0, br.p1) - br.radius_mm - sp
        hi_mm = np.maximum(br.p0, br.p1) + br.radius_mm + sp
        lo = np.maximum(0, np.floor(lo_mm / sp - 0.5).astype(int))
        hi = np.minimum(shape, np.ceil(hi_mm / sp + 0.5).astype(int))
        if np.any(lo >= hi):
            continue
        xs = axes[0][lo[0]:hi[0]]
        ys = axes[1][lo[1]:hi[1]]
        zs = axes[2][lo[2]:hi[2]]
        cx, cy, cz = np.meshgrid(xs, ys, zs, indexing="ij")
        pts = np.stack([cx, cy, cz], axis=-1)
        v = br.p1 - br.p0
        vv = float(np.dot(v, v))
        t = np.clip(np.tensordot(pts - br.p0, v, axes=([-1], [0])) / vv, 0.0, 1.0)
        nearest = br.p0 + t[..., None] * v
        dist2 = np.sum((pts - nearest) ** 2, axis=-1)
        sub = mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
        sub[dist2 <= br.radius_mm ** 2] = 1
    return mask


def _ellipsoid_pair_mask(shape, spacing_mm, center_mm, semi_axes_mm) -> np.ndarray:
    sp = np.asarray(spacing_mm)
    a, b, c = semi_axes_mm
    axes = [(np.arange(n) + 0.5) * s for n, s in zip(shape, sp)]
    x = axes[0][:, None, None]
    y = axes[1][None, :, None]
    z = axes[2][None, None, :]
    mask = np.zeros(shape, dtype=np.uint8)
    for side in (-1.0, +1.0):
        cx = center_mm[0] + side * a  # tangent at the midline
        q = (((x - cx) / a) ** 2 + ((y - center_mm[1]) / b) ** 2
             + ((z - center_mm[2]) / c) ** 2)
        mask |= (q <= 1.0).astype(np.uint8)
    return mask


def gen_phantom(spec: PhantomSpec, z_fraction: float = DEFAULT_Z_FRACTION,
                slice_factor: int = DEFAULT_SLICE_FACTOR,
                in_plane_mm: float | None = None, slice_mm: float = FL_SLICE_MM,
                pair_id: int = 0) -> PhantomPair:
    """Generate one paired phantom; deterministic for a fixed spec."""
    if 2 ** spec.tree_depth - 1 < _N_GT_BRANCHES:
        raise ValueError(
            f"tree_depth {spec.tree_depth} yields {2 ** spec.tree_depth - 1} branches; "
            f"need >= {_N_GT_BRANCHES} for the ground-truth ALR"
        )
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    a, b, c = spec.lung_semi_axes_mm
    if in_plane_mm is None:
        in_plane_mm = STRATUM_INPLANE_MM[spec.stratum % len(STRATUM_INPLANE_MM)]
    spacing = (float(in_plane_mm), float(in_plane_mm), float(slice_mm))

    ext = (4.0 * a + 2 * _CANVAS_MARGIN_MM,
           2.0 * b + 2 * _CANVAS_MARGIN_MM,
           2.0 * c + 2 * _CANVAS_MARGIN_MM)
    shape = tuple(int(math.ceil(e / s)) for e, s in zip(ext, spacing))
    center = np.array([n * s / 2.0 for n, s in zip(shape, spacing)])

    root = center + np.array([0.0, 0.0, 0.95 * c])
    branches = build_tree(spec, root, 0.75 * c, rng)
    airway = voxelize_tree(branches, shape, spacing)

    lung = _ellipsoid_pair_mask(shape, spacing, center, (a, b, c))
    # lung tissue always surrounds the airway lumen with >= 2 voxels to spare
    lung |= ndimage.binary_dilation(airway, iterations=2).astype(np.uint8)

    fl_lung = VoxelGrid(data=lung, spacing_mm=spacing)
    fl_airway = VoxelGrid(data=airway, spacing_mm=spacing)
    cc_lung = cardiac_crop(fl_lung, z_fraction, slice_factor)
    cc_airway = cardiac_crop(fl_airway, z_fraction, slice_factor)

    table = [(br.id, 2.0 * br.radius_mm, br.gen) for br in branches]
    mean_d = float(np.mean([d for _, d, _ in table[:_N_GT_BRANCHES]]))
    alr_gt = mean_d / volume_mm3(fl_lung) ** (1.0 / 3.0)
    return PhantomPair(id=pair_id, fl_lung=fl_lung, fl_airway=fl_airway,
                       cc_lung=cc_lung, cc_airway=cc_airway, alr_gt=alr_gt,
                       branch_table=table, stratum=spec.stratum)


def cardiac_crop(grid: VoxelGrid, z_fraction: float, slice_factor: int) -> VoxelGrid:
    """Keep the inferior z_fraction of the volume at every slice_factor-th slice."""
    if not 0.0 < z_fraction <= 1.0:
        raise ValueError(f"z_fraction must lie in (0, 1], got {z_fraction}")
    if slice_factor < 1 or int(slice_factor) != slice_factor:
        raise ValueError(f"slice_factor must be a positive integer, got {slice_factor}")
    nz = grid.dims[2]
    n_keep = int(math.floor(nz * z_fraction + 1e-9))
    data = grid.data[:, :, :n_keep][:, :, ::int(slice_factor)]
    if data.shape[2] < 2:
        raise ValueError(f"crop leaves {data.shape[2]} slices; need at least 2")
    sx, sy, sz = grid.spacing_mm
    return VoxelGrid(data=np.ascontiguousarray(data), spacing_mm=(sx, sy, sz * slice_factor))


# ---------------------------------------------------------------------------
# Dataset generation
# ---------------------------------------------------------------------------

MANIFEST_COLUMNS = ("id", "fl_lung", "fl_airway", "cc_lung", "cc_airway",
                    "alr_gt", "stratum", "split")
RESCAN_COLUMNS = ("id", "cc_lung_a", "cc_airway_a", "cc_lung_b", "cc_airway_b",
                  "alr_gt", "stratum")


def _sample_spec(master_seed: int, idx: int, stratum: int, jitter: float) -> tuple:
    rng = np.random.default_rng(np.random.SeedSequence((master_seed, idx)))
    semi = (float(rng.uniform(9.5, 12.5)), float(rng.uniform(7.0, 9.0)),
            float(rng.uniform(13.0, 17.0)))
    spec = PhantomSpec(
        seed=int(rng.integers(0, 2 ** 31 - 1)),
        lung_semi_axes_mm=semi,
        trachea_radius_mm=float(rng.uniform(2.1, 2.9)),
        tree_depth=5,
        taper=float(rng.uniform(0.75, 0.85)),
        branch_angle_deg=float(rng.uniform(32.0, 44.0)),
        jitter=jitter,
        stratum=stratum,
    )
    return spec, rng


def _draw_z_fraction(rng: np.random.Generator) -> float:
    return float(rng.uniform(0.62, 0.70))


def split_counts(m: int) -> tuple[int, int, int]:
    """80:20 test split then 80:20 val split, floors; returns (train, val, test)."""
    n_test = int(math.floor(0.2 * m))
    n_val = int(math.floor(0.2 * (m - n_test)))
    return m - n_test - n_val, n_val, n_test


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def gen_dataset(n: int, master_seed: int, strata_count: int, out_dir) -> Path:
    """Write n phantoms as MVOL files plus a stratified split manifest.

    Per-stratum splits follow the 80:20-then-80:20 rule (floored); the
    manifest is byte-deterministic in master_seed.
    """
    if not n >= strata_count >= 1:
        raise ValueError(f"need n >= strata_count >= 1, got n={n}, strata_count={strata_count}")
    out = Path(out_dir)
    vol_dir = out / "volumes"
    vol_dir.mkdir(parents=True, exist_ok=True)

    strata = [i % strata_count for i in range(n)]
    rows = []
    for i in range(n):
        spec, rng = _sample_spec(master_seed, i, strata[i], jitter=0.1)
        pair = gen_phantom(spec, z_fraction=_draw_z_fraction(rng), pair_id=i)
        paths = {}
        for key, grid in (("fl_lung", pair.fl_lung), ("fl_airway", pair.fl_airway),
                          ("cc_lung", pair.cc_lung), ("cc_airway", pair.cc_airway)):
            rel = f"volumes/{key}_{i:04d}.mvol"
            write_mvol(grid, out / rel)
            paths[key] = rel
        rows.append({"id": str(i), **paths, "alr_gt": _fmt(pair.alr_gt),
                     "stratum": str(strata[i]), "split": ""})

    for stratum in range(strata_count):
        ids = [i for i in range(n) if strata[i] == stratum]
        order = np.random.default_rng(
            np.random.SeedSequence((master_seed, _SPLIT_TAG, stratum))).permutation(len(ids))
        shuffled = [ids[k] for k in order]
        n_train, n_val, n_test = split_counts(len(ids))
        for k, i in enumerate(shuffled):
            rows[i]["split"] = "test" if k < n_test else ("val" if k < n_test + n_val else "train")

    manifest = out / "manifest.csv"
    _write_csv(manifest, MANIFEST_COLUMNS, rows)
    return manifest


def gen_rescan_set(n: int, master_seed: int, strata_count: int, out_dir) -> Path:
    """Write n phantom subjects with two independently jittered cardiac crops each."""
    if not n >= strata_count >= 1:
        raise ValueError(f"need n >= strata_count >= 1, got n={n}, strata_count={strata_count}")
    out = Path(out_dir)
    vol_dir = out / "volumes"
    vol_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for i in range(n):
        stratum = i % strata_count
        spec, rng = _sample_spec(master_seed, i, stratum, jitter=0.1)
        zf_a, zf_b = _draw_z_fraction(rng), _draw_z_fraction(rng)
        pair = gen_phantom(spec, z_fraction=zf_a, pair_id=i)
        cc_lung_b = cardiac_crop(pair.fl_lung, zf_b, DEFAULT_SLICE_FACTOR)
        cc_airway_b = cardiac_crop(pair.fl_airway, zf_b, DEFAULT_SLICE_FACTOR)
        paths = {}
        for key, grid in (("cc_lung_a", pair.cc_lung), ("cc_airway_a", pair.cc_airway),
                          ("cc_lung_b", cc_lung_b), ("cc_airway_b", cc_airway_b)):
            rel = f"volumes/{key}_{i:04d}.mvol"
            write_mvol(grid, out / rel)
            paths[key] = rel
        rows.append({"id": str(i), **paths, "alr_gt": _fmt(pair.alr_gt), "stratum": str(stratum)})

    manifest = out / "rescans.csv"
    _write_csv(manifest, RESCAN_COLUMNS, rows)
    return manifest


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def load_manifest(path) -> list[dict]:
    """Read a manifest; path columns are resolved relative to the manifest."""
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key, val in row.items():
            if key.startswith(("fl_", "cc_")):
                row[key] = str(path.parent / val)
        row["alr_gt"] = float(row["alr_gt"])
        row["id"] = int(row["id"])
        row["stratum"] = int(row["stratum"])
    return rows
