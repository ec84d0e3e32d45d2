"""Geometric proxy-ALR measurement chain.

Pipeline: thin a binary airway mask to a centerline skeleton, split the
skeleton into branches at junction voxels, estimate each branch's lumen
diameter from cross-sectional voxel counts along the middle two thirds
of its path, then form the proxy ratio mean-diameter / cbrt(lung volume)
over the largest branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from .volgrid import VoxelGrid, volume_mm3

TOP_BRANCHES = 25
MIN_PATH_VOXELS = 6

_FACES = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
_CUBE = [(x, y, z) for x in range(3) for y in range(3) for z in range(3)]
_CENTER = _CUBE.index((1, 1, 1))
_NEIGHBOR_CELLS = [i for i in range(27) if i != _CENTER]

_ADJ26 = [[j for j in range(27) if j != i
           and max(abs(a - b) for a, b in zip(_CUBE[i], _CUBE[j])) == 1]
          for i in range(27)]
_ADJ6 = [[j for j in range(27)
          if sum(abs(a - b) for a, b in zip(_CUBE[i], _CUBE[j])) == 1]
         for i in range(27)]

_OFFSETS = np.array([(x - 1, y - 1, z - 1) for x, y, z in _CUBE
                     if (x, y, z) != (1, 1, 1)], dtype=np.int64)


class MeasurementError(ValueError):
    """Raised when a branch cannot be measured (excluded, not fatal)."""


@dataclass(frozen=True)
class Skeleton:
    """Centerline voxels of a binary mask, same array shape as the source."""
    mask: np.ndarray

    @property
    def voxels(self) -> np.ndarray:
        return np.argwhere(self.mask)

    def adjacency(self) -> list[tuple[int, int]]:
        """Index pairs (into voxels) of 26-adjacent skeleton voxels, i < j."""
        vox = self.voxels
        index = {tuple(v): i for i, v in enumerate(vox)}
        pairs = []
        for i, v in enumerate(vox):
            for off in _OFFSETS:
                j = index.get(tuple(v + off))
                if j is not None and i < j:
                    pairs.append((i, j))
        return pairs


@dataclass(frozen=True)
class Branch:
    id: int
    path: np.ndarray  # (n, 3) ordered voxel coordinates
    end_kinds: tuple[str, str]  # "junction" | "terminal" per end


@dataclass(frozen=True)
class BranchGraph:
    branches: list
    junctions: np.ndarray  # (m, 3) voxels with >= 3 skeleton neighbors


@dataclass(frozen=True)
class BranchMeasure:
    branch_id: int
    mean_diameter_mm: float
    length_mm: float
    n_sections: int


def _count_components(cells: frozenset, adj) -> int:
    seen = set()
    count = 0
    for start in cells:
        if start in seen:
            continue
        count += 1
        stack = [start]
        seen.add(start)
        while stack:
            for nb in adj[stack.pop()]:
                if nb in cells and nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
    return count


@lru_cache(maxsize=1 << 22)
def _deletable(pattern: int) -> bool:
    """Can a foreground voxel with this 26-neighbor pattern be thinned away?

    Deletion must change neither the 26-connected foreground component
    count nor the 6-connected background component count within the
    3x3x3 neighborhood, and must not consume a curve endpoint (fewer
    than two foreground neighbors).
    """
    fg_nb = [c for k, c in enumerate(_NEIGHBOR_CELLS) if pattern >> k & 1]
    if len(fg_nb) < 2:
        return False
    fg_before = frozenset(fg_nb) | {_CENTER}
    fg_after = frozenset(fg_nb)
    if _count_components(fg_before, _ADJ26) != _count_components(fg_after, _ADJ26):
        return False
    bg_after = frozenset(i for i in range(27) if i not in fg_after)
    bg_before = bg_after - {_CENTER}
    return _count_components(bg_before, _ADJ6) == _count_components(bg_after, _ADJ6)


def skeletonize(grid: VoxelGrid) -> Skeleton:
    """Thin a binary mask to a centerline by directional simple-point removal.

    Sweeps the six face directions per iteration until a fixed point.
    Within a sweep, border voxels are re-tested against the live volume,
    so every deletion is individually topology-safe.
    """
    vol = np.pad(grid.data, 1)
    weights = np.zeros((3, 3, 3), dtype=np.int64)
    for k, (dx, dy, dz) in enumerate(_OFFSETS):
        weights[dx + 1, dy + 1, dz + 1] = 1 << k
    wflat = weights.ravel()

    changed = True
    while changed:
        changed = False
        for face in _FACES:
            border = (vol == 1) & (np.roll(vol, tuple(-d for d in face), (0, 1, 2)) == 0)
            for x, y, z in np.argwhere(border):
                cube = vol[x - 1:x + 2, y - 1:y + 2, z - 1:z + 2]
                pattern = int(cube.ravel().dot(wflat))
                if _deletable(pattern):
                    vol[x, y, z] = 0
                    changed = True
    return Skeleton(mask=np.ascontiguousarray(vol[1:-1, 1:-1, 1:-1]))


def extract_branches(skel: Skeleton) -> BranchGraph:
    """Decompose a skeleton into junction voxels and maximal branch paths.

    Junctions are voxels with >= 3 skeleton neighbors; branches are the
    connected chains of the remaining voxels, ordered end to end.
    Deterministic: branches sort lexicographically by start coordinate.
    """
    mask = skel.mask
    vox = [tuple(v) for v in np.argwhere(mask)]
    vox_set = set(vox)
    neigh = {v: [tuple(np.add(v, off)) for off in _OFFSETS
                 if tuple(np.add(v, off)) in vox_set] for v in vox}
    degree = {v: len(neigh[v]) for v in vox}
    is_junction = {v: degree[v] >= 3 for v in vox}

    paths = []
    seen = set()
    for v in vox:
        if is_junction[v] or v in seen:
            continue
        chain_nb = [u for u in neigh[v] if not is_junction[u]]
        if len(chain_nb) >= 2:
            continue  # interior chain voxel; reached by a walk from an end
        paths.append(_walk_chain(v, neigh, is_junction, seen))
    # pure cycles have no chain end; start them at their smallest voxel
    for v in vox:
        if not is_junction[v] and v not in seen:
            paths.append(_walk_chain(v, neigh, is_junction, seen))

    paths = [p if p[0] <= p[-1] else p[::-1] for p in paths]
    paths.sort(key=lambda p: p[0])
    branches = []
    for i, path in enumerate(paths):
        kinds = tuple(
            "junction" if any(is_junction[u] for u in neigh[end]) else "terminal"
            for end in (path[0], path[-1]))
        branches.append(Branch(id=i, path=np.array(path, dtype=np.int64), end_kinds=kinds))
    junctions = np.array(sorted(v for v in vox if is_junction[v]), dtype=np.int64)
    return BranchGraph(branches=branches, junctions=junctions.reshape(-1, 3))


def _walk_chain(start, neigh, is_junction, seen) -> list:
    path = [start]
    seen.add(start)
    cur = start
    while True:
        nxt = [u for u in sorted(neigh[cur]) if not is_junction[u] and u not in seen]
        if not nxt:
            return path
        cur = nxt[0]
        path.append(cur)
        seen.add(cur)


def branch_diameter(grid: VoxelGrid, branch: Branch, edt: np.ndarray | None = None,
                    centers_mm: np.ndarray | None = None) -> BranchMeasure:
    """Mean lumen diameter over cross-sections along the middle 2/3 of a branch.

    Each section counts mask voxel centers lying within half the minimum
    spacing of the plane perpendicular to the local tangent and within
    4x the local interior distance (screens out voxels of other tubes);
    the count converts to an area via the voxel footprint in the plane's
    dominant orientation, then to an equivalent circular diameter.
    """
    n = len(branch.path)
    if n < MIN_PATH_VOXELS:
        raise MeasurementError(
            f"branch {branch.id}: path of {n} voxels is too short to measure")
    spacing = np.asarray(grid.spacing_mm, dtype=np.float64)
    if edt is None:
        edt = ndimage.distance_transform_edt(grid.data, sampling=spacing)
    if centers_mm is None:
        centers_mm = (np.argwhere(grid.data) + 0.5) * spacing

    pos = (branch.path + 0.5) * spacing
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    length_mm = float(seg.sum())

    half_slab = 0.5 * float(spacing.min())
    voxel_volume = float(spacing.prod())
    trim = n // 6
    diams = []
    for i in range(trim, n - trim):
        t = pos[min(i + 2, n - 1)] - pos[max(i - 2, 0)]
        t /= np.linalg.norm(t)
        delta = centers_mm - pos[i]
        along = delta @ t
        dist_sq = np.einsum("ij,ij->i", delta, delta)
        cap = 4.0 * float(edt[tuple(branch.path[i])])
        count = int(np.count_nonzero(
            (np.abs(along) <= half_slab) & (dist_sq <= cap * cap)))
        area = count * voxel_volume / spacing[int(np.argmax(np.abs(t)))]
        diams.append(2.0 * math.sqrt(area / math.pi))
    return BranchMeasure(branch_id=branch.id, mean_diameter_mm=float(np.mean(diams)),
                         length_mm=length_mm, n_sections=len(diams))


def measure_branches(airway: VoxelGrid) -> list[BranchMeasure]:
    """Skeletonize, split into branches, and measure every measurable branch."""
    graph = extract_branches(skeletonize(airway))
    spacing = np.asarray(airway.spacing_mm, dtype=np.float64)
    edt = ndimage.distance_transform_edt(airway.data, sampling=spacing)
    centers = (np.argwhere(airway.data) + 0.5) * spacing
    measures = []
    for br in graph.branches:
        try:
            measures.append(branch_diameter(airway, br, edt=edt, centers_mm=centers))
        except MeasurementError:
            continue
    return measures


@dataclass(frozen=True)
class ProxyReport:
    proxy_alr: float
    n_branches_used: int
    mean_diam_mm: float
    lung_vol_mm3: float


def proxy_report(lung: VoxelGrid, airway: VoxelGrid) -> ProxyReport:
    """Proxy ALR detail: mean diameter of the largest branches over cbrt(volume)."""
    measures = measure_branches(airway)
    if not measures:
        raise MeasurementError("no measurable branch in airway mask")
    measures.sort(key=lambda m: (-m.mean_diameter_mm, m.branch_id))
    top = measures[:TOP_BRANCHES]
    mean_diam = float(np.mean([m.mean_diameter_mm for m in top]))
    vol = volume_mm3(lung)
    return ProxyReport(proxy_alr=mean_diam / vol ** (1.0 / 3.0),
                       n_branches_used=len(top), mean_diam_mm=mean_diam,
                       lung_vol_mm3=vol)


def proxy_alr(lung: VoxelGrid, airway: VoxelGrid) -> float:
    """Mean diameter of the up-to-25 largest branches / cbrt(lung volume)."""
    return proxy_report(lung, airway).proxy_alr
