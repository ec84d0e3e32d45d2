"""Tests for phantom generation: analytic oracles, invariants, dataset I/O."""

import math

import numpy as np
import pytest
from scipy import ndimage

from alrkit.phantom import (
    DEFAULT_SLICE_FACTOR,
    PhantomSpec,
    _sample_spec,
    build_tree,
    cardiac_crop,
    gen_dataset,
    gen_phantom,
    gen_rescan_set,
    load_manifest,
    split_counts,
    voxelize_tree,
)
from alrkit.volgrid import VoxelGrid, read_mvol, volume_mm3

# Oracle: depth-5 binary tree, trachea radius 5 mm, taper 0.8, no jitter.
# Diameters by generation: 10, 8, 6.4, 5.12, 4.096 mm with 1, 2, 4, 8, 16
# branches per generation.  First 19 in breadth-first order cover all of
# generations 0-3 plus four generation-4 branches:
#   10 + 2*8 + 4*6.4 + 8*5.12 + 4*4.096 = 108.944
ORACLE_MEAN19_MM = 108.944 / 19.0


def test_taper_diameter_sequence_oracle():
    spec = PhantomSpec(seed=0, trachea_radius_mm=5.0, taper=0.8, tree_depth=5, jitter=0.0)
    pair = gen_phantom(spec)
    diams = [d for _, d, _ in pair.branch_table]
    assert len(diams) == 31
    gens = [g for _, _, g in pair.branch_table]
    assert gens == sorted(gens)  # breadth-first ordering
    assert np.bincount(gens).tolist() == [1, 2, 4, 8, 16]
    assert np.mean(diams[:19]) == pytest.approx(ORACLE_MEAN19_MM, rel=1e-12)
    assert pair.alr_gt == pytest.approx(
        ORACLE_MEAN19_MM / volume_mm3(pair.fl_lung) ** (1 / 3), rel=1e-12)


def test_tree_geometry_is_connected():
    spec = PhantomSpec(seed=3, jitter=0.2)
    rng = np.random.default_rng(0)
    branches = build_tree(spec, np.array([0.0, 0.0, 30.0]), 12.0, rng)
    for br in branches[1:]:
        np.testing.assert_allclose(br.p0, branches[br.parent].p1)
        assert br.gen == branches[br.parent].gen + 1
        assert br.radius_mm < branches[br.parent].radius_mm


def test_ellipsoid_pair_volume_oracle():
    # Two tangent ellipsoids, semi-axes (60, 40, 80) mm, at 1 mm voxels.
    spec = PhantomSpec(seed=1, lung_semi_axes_mm=(60.0, 40.0, 80.0), jitter=0.0)
    pair = gen_phantom(spec, in_plane_mm=1.0, slice_mm=1.0)
    analytic = 2.0 * (4.0 / 3.0) * math.pi * 60.0 * 40.0 * 80.0
    assert volume_mm3(pair.fl_lung) == pytest.approx(analytic, rel=0.02)


def test_gen_phantom_deterministic():
    spec = PhantomSpec(seed=42, jitter=0.1)
    a = gen_phantom(spec)
    b = gen_phantom(spec)
    assert np.array_equal(a.fl_airway.data, b.fl_airway.data)
    assert np.array_equal(a.cc_lung.data, b.cc_lung.data)
    assert a.alr_gt == b.alr_gt
    c = gen_phantom(PhantomSpec(seed=43, jitter=0.1))
    assert not np.array_equal(a.fl_airway.data, c.fl_airway.data)


def test_jitter_perturbs_but_preserves_scale():
    base = gen_phantom(PhantomSpec(seed=7, jitter=0.0))
    jit = gen_phantom(PhantomSpec(seed=7, jitter=0.2))
    d0 = np.array([d for _, d, _ in base.branch_table])
    d1 = np.array([d for _, d, _ in jit.branch_table])
    assert not np.array_equal(d0, d1)
    assert np.all(np.abs(d1 - d0) / d0 < 0.75)


def test_airway_contained_and_connected():
    for i in range(4):
        spec, rng = _sample_spec(master_seed=11, idx=i, stratum=i % 4, jitter=0.1)
        pair = gen_phantom(spec, pair_id=i)
        air, lung = pair.fl_airway.data, pair.fl_lung.data
        assert np.array_equal(air & lung, air)  # airway inside lung mask
        n_cc = ndimage.label(air, structure=np.ones((3, 3, 3)))[1]
        assert n_cc == 1
        assert 0.01 < pair.alr_gt < 0.3
        assert pair.cc_airway.occupied_count() > 0
        assert pair.cc_lung.occupied_count() < pair.fl_lung.occupied_count()


def test_stratum_sets_in_plane_spacing():
    spacings = set()
    for s in range(4):
        pair = gen_phantom(PhantomSpec(seed=5, stratum=s))
        sx, sy, sz = pair.fl_lung.spacing_mm
        assert sx == sy
        assert 0.547 <= sx <= 0.781
        assert sz == 0.5
        spacings.add(sx)
    assert len(spacings) == 4


def test_thin_tube_error_names_branch():
    spec = PhantomSpec(seed=2, trachea_radius_mm=0.3)
    with pytest.raises(ValueError, match="branch 0") as exc:
        gen_phantom(spec)
    assert "thinner than one voxel" in str(exc.value)


def test_degenerate_tube_error():
    class Stub:
        id, gen, radius_mm, length_mm = 4, 1, 2.0, 0.0
        p0 = np.zeros(3)
        p1 = np.zeros(3)

    with pytest.raises(ValueError, match="branch 4"):
        voxelize_tree([Stub()], (8, 8, 8), (1.0, 1.0, 1.0))


def test_cardiac_crop_oracle():
    rng = np.random.default_rng(0)
    data = (rng.random((12, 10, 90)) < 0.4).astype(np.uint8)
    grid = VoxelGrid(data=data, spacing_mm=(0.625, 0.625, 0.5))
    cc = cardiac_crop(grid, z_fraction=2.0 / 3.0, slice_factor=5)
    # floor(90 * 2/3) = 60 slices kept, then every 5th: 12 slices at 2.5 mm
    assert cc.dims == (12, 10, 12)
    assert cc.spacing_mm == (0.625, 0.625, 2.5)
    np.testing.assert_array_equal(cc.data, data[:, :, :60:5])
    assert cc.occupied_count() <= grid.occupied_count()


def test_cardiac_crop_identity_factor():
    grid = VoxelGrid(data=np.ones((3, 3, 8), dtype=np.uint8), spacing_mm=(1.0, 1.0, 1.0))
    cc = cardiac_crop(grid, z_fraction=1.0, slice_factor=1)
    assert cc == grid


def test_cardiac_crop_errors():
    grid = VoxelGrid(data=np.ones((3, 3, 8), dtype=np.uint8), spacing_mm=(1.0, 1.0, 1.0))
    with pytest.raises(ValueError, match="z_fraction"):
        cardiac_crop(grid, z_fraction=0.0, slice_factor=5)
    with pytest.raises(ValueError, match="slice_factor"):
        cardiac_crop(grid, z_fraction=0.5, slice_factor=0)
    with pytest.raises(ValueError, match="at least 2"):
        cardiac_crop(grid, z_fraction=0.25, slice_factor=5)


def test_default_crop_slice_regime():
    pair = gen_phantom(PhantomSpec(seed=9))
    assert 2.4 <= pair.cc_lung.spacing_mm[2] <= 3.0
    assert pair.cc_lung.spacing_mm[2] == DEFAULT_SLICE_FACTOR * pair.fl_lung.spacing_mm[2]


def test_split_counts_rule():
    assert split_counts(100) == (64, 16, 20)
    assert split_counts(25) == (16, 4, 5)
    for m in range(1, 60):
        tr, va, te = split_counts(m)
        assert tr + va + te == m
        assert tr >= va >= 0 and te >= 0


def test_gen_dataset_manifest(tmp_path):
    manifest = gen_dataset(n=10, master_seed=77, strata_count=1, out_dir=tmp_path / "a")
    rows = load_manifest(manifest)
    assert len(rows) == 10
    splits = [r["split"] for r in rows]
    assert splits.count("train") == 7 and splits.count("val") == 1 and splits.count("test") == 2
    for row in rows:
        assert 0.01 < row["alr_gt"] < 0.3
        grid = read_mvol(row["cc_airway"])
        assert grid.occupied_count() > 0
        assert read_mvol(row["fl_lung"]).dims[2] > grid.dims[2]

    manifest_b = gen_dataset(n=10, master_seed=77, strata_count=1, out_dir=tmp_path / "b")
    assert manifest.read_bytes() == manifest_b.read_bytes()
    assert (tmp_path / "a/volumes/fl_airway_0003.mvol").read_bytes() == \
        (tmp_path / "b/volumes/fl_airway_0003.mvol").read_bytes()


def test_gen_dataset_stratified(tmp_path):
    manifest = gen_dataset(n=8, master_seed=5, strata_count=4, out_dir=tmp_path)
    rows = load_manifest(manifest)
    counts = np.bincount([r["stratum"] for r in rows], minlength=4)
    assert counts.tolist() == [2, 2, 2, 2]
    header = manifest.read_text().splitlines()[0]
    assert header == "id,fl_lung,fl_airway,cc_lung,cc_airway,alr_gt,stratum,split"


def test_gen_rescan_set(tmp_path):
    manifest = gen_rescan_set(n=4, master_seed=3, strata_count=2, out_dir=tmp_path)
    assert manifest.name == "rescans.csv"
    rows = load_manifest(manifest)
    assert len(rows) == 4
    for row in rows:
        a = read_mvol(row["cc_lung_a"])
        b = read_mvol(row["cc_lung_b"])
        assert a.spacing_mm[2] == b.spacing_mm[2] == 2.5
        # independent z-fraction draws usually change the slice count
        assert a.occupied_count() > 0 and b.occupied_count() > 0
    assert any(read_mvol(r["cc_lung_a"]).dims != read_mvol(r["cc_lung_b"]).dims for r in rows)


def test_spec_validation():
    with pytest.raises(ValueError):
        PhantomSpec(seed=0, taper=1.0)
    with pytest.raises(ValueError):
        PhantomSpec(seed=0, tree_depth=2)
    with pytest.raises(ValueError):
        PhantomSpec(seed=0, lung_semi_axes_mm=(0.0, 8.0, 15.0))
    with pytest.raises(ValueError, match="tree_depth 3"):
        gen_phantom(PhantomSpec(seed=0, tree_depth=3))
