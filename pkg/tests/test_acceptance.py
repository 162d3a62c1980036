"""Acceptance checks, one test per criterion.

Run through pytest (the lines appear in the terminal summary) or directly with
``python tests/test_acceptance.py``.
"""
import json
import math
import time

import numpy as np
import pytest

import oracles
from acceptance_log import report
from vesselscale.branches import label_branches, reconstruct_branches
from vesselscale.cli import run_cli
from vesselscale.io import save_volume
from vesselscale.losses import (
    contrastive_loss,
    contrastive_terms,
    finite_difference_check,
    soft_dice_loss,
    total_loss,
    weighted_cross_entropy,
)
from vesselscale.metrics import cl_dice, dice, evaluate, hausdorff, jaccard
from vesselscale.phantom import cylinder, generate_tree, random_tree, y_tree
from vesselscale.pipeline import decompose
from vesselscale.skeleton import extract_surface, skeletonize
from vesselscale.volume import Volume, connected_components

pytestmark = pytest.mark.slow


def _tree(seed, dims, depth=3):
    return generate_tree(random_tree(np.random.default_rng(seed), dims=dims, depth=depth))[0]


def test_01_partition_identity():
    worst, bad = 0.0, []
    for seed in range(20):
        mask = _tree(1000 + seed, (128, 128, 128))
        t0 = time.perf_counter()
        masks = decompose(mask).scales.masks
        worst = max(worst, time.perf_counter() - t0)
        stack = np.stack([m.data.astype(np.int64) for m in masks])
        if len(masks) != 3 or stack.sum(0).max() > 1 or not np.array_equal(stack.sum(0), mask.data):
            bad.append(seed)
    ok = not bad and worst < 10.0
    assert report(1, "partition identity on 20 random trees", ok, f"failures {bad}, slowest {worst:.2f} s")


def test_02_radius_recovery():
    errors = {}
    for r in (2, 3, 5, 8):
        mask, (cx, cy) = cylinder(r, 40)
        dec = decompose(mask, m=8)
        surf = extract_surface(mask)
        oracle = oracles.median(list(oracles.local_radius(dec.skeleton.voxels, surf.voxels, mask.spacing, 8)))
        assert len(dec.table) == 1 and dec.table.radius_mm[0] == oracle
        errors[r] = float(dec.table.radius_mm[0] - r)
    ok = all(abs(e) <= 0.8 for e in errors.values())
    detail = ", ".join(f"r={r}: {e:+.3f}" for r, e in errors.items())
    assert report(2, "cylinder radius recovery within 0.8 voxel", ok, detail)


def test_03_y_tree_scale_separation():
    mask, _, _ = generate_tree(y_tree(parent_radius=6, child_radius=2))
    dec = decompose(mask)
    scales = dec.scales.branch_scales.tolist()
    parent = int(np.argmax(dec.table.radius_mm))
    children = [i for i in range(len(scales)) if i != parent]
    ok = len(dec.table) == 3 and scales[parent] == 3 and all(scales[i] == 1 for i in children)
    assert report(3, "Y-tree scale separation", ok,
                  f"radii {np.round(dec.table.radius_mm, 3).tolist()}, scales {scales}")


def test_04_metric_identities():
    mask = _tree(7, (48, 48, 48))
    r = evaluate(mask, mask)
    identical = (r.dsc, r.jacc, r.cldsc, r.hd_mm) == (1.0, 1.0, 1.0, 0.0)
    rng = np.random.default_rng(4)
    worst_identity, hd_mismatch, hd_checked = 0.0, 0, 0
    for k in range(100):
        if k % 2:
            dims = tuple(int(n) for n in rng.integers(4, 24, 3))
            sp = tuple(float(s) for s in rng.uniform(0.5, 2.0, 3))
            a = Volume(rng.random(dims) < rng.uniform(0.01, 0.6), sp)
            b = Volume(rng.random(dims) < rng.uniform(0.01, 0.6), sp)
        else:
            a = _tree(2000 + k, (40, 40, 40), depth=2)
            b = _tree(3000 + k, (40, 40, 40), depth=2)
        d = dice(a, b)
        worst_identity = max(worst_identity, abs(jaccard(a, b) - d / (2 - d)))
        if a.count() <= 20000 and b.count() <= 20000:
            hd_checked += 1
            hd_mismatch += hausdorff(a, b) != oracles.hausdorff(a.data, b.data, a.spacing)
    ok = identical and worst_identity <= 1e-12 and hd_mismatch == 0 and hd_checked > 0
    assert report(4, "metric identities and exact Hausdorff", ok,
                  f"max |jacc - dsc/(2-dsc)| {worst_identity:.1e}, HD mismatches {hd_mismatch}/{hd_checked}")


def test_05_connectivity_sensitivity():
    gt, _ = cylinder(1, 30)
    a = gt.data.copy()
    z = np.flatnonzero(a.any(axis=(0, 1)))
    mid = z[len(z) // 2]
    a[:, :, mid - 1:mid + 2] = 0
    pred = Volume(a, gt.spacing)
    c, d = cl_dice(gt, pred), dice(gt, pred)
    assert report(5, "mid-gap lowers clDSC below DSC", c < d, f"clDSC {c:.4f}, DSC {d:.4f}")


def test_06_reconstruction_exactness():
    mismatched, sizes = [], []
    for seed in range(25):
        sp = (1.0, 1.0, 1.0) if seed % 3 else (0.8, 0.8, 1.5)
        spec = random_tree(np.random.default_rng(4000 + seed), dims=(96, 96, 96), depth=3,
                           root_radius=(6.0, 9.0), length=(20.0, 40.0))
        mask = Volume(generate_tree(spec)[0].data, sp)
        assert mask.count() <= 50000
        sizes.append(mask.count())
        ls = label_branches(skeletonize(mask))
        got = reconstruct_branches(mask, ls, sp).data
        if not np.array_equal(got, oracles.reconstruct(mask.data, ls.voxels, ls.labels, sp)):
            mismatched.append(seed)
    assert report(6, "reconstruction equals brute-force nearest skeleton voxel", not mismatched,
                  f"{25 - len(mismatched)}/25 exact, up to {max(sizes)} voxels")


def test_07_skeleton_topology():
    bad = []
    for seed in range(50):
        mask = _tree(5000 + seed, (48, 48, 48), depth=2)
        skel = skeletonize(mask).to_volume()
        n_mask = connected_components(mask, 26)[1]
        n_skel = connected_components(skel, 26)[1]
        if n_mask != n_skel or np.any(skel.data > mask.data):
            bad.append(seed)
    line = np.zeros((20, 3, 3), dtype=np.uint8)
    line[2:18, 1, 1] = 1
    fixed = np.array_equal(skeletonize(Volume(line)).to_array(), line)
    assert report(7, "skeleton topology, subset, line fixed point", not bad and fixed,
                  f"{50 - len(bad)}/50 phantoms preserved, line fixed: {fixed}")


def test_08_loss_kernels():
    v = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    closed = abs(contrastive_terms(v, [1, 1, 2], tau=1.0).pair_terms[(0, 1)] - math.log1p(math.exp(-1)))
    rng = np.random.default_rng(8)
    gt = rng.random((8, 8, 8)) < 0.3
    p = rng.uniform(0.05, 0.95, gt.shape)
    emb = rng.normal(size=(12, 16))
    lab = np.arange(12) % 3 + 1
    fd = {
        "dice": finite_difference_check(lambda x: soft_dice_loss(x, gt), p),
        "wce": finite_difference_check(lambda x: weighted_cross_entropy(x, gt), p),
        "contrastive": finite_difference_check(lambda x: contrastive_loss(x, lab), emb, step=1e-3, order=4),
    }
    total = abs(total_loss(1.0, (1.0, 1.0, 1.0), 1.0).total - 3.33)
    ok = closed <= 1e-9 and max(fd.values()) < 1e-5 and total <= 1e-12
    detail = f"closed form err {closed:.1e}, FD " + ", ".join(f"{k} {e:.1e}" for k, e in fd.items()) \
        + f", total err {total:.1e}"
    assert report(8, "loss kernels", ok, detail)


@pytest.fixture(scope="module")
def big_mask(tmp_path_factory):
    d = tmp_path_factory.mktemp("big")
    mask = generate_tree(random_tree(np.random.default_rng(9), dims=(256, 256, 128), depth=5,
                                     root_radius=(11.0, 13.0), length=(30.0, 60.0)))[0]
    save_volume(mask, d / "liver.nrrd")
    return d / "liver.nrrd", mask.count()


def test_09_throughput(big_mask, tmp_path):
    path, n = big_mask
    t0 = time.perf_counter()
    code = run_cli(["decompose", "--input", str(path), "--out-dir", str(tmp_path / "out")])
    elapsed = time.perf_counter() - t0
    assert report(9, "decompose of a 256x256x128 mask under 60 s", code == 0 and elapsed < 60,
                  f"{elapsed:.1f} s for {n} foreground voxels")


def test_10_determinism(big_mask, tmp_path):
    inputs = [str(big_mask[0])]
    for seed in (1, 2):
        p = tmp_path / f"t{seed}.nrrd"
        save_volume(_tree(seed, (64, 64, 64)), p)
        inputs.append(str(p))
    runs = []
    for k, jobs in enumerate(("1", "1", "3")):
        out = tmp_path / f"run{k}"
        assert run_cli(["decompose", "--input", *inputs, "--out-dir", str(out), "--jobs", jobs]) == 0
        runs.append({f.name: f.read_bytes() for f in sorted(out.iterdir()) if f.name != "manifest.json"})
        manifest = json.loads((out / "manifest.json").read_text())
        for vol in manifest["volumes"]:
            vol.pop("seconds")
        manifest.pop("seconds")
        runs[-1]["manifest.json"] = json.dumps(manifest).encode()
    ok = runs[0] == runs[1] == runs[2]
    assert report(10, "byte-identical outputs across runs and --jobs", ok, f"{len(runs[0])} files per run")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
