"""Acceptance gate: one test per release criterion, at its stated tolerance.

Each test prints a PASS line once its criterion holds (run with -s to see
them); a failing criterion fails its test. Timed criteria assert their
runtime budget too.
"""

import json
import time
import warnings

import numpy as np
import pytest

from segrefine.attention_fusion import AttentionMap, ScoreMap, cross_fuse, run_caf
from segrefine.config import PipelineConfig
from segrefine.diffusion import DiffusionParams, diffuse
from segrefine.metrics import ConfusionMatrix, accumulate, merge, miou
from segrefine.pipeline import run_pipeline
from segrefine.superpixels import segment_felzenszwalb
from segrefine.synthetic import build_synthetic_bundle
from segrefine.tensorio import write_bundle, write_tensor
from segrefine.transition import build_transition
from segrefine.tv_fusion import (
    EdgeWeightField,
    ProbabilityField,
    SolverParams,
    solve_pdhg,
)

from bundles import toy_bundle
from oracles import (
    caf_oracle,
    diffusion_power_oracle,
    fusion_energy_oracle,
    kl_div,
    projected_subgradient_batch,
    transition_oracle,
)


def _report(name):
    print(f"\nACCEPTANCE PASS: {name}")


def _unit_rows(rng, p, d):
    f = rng.normal(size=(p, d))
    return f / np.linalg.norm(f, axis=1, keepdims=True)


def test_diffusion_oracle_equivalence():
    """50 random instances match the dense power recursion to 1e-9 and the
    length-200 iterate sits within 1e-6 of the linear-solve fixed point."""
    start = time.time()
    rng = np.random.default_rng(2024)
    for trial in range(50):
        p = int(rng.integers(4, 65))
        k_classes = int(rng.integers(1, 6))
        neighbors = int(rng.integers(1, min(p - 1, 8) + 1))
        t = build_transition(_unit_rows(rng, p, 6), neighbors, 0.07, (1, p))
        s0 = ScoreMap(rng.normal(size=(p, k_classes)), (1, p))
        out = diffuse(t, s0, DiffusionParams(alpha=0.9, steps=40))
        expected = diffusion_power_oracle(t.to_dense(), s0.values, 0.9, 40)
        assert np.abs(out.values - expected).max() < 1e-9, f"trial {trial}"
        if trial % 10 == 0:
            long = diffuse(t, s0, DiffusionParams(alpha=0.9, steps=200))
            star = 0.1 * np.linalg.solve(np.eye(p) - 0.9 * t.to_dense(), s0.values)
            assert np.abs(long.values - star).max() < 1e-6, f"trial {trial}"
    elapsed = time.time() - start
    assert elapsed < 5.0, f"diffusion oracle suite took {elapsed:.2f}s"
    _report(f"diffusion oracle equivalence (50 instances, {elapsed:.2f}s)")


def test_pdhg_optimality():
    """Solver never loses to a projected-subgradient baseline by more than
    1e-4, matches a brute-force grid search on 2x1 instances within 1e-3,
    and returns the target exactly when the regularizer is off."""
    start = time.time()
    rng = np.random.default_rng(77)

    # 100 random 4x4, K=3 instances vs the first-order baseline
    batch = 100
    g = rng.dirichlet(np.ones(3), size=(batch, 4, 4))
    g = np.maximum(g, 1e-8)
    g /= g.sum(axis=3, keepdims=True)
    wh = rng.choice([0.1, 1.0], size=(batch, 4, 3))
    wv = rng.choice([0.1, 1.0], size=(batch, 3, 4))
    lam_total, beta = 1.2, 0.10
    oracle_q, _ = projected_subgradient_batch(g, lam_total, wh, wv, beta,
                                              iters=800, step0=0.1)
    params = SolverParams(beta=beta, max_iters=500, rel_tol=1e-9)
    for i in range(batch):
        weights = EdgeWeightField(horizontal=wh[i].astype(np.float32),
                                  vertical=wv[i].astype(np.float32))
        out = solve_pdhg(ProbabilityField(values=g[i]), lam_total, weights, params)
        e_solver = fusion_energy_oracle(out.values, g[i], lam_total,
                                        wh[i], wv[i], beta)
        e_oracle = fusion_energy_oracle(oracle_q[i], g[i], lam_total,
                                        wh[i], wv[i], beta)
        assert e_solver <= e_oracle + 1e-4, f"instance {i}"

    # 2x1 strong-coupling instances vs exhaustive search on the common q
    grid = np.linspace(1e-5, 1 - 1e-5, 100001)
    cand = np.stack([grid, 1 - grid], axis=1)
    for seed in range(5):
        r2 = np.random.default_rng(seed)
        top = np.maximum(r2.dirichlet(np.ones(2)), 1e-6)
        bottom = np.maximum(r2.dirichlet(np.ones(2)), 1e-6)
        g2 = np.stack([top / top.sum(), bottom / bottom.sum()])[:, None, :]
        field = ProbabilityField(values=g2)
        weights = EdgeWeightField(horizontal=np.zeros((2, 0), np.float32),
                                  vertical=np.ones((1, 1), np.float32))
        out = solve_pdhg(field, 1.0, weights,
                         SolverParams(beta=5.0, max_iters=2000, rel_tol=1e-12))
        data = (cand * np.log(cand / g2[0, 0])).sum(axis=1) \
            + (cand * np.log(cand / g2[1, 0])).sum(axis=1)
        best = cand[np.argmin(data)]
        assert np.abs(out.values[0, 0] - best).max() < 1e-3, f"seed {seed}"
        assert np.abs(out.values[1, 0] - best).max() < 1e-3, f"seed {seed}"

    # beta = 0 returns the target
    g0 = ProbabilityField(values=np.maximum(
        rng.dirichlet(np.ones(4), size=(5, 6)), 1e-8))
    g0 = ProbabilityField(values=g0.values / g0.values.sum(axis=2, keepdims=True))
    out0 = solve_pdhg(g0, 1.0,
                      EdgeWeightField(horizontal=np.ones((5, 5), np.float32),
                                      vertical=np.ones((4, 6), np.float32)),
                      SolverParams(beta=0.0, max_iters=50))
    assert np.abs(out0.values - g0.values).max() < 1e-6

    elapsed = time.time() - start
    assert elapsed < 60.0, f"pdhg suite took {elapsed:.2f}s"
    _report(f"pdhg optimality (100 + 5 instances, {elapsed:.2f}s)")


def test_kl_collapse_identity():
    """1000 random draws satisfy the two-term-to-one-term KL identity
    within 1e-9 (constant fitted from a single probe)."""
    from segrefine.tv_fusion import collapse_kl_targets

    rng = np.random.default_rng(11)
    for trial in range(1000):
        k = int(rng.integers(2, 6))
        a = np.maximum(rng.dirichlet(np.ones(k)), 1e-7)
        b = np.maximum(rng.dirichlet(np.ones(k)), 1e-7)
        a, b = a / a.sum(), b / b.sum()
        lc, ld = rng.uniform(0.05, 4.0, size=2)
        g, total = collapse_kl_targets(
            ProbabilityField(values=a[None, None]),
            ProbabilityField(values=b[None, None]), lc, ld)
        gv = g.values[0, 0]
        probe = rng.dirichlet(np.ones(k))
        const = lc * kl_div(probe, a) + ld * kl_div(probe, b) \
            - total * kl_div(probe, gv)
        q = rng.dirichlet(np.ones(k))
        lhs = lc * kl_div(q, a) + ld * kl_div(q, b)
        rhs = total * kl_div(q, gv) + const
        assert abs(lhs - rhs) < 1e-9, f"trial {trial}"
    _report("kl-collapse identity (1000 draws)")


def test_transition_matrix_contract():
    """100 random feature sets: rows sum to 1 +- 1e-6, nnz = min(k, P-1),
    zero diagonal, dense brute-force oracle match within 1e-6."""
    rng = np.random.default_rng(5)
    for trial in range(100):
        p = int(rng.integers(3, 24))
        k = int(rng.integers(1, 8))
        tau = float(rng.choice([0.07, 7.0]))
        f = _unit_rows(rng, p, 5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            t = build_transition(f, k, tau, (1, p))
        sums = t.values.astype(np.float64).sum(axis=1)
        assert np.abs(sums - 1.0).max() < 1e-6, f"trial {trial}"
        assert t.neighbors_per_row == min(k, p - 1), f"trial {trial}"
        dense = t.to_dense()
        assert (np.diag(dense) == 0).all(), f"trial {trial}"
        assert np.abs(dense - transition_oracle(f, k, tau)).max() < 1e-6, \
            f"trial {trial}"
    _report("transition-matrix contract (100 feature sets, tau in {0.07, 7})")


def test_felzenszwalb_properties():
    """Uniform image collapses to one segment; a two-tone image splits on
    the exact seam (boundary recall >= 0.99); segments stay connected and
    respect min_size; five runs agree bit for bit."""
    uniform = np.full((16, 16, 3), 77, dtype=np.uint8)
    assert segment_felzenszwalb(uniform, 100, 1, 0).num_segments == 1

    img = np.zeros((16, 16, 3), dtype=np.uint8)
    img[:, 8:] = 255
    sp = segment_felzenszwalb(img, 10, 1, 0)
    assert sp.num_segments == 2
    truth_boundary = {(i, 7) for i in range(16)}  # horizontal pairs (i,7)-(i,8)
    found = {(i, j) for i in range(16) for j in range(15)
             if sp.labels[i, j] != sp.labels[i, j + 1]}
    vertical_found = {(i, j) for i in range(15) for j in range(16)
                      if sp.labels[i, j] != sp.labels[i + 1, j]}
    recall = len(truth_boundary & found) / len(truth_boundary)
    assert recall >= 0.99
    assert not vertical_found

    rng = np.random.default_rng(9)
    image = rng.integers(0, 256, size=(18, 15, 3), dtype=np.uint8)
    min_size = 7
    runs = [segment_felzenszwalb(image, 60, min_size, 0.8) for _ in range(5)]
    for sp2 in runs[1:]:
        np.testing.assert_array_equal(sp2.labels, runs[0].labels)
    sizes = np.bincount(runs[0].labels.ravel())
    assert (sizes >= min_size).all()
    from test_superpixels import assert_4connected
    assert_4connected(runs[0].labels)
    _report("felzenszwalb properties (seam recall 1.0, deterministic)")


def test_caf_oracle_and_properties():
    """Toy bundle matches a straight-line transcription of the fusion
    formulas within 1e-5; linearity and branch symmetry hold on 100
    random instances."""
    bundle = toy_bundle(seed=101, grid=(2, 2), num_classes=2, layers=2, heads=1)
    fused = run_caf(bundle, lambda1=1.0)
    exp_clip, exp_dino = caf_oracle(bundle, 1.0)
    assert np.abs(fused.s_clip.values - exp_clip).max() < 1e-5
    assert np.abs(fused.s_dino.values - exp_dino).max() < 1e-5

    rng = np.random.default_rng(55)
    for trial in range(100):
        p, k = int(rng.integers(2, 9)), int(rng.integers(1, 5))
        grid = (1, p)
        s_last = rng.normal(size=(p, k))
        layers = [rng.normal(size=(p, k)) for _ in range(int(rng.integers(1, 4)))]
        a_self = AttentionMap(rng.uniform(size=(p, p)), grid)
        a_other = AttentionMap(rng.uniform(size=(p, p)), grid)
        once = cross_fuse(ScoreMap(s_last, grid),
                          [ScoreMap(l, grid) for l in layers], a_self, a_other, 1.0)
        twice = cross_fuse(ScoreMap(2 * s_last, grid),
                           [ScoreMap(2 * l, grid) for l in layers],
                           a_self, a_other, 1.0)
        assert np.array_equal(twice.values, 2 * once.values), f"trial {trial}"
        swapped = cross_fuse(ScoreMap(s_last, grid),
                             [ScoreMap(l, grid) for l in layers],
                             a_other, a_self, 1.0)
        assert np.array_equal(once.values, swapped.values), f"trial {trial}"
    _report("caf oracle + linearity/symmetry (100 instances)")


def test_miou_criteria():
    """Perfect prediction scores 1.0, the hand-counted 2x2 case gives 7/12,
    and random tile splits accumulate to the whole-image matrix."""
    gt = np.arange(16).reshape(4, 4) % 3
    cm = accumulate(ConfusionMatrix(num_classes=3), gt, gt)
    assert miou(cm)[1] == 1.0

    pred = np.array([[0, 1], [1, 1]])
    truth = np.array([[0, 0], [1, 1]])
    cm2 = accumulate(ConfusionMatrix(num_classes=2), pred, truth)
    assert miou(cm2)[1] == pytest.approx(7 / 12)

    rng = np.random.default_rng(31)
    for _ in range(20):
        h, w, c = int(rng.integers(2, 12)), int(rng.integers(2, 12)), 4
        p = rng.integers(0, c, size=(h, w))
        g = rng.integers(0, c, size=(h, w))
        whole = accumulate(ConfusionMatrix(num_classes=c), p, g)
        cut = int(rng.integers(1, h))
        tiles = merge([accumulate(ConfusionMatrix(num_classes=c), p[:cut], g[:cut]),
                       accumulate(ConfusionMatrix(num_classes=c), p[cut:], g[cut:])])
        np.testing.assert_array_equal(tiles.counts, whole.counts)
    _report("miou: perfect=1.0, hand case=7/12, tile additivity")


def test_end_to_end_synthetic(tmp_path):
    """A separable bundle with a two-region image scores mIoU 1.0; adding
    10%-amplitude feature noise keeps mIoU >= 0.95."""
    start = time.time()
    config = PipelineConfig()

    bundle, gt = build_synthetic_bundle(grid=(8, 8), patch_px=4, num_classes=2,
                                        feature_dim=16, noise=0.0, seed=0)
    manifest = write_bundle(tmp_path / "clean", bundle)
    write_tensor(tmp_path / "clean_gt.stf", gt)
    res = run_pipeline(manifest, config, tmp_path / "clean_out",
                       gt_path=tmp_path / "clean_gt.stf")
    assert res.metrics["miou"] == 1.0

    noisy, gt2 = build_synthetic_bundle(grid=(8, 8), patch_px=4, num_classes=2,
                                        feature_dim=16, noise=0.1, seed=1234)
    manifest2 = write_bundle(tmp_path / "noisy", noisy)
    write_tensor(tmp_path / "noisy_gt.stf", gt2)
    res2 = run_pipeline(manifest2, config, tmp_path / "noisy_out",
                        gt_path=tmp_path / "noisy_gt.stf")
    assert res2.metrics["miou"] >= 0.95

    elapsed = time.time() - start
    assert elapsed < 30.0, f"end-to-end suite took {elapsed:.2f}s"
    _report(f"end-to-end synthetic (clean miou=1.0, "
            f"noisy miou={res2.metrics['miou']:.3f}, {elapsed:.2f}s)")


def test_pipeline_determinism(tmp_path):
    """Two identical runs produce bit-identical label PNGs and metrics."""
    bundle, gt = build_synthetic_bundle(grid=(6, 6), patch_px=4, num_classes=2,
                                        feature_dim=8)
    manifest = write_bundle(tmp_path / "bundle", bundle)
    write_tensor(tmp_path / "gt.stf", gt)
    config = PipelineConfig()
    first = run_pipeline(manifest, config, tmp_path / "one",
                         gt_path=tmp_path / "gt.stf")
    second = run_pipeline(manifest, config, tmp_path / "two",
                          gt_path=tmp_path / "gt.stf")
    assert open(first.label_png, "rb").read() == open(second.label_png, "rb").read()
    assert open(first.metrics_path, "rb").read() == \
        open(second.metrics_path, "rb").read()
    assert open(first.label_stf, "rb").read() == open(second.label_stf, "rb").read()
    _report("pipeline determinism (bit-identical png + metrics)")


def test_default_config_matches_published_values():
    """The zero-argument config carries the published defaults."""
    cfg = PipelineConfig()
    assert cfg.lambda1 == 1.0
    assert cfg.graph.k == 30
    assert cfg.diffusion.alpha == 0.9
    assert cfg.diffusion.steps == 40
    assert cfg.cscp.lambda_c == 1.0
    assert cfg.cscp.lambda_d == 0.2
    assert cfg.cscp.beta == 0.10
    assert cfg.superpixel.w_in == 1.0
    assert cfg.superpixel.w_cross == 0.10
    _report("default config values")
