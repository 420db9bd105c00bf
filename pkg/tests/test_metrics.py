"""Frechet distance, precision/recall, paired distance, diversity, consistency."""

import numpy as np
import pytest

from blobgen.errors import DomainError
from blobgen.metrics import (
    ConsistencyReport, PixelFeatureExtractor, edit_consistency, frechet_distance,
    frechet_gaussian, gaussian_fit, global_diversity, paired_distance,
    precision_recall,
)
from blobgen.toydata import ToySceneSpec


def test_frechet_identical_sets_zero():
    r = np.random.default_rng(0)
    f = r.normal(size=(64, 5))
    assert frechet_distance(f, f.copy()) == pytest.approx(0.0, abs=1e-6)


def test_frechet_closed_form_shifted_unit_gaussians():
    # N(0,1) vs N(1,1) in 1-D from exact moments: distance = 1
    got = frechet_gaussian(np.zeros(1), np.eye(1), np.ones(1), np.eye(1))
    assert got == pytest.approx(1.0, rel=1e-10)


def test_frechet_closed_form_variance_ratio():
    # equal means, isotropic variances 1 and 4 in d dims:
    # per-dim contribution 1 + 4 - 2*sqrt(4) = 1, total = d
    d = 6
    got = frechet_gaussian(np.zeros(d), np.eye(d), np.zeros(d), 4 * np.eye(d))
    assert got == pytest.approx(float(d), rel=1e-10)


def test_frechet_symmetry_and_mean_monotonicity():
    r = np.random.default_rng(1)
    a = r.normal(size=(200, 4))
    b = r.normal(size=(200, 4)) + 0.5
    ab = frechet_distance(a, b)
    ba = frechet_distance(b, a)
    assert ab == pytest.approx(ba, abs=1e-6)
    c = r.normal(size=(200, 4)) + 1.5
    assert frechet_distance(a, c) > ab


def test_frechet_sample_estimate_close_to_closed_form():
    r = np.random.default_rng(2)
    a = r.normal(size=(4000, 3))
    b = r.normal(size=(4000, 3)) + np.array([1.0, 0.0, 0.0])
    assert frechet_distance(a, b) == pytest.approx(1.0, rel=0.1)


def test_gaussian_fit_needs_samples():
    with pytest.raises(DomainError):
        gaussian_fit(np.zeros((1, 3)))


# ---------------------------------------------------------------------------
# precision / recall
# ---------------------------------------------------------------------------

def test_precision_recall_identical_sets():
    r = np.random.default_rng(3)
    f = r.normal(size=(50, 4))
    p, rec = precision_recall(f, f.copy())
    assert p == 1.0 and rec == 1.0


def test_precision_zero_for_far_fake():
    r = np.random.default_rng(4)
    real = r.normal(size=(50, 4))
    fake = r.normal(size=(50, 4)) + 100.0
    p, rec = precision_recall(real, fake)
    assert p == 0.0 and rec == 0.0


def test_recall_half_for_one_of_two_clusters():
    r = np.random.default_rng(5)
    cluster_a = r.normal(size=(100, 3), scale=0.05)
    cluster_b = r.normal(size=(100, 3), scale=0.05) + 10.0
    real = np.concatenate([cluster_a, cluster_b])
    fake = r.normal(size=(120, 3), scale=0.05)  # covers cluster A only
    p, rec = precision_recall(real, fake)
    assert p > 0.85  # kNN-radius estimation noise at the cluster fringe
    assert rec == pytest.approx(0.5, abs=0.05)


def test_precision_recall_permutation_invariant():
    r = np.random.default_rng(6)
    real = r.normal(size=(40, 3))
    fake = r.normal(size=(40, 3), loc=0.3)
    p1 = precision_recall(real, fake)
    perm = r.permutation(40)
    p2 = precision_recall(real[perm], fake[r.permutation(40)])
    assert p1 == p2


def test_precision_recall_needs_enough_points():
    with pytest.raises(DomainError):
        precision_recall(np.zeros((3, 2)), np.zeros((10, 2)), nn_k=3)


# ---------------------------------------------------------------------------
# paired distance / global diversity
# ---------------------------------------------------------------------------

def pixel_images(r, n, res=8):
    return r.normal(size=(n, 3, res, res)).astype(np.float32)


def test_paired_distance_identical_zero():
    r = np.random.default_rng(7)
    imgs = pixel_images(r, 5)
    ex = PixelFeatureExtractor(res=8)
    assert paired_distance(imgs, imgs.copy(), ex) == pytest.approx(0.0, abs=1e-7)


def test_global_diversity_repeated_image_zero():
    r = np.random.default_rng(8)
    img = pixel_images(r, 1)
    imgs = np.repeat(img, 4, axis=0)
    assert global_diversity(imgs, PixelFeatureExtractor(res=8)) == pytest.approx(0.0, abs=1e-7)


def test_paired_distance_matches_loop_oracle():
    r = np.random.default_rng(9)
    a, b = pixel_images(r, 6), pixel_images(r, 6)
    ex = PixelFeatureExtractor(res=8)  # full-resolution pixels as features
    got = paired_distance(a, b, ex)
    ref = np.mean([np.linalg.norm((a[i] - b[i]).reshape(-1).astype(np.float64))
                   for i in range(6)])
    assert got == pytest.approx(ref, rel=1e-6)


def test_paired_distance_length_mismatch():
    r = np.random.default_rng(10)
    with pytest.raises(DomainError):
        paired_distance(pixel_images(r, 3), pixel_images(r, 4), PixelFeatureExtractor())


# ---------------------------------------------------------------------------
# edit consistency
# ---------------------------------------------------------------------------

def test_consistency_identical_images():
    spec = ToySceneSpec(canvas=32)
    s = spec.sample(np.random.default_rng(11))
    rep = edit_consistency(s.image, s.image.copy(), spec)
    assert rep.fraction_unchanged == 1.0
    assert rep.class_iou and all(v == 1.0 for v in rep.class_iou.values())


def test_consistency_scrambled_image_near_class_prior():
    # under independence, E[fraction unchanged] = sum_c p_before(c) * p_after(c)
    spec = ToySceneSpec(canvas=32)
    r = np.random.default_rng(12)
    s = spec.sample(r)
    scram = r.uniform(-1, 1, size=s.image.shape).astype(np.float32)
    rep = edit_consistency(s.image, scram, spec)
    la, lb = spec.segment(s.image), spec.segment(scram)
    expected = sum((la == c).mean() * (lb == c).mean() for c in range(5))
    assert rep.fraction_unchanged == pytest.approx(expected, abs=0.05)


def test_consistency_reports_moved_class_lowest():
    spec = ToySceneSpec(canvas=32)
    s = spec.sample(np.random.default_rng(17))
    # synthetic edit: roll the whole image (moves every object)
    moved = np.roll(s.image, 7, axis=2)
    rep = edit_consistency(s.image, moved, spec)
    assert isinstance(rep, ConsistencyReport)
    assert rep.fraction_unchanged < 1.0
    assert all(0.0 <= v < 1.0 for v in rep.class_iou.values())
