import json
import math

import numpy as np
import pytest

from tridp.dpsweep import (
    REPRESENTATIVE, SCALE_LADDER, SweepGrid, SweepPoint, assign_phases, detect_phases, fid_from_embeddings,
    locate_downstream_optimum, pool_embeddings, precision_recall, run_sweep, smooth, sweep_csv, write_sweep_outputs,
)
from tridp.exceptions import InputError
from tridp.losses import LossWeights
from tridp.protocol import generate_ecg, train_base


# --- grid ---------------------------------------------------------------------------

def test_default_grid_covers_both_legs():
    grid = SweepGrid()
    leg1 = [p.lambda_d for p in grid.leg1()]
    leg2 = [p.lambda_p for p in grid.leg2()]
    assert leg1[0] == 1e4 and leg1[-1] == 1.0 and len(leg1) == 9
    assert leg2[0] == 1.0 and leg2[-1] == 1e7 and len(leg2) == 15
    ratios = [p.ratio for p in grid.points()]
    assert ratios == sorted(ratios)
    assert len(set((p.lambda_d, p.lambda_p) for p in grid.points())) == len(ratios)


def test_representative_points_always_present():
    labels = {p.label: (p.lambda_d, p.lambda_p) for p in SweepGrid.reduced().points() if p.label}
    assert labels == {name: (d, p) for name, d, p in REPRESENTATIVE}
    assert [name for name, _, _ in REPRESENTATIVE] == list("ABCDEFGHI")
    pts = SweepGrid.reduced().points()
    assert [p.label for p in pts if p.label] == list("ABCDEFGIH")  # numeric order puts I before H


def test_reduced_grid_size_and_pairs_override():
    assert len(SweepGrid(include_representative=False, points_per_decade=1).points()) == 12
    grid = SweepGrid(pairs=((1, 0), (5, 1)), include_representative=False)
    assert [(p.lambda_d, p.lambda_p) for p in grid.points()] == [(1.0, 0.0), (5.0, 1.0)]
    assert SweepGrid.from_dict(grid.to_dict()) == grid


def test_scale_ladder():
    assert len(SCALE_LADDER) == 6


# --- FID ----------------------------------------------------------------------------

def test_fid_identity_and_symmetry():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(300, 8))
    b = rng.normal(size=(200, 8)) * 1.5 + 0.3
    assert fid_from_embeddings(a, a) <= 1e-6
    assert fid_from_embeddings(a, b) == fid_from_embeddings(b, a)


def test_fid_closed_form_gaussians():
    # Means a distance 2 apart, equal covariance: FID = 4. A single 2000-sample draw
    # carries a few percent of sampling noise, so the check averages 5 seeded draws.
    d = 16
    shift = np.zeros(d)
    shift[:4] = 1.0
    values = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(2000, d))
        b = rng.normal(size=(2000, d)) + shift
        values.append(fid_from_embeddings(a, b))
    assert np.mean(values) == pytest.approx(4.0, rel=0.05)


def test_fid_closed_form_general_covariances():
    # ||mu_a - mu_b||^2 + tr(A + B - 2 (A B)^{1/2}) for commuting diagonal covariances
    rng = np.random.default_rng(2)
    va, vb = np.array([1.0, 4.0, 0.25]), np.array([4.0, 1.0, 1.0])
    a = rng.normal(size=(200000, 3)) * np.sqrt(va)
    b = rng.normal(size=(200000, 3)) * np.sqrt(vb) + np.array([1.0, 0.0, 0.0])
    expected = 1.0 + np.sum(va + vb - 2 * np.sqrt(va * vb))
    assert fid_from_embeddings(a, b) == pytest.approx(expected, rel=0.02)


def test_fid_singular_covariance_regularized():
    a = np.zeros((10, 4))
    a[:, 0] = np.arange(10)
    value, info = fid_from_embeddings(a, a + 1.0, return_info=True)
    assert info["regularized"] and math.isfinite(value) and value >= 0


def test_fid_input_errors():
    with pytest.raises(InputError):
        fid_from_embeddings(np.zeros((5, 3)), np.zeros((5, 4)))
    with pytest.raises(InputError):
        fid_from_embeddings(np.zeros((1, 3)), np.zeros((5, 3)))


def test_pool_embeddings_means_over_time():
    maps = np.arange(24, dtype=float).reshape(2, 3, 4)
    np.testing.assert_array_equal(pool_embeddings(maps), maps.mean(axis=2))


# --- precision / recall -----------------------------------------------------------

def brute_pr(real, fake, k):
    def radius(pts, i):
        ds = sorted(math.dist(pts[i], pts[j]) for j in range(len(pts)) if j != i)
        return ds[k - 1]

    r_real = [radius(real, i) for i in range(len(real))]
    r_fake = [radius(fake, i) for i in range(len(fake))]
    prec = sum(any(math.dist(f, real[j]) <= r_real[j] for j in range(len(real))) for f in fake) / len(fake)
    rec = sum(any(math.dist(r, fake[j]) <= r_fake[j] for j in range(len(fake))) for r in real) / len(real)
    return prec, rec


@pytest.mark.parametrize("seed", range(5))
def test_precision_recall_matches_pairwise_oracle(seed):
    rng = np.random.default_rng(seed)
    real = rng.normal(size=(rng.integers(8, 64), 3))
    fake = rng.normal(size=(rng.integers(8, 64), 3)) * 1.3 + 0.5
    p, r, f1 = precision_recall(real, fake, k=3)
    assert (p, r) == brute_pr(real, fake, 3)
    assert f1 == (0.0 if p * r == 0 else 2 * p * r / (p + r))
    assert 0 <= f1 <= min(2 * p, 2 * r)


def test_precision_recall_trivial_cases():
    rng = np.random.default_rng(3)
    real = rng.normal(size=(40, 4))
    assert precision_recall(real, real.copy()) == (1.0, 1.0, 1.0)
    assert precision_recall(real, real + 1e3) == (0.0, 0.0, 0.0)


def test_half_inside_no_recall():
    # real: tight cluster; fake: half on top of real points, half in a spread far cloud
    rng = np.random.default_rng(4)
    real = rng.normal(size=(20, 2)) * 0.1
    near = real[:10] + 1e-4
    far = rng.normal(size=(10, 2)) * 50 + 1000
    fake = np.vstack([near, far])
    p, r, f1 = precision_recall(real, fake, k=3)
    assert p == 0.5
    assert (p, r) == brute_pr(real, fake, 3)


def test_precision_recall_too_small():
    with pytest.raises(InputError):
        precision_recall(np.zeros((3, 2)), np.zeros((10, 2)), k=3)


# --- phases -------------------------------------------------------------------------

def quadratic_trajectory():
    r = np.arange(1, 10, dtype=float)
    return r, (r - 3) ** 2, (r - 6) ** 2


def test_smooth_edges():
    np.testing.assert_allclose(smooth([0, 3, 6, 9]), [1.5, 3, 6, 7.5])


def test_detect_phases_recovers_quadratic_turning_points():
    r, mse, fid = quadratic_trajectory()
    res = detect_phases(r, mse, fid)
    expected = ["positive_sum"] * 2 + ["coopetitive"] * 3 + ["negative_sum"] * 4
    t1, t2 = res.turning_points
    assert abs(t1 - 2) <= 1 and abs(t2 - 5) <= 1
    assert sum(a != b for a, b in zip(res.labels, expected)) <= 2
    assert not res.partial


def test_detect_phases_order_invariant():
    r, mse, fid = quadratic_trajectory()
    fwd = detect_phases(r, mse, fid)
    rev = detect_phases(r[::-1], mse[::-1], fid[::-1])
    assert fwd.turning_ratios == rev.turning_ratios
    assert fwd.labels == rev.labels


def test_single_regime_is_partial():
    r = np.arange(1, 8, dtype=float)
    res = detect_phases(r, 10 - r, 20 - 2 * r)
    assert set(res.labels) == {"positive_sum"}
    assert res.partial and res.turning_points == (None, None)


def test_labels_form_contiguous_runs():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(5, 15))
        res = detect_phases(np.sort(rng.random(n)), rng.random(n), rng.random(n))
        runs = [lab for i, lab in enumerate(res.labels) if i == 0 or lab != res.labels[i - 1]]
        assert len(runs) == len(set(runs)) <= 3


def test_detect_phases_errors():
    with pytest.raises(InputError):
        detect_phases([1, 2, 3], [1, 2, 3], [1, 2, 3])
    with pytest.raises(InputError):
        detect_phases(range(6), [1, 2, np.nan, 4, 5, 6], range(6))


def make_points(mse, fid, ratios=None):
    ratios = ratios if ratios is not None else np.arange(1, len(mse) + 1, dtype=float)
    return [SweepPoint(1.0, float(r), mse=float(m), fid=float(f)) for r, m, f in zip(ratios, mse, fid)]


def test_assign_phases_skips_diverged_points():
    r, mse, fid = quadratic_trajectory()
    points = make_points(mse, fid, r)
    points[4].converged = False
    res = assign_phases(points)
    assert points[4].phase == "unassigned"
    assert len(res.labels) == 8


def test_downstream_optimum_tie_and_peak():
    r, mse, fid = quadratic_trajectory()
    points = make_points(mse, fid, r)
    assign_phases(points)
    for p in points:
        p.downstream["sex"] = {"acc": 0.5}
    assert locate_downstream_optimum(points)["sex"]["index"] == 0
    for i, p in enumerate(points):
        p.downstream["segmentation"] = {"iou_mean": 0.9 if i == 3 else 0.4}
        p.downstream["bp"] = {"mae": 1.0 if i == 4 else 5.0}
    rep = locate_downstream_optimum(points)
    assert rep["segmentation"]["index"] == 3 and rep["segmentation"]["phase"] == "coopetitive"
    assert rep["bp"]["index"] == 4 and rep["bp"]["near_coopetitive"]


def test_sweep_outputs_written(tmp_path):
    r, mse, fid = quadratic_trajectory()
    points = make_points(mse, fid, r)
    for p in points:
        p.precision = p.recall = p.f1 = 0.5
        p.downstream["bp"] = {"mae": 3.0}
    paths = write_sweep_outputs(points, tmp_path, "abc", 0)
    text = paths["csv"].read_text()
    assert text.splitlines()[0].endswith("fid_regularized,bp.mae")
    assert len(text.splitlines()) == 10
    doc = json.loads(paths["phases"].read_text())
    assert doc["labels"][0] == "positive_sum" and doc["labels"][-1] == "negative_sum"
    assert paths["plot_leg2"].read_text().lstrip().startswith("<?xml")
    assert sweep_csv(points, "abc", 0) == text


# --- sweep on real training (tiny) ----------------------------------------------------

def test_run_sweep_is_deterministic(small_splits, tiny_pretrained):
    train, test = small_splits
    cfg, _, pre = tiny_pretrained
    grid = SweepGrid(pairs=((1, 0), (5, 1), (1, 9)), include_representative=False)
    first = run_sweep(train, test, pre, cfg, grid, k=1)
    second = run_sweep(train, test, pre, cfg, grid, k=1)
    assert sweep_csv(first, "h", 0) == sweep_csv(second, "h", 0)
    assert [p.ratio for p in first] == [0.0, 0.2, 9.0]
    assert all(p.finite() for p in first)
    # the (1, 0) point is exactly the distortion-only generator
    w = LossWeights(1, 0)
    gen, _ = train_base(train, pre.hs_ae, pre.ecg_ae, pre.disc, w, cfg.plan("base_task", weights=w))
    fake = generate_ecg(gen, test.hs).astype(np.float64)
    assert first[0].mse == pytest.approx(float(np.mean((fake - test.ecg.astype(np.float64)) ** 2)), rel=1e-12)
