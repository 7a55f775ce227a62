import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from viewaug.depth_align import (AffineDepthParams, AlignmentFailedError, InsufficientObservationsError,
                                 SingularFitError, SparseObservations, XorShift64Star, align_depth_ransac,
                                 align_frame, chamfer_distance, fit_affine_ls, project_sparse, splitmix64)
from viewaug.geom import Pose, project
from viewaug.synth import (camera_arc, default_intrinsics, default_scene, render, sample_frame_points,
                           sample_sparse, visible_points)

K = default_intrinsics(64, 64)


@pytest.fixture(scope="module")
def frame():
    scene, poses = default_scene(), camera_arc()
    _, gt = render(scene, poses[6], K, 6)
    return scene, poses, gt


# ------------------------------------------------------------------ sampler


def test_xorshift_reference_values():
    # hand-rolled reference of the update rule, written out independently
    x = 0x0123456789ABCDEF
    expect = []
    for _ in range(3):
        x ^= x >> 12
        x ^= (x << 25) % 2 ** 64
        x ^= x >> 27
        expect.append((x * 0x2545F4914F6CDD1D) % 2 ** 64)
    g = XorShift64Star(0x0123456789ABCDEF)
    assert [g.next() for _ in range(3)] == expect


def test_splitmix_known_value():
    # first output of the reference splitmix64 stream seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF


@given(st.integers(0, 2 ** 64 - 1), st.integers(0, 99), st.integers(10, 300))
@settings(max_examples=100, deadline=None)
def test_sample_is_distinct_and_reproducible(seed, index, n):
    a = XorShift64Star.for_candidate(seed, index).sample(n, 10)
    b = XorShift64Star.for_candidate(seed, index).sample(n, 10)
    assert a == b and len(set(a)) == 10 and all(0 <= i < n for i in a)


# ------------------------------------------------------------------ least squares


def test_fit_exact_line():
    rel = np.array([0.5, 1.0, 2.0, 3.5])
    assert np.allclose(fit_affine_ls(rel, 2 * rel + 0.5), (2.0, 0.5), atol=1e-12)
    assert np.allclose(fit_affine_ls([(1, 1), (2, 2), (3, 3)]), (1.0, 0.0), atol=1e-12)


def test_fit_matches_normal_equations():
    rng = np.random.default_rng(4)
    for _ in range(50):
        x = rng.uniform(0.1, 3, 12)
        y = 1.7 * x + 0.3 + rng.normal(0, 0.2, 12)
        A = np.stack([x, np.ones_like(x)], axis=1)
        ref = np.linalg.solve(A.T @ A, A.T @ y)
        assert np.allclose(fit_affine_ls(x, y), ref, atol=1e-9)


def test_fit_degenerate():
    with pytest.raises(SingularFitError):
        fit_affine_ls([1.0, 1.0, 1.0], [2.0, 3.0, 4.0])
    with pytest.raises(SingularFitError):
        fit_affine_ls([1.0], [2.0])


def test_apply_marks_nonpositive_invalid():
    d = AffineDepthParams(2.0, -1.0).apply(np.array([1.0, 0.25, 0.0, np.nan]))
    assert np.array_equal(d, [1.0, 0.0, 0.0, 0.0])


# ------------------------------------------------------------------ chamfer


def test_chamfer_examples():
    a = np.random.default_rng(0).normal(size=(20, 3))
    assert chamfer_distance(a, a) == 0
    assert chamfer_distance([[0, 0, 0]], [[1, 0, 0]]) == 2.0
    with pytest.raises(ValueError):
        chamfer_distance(np.zeros((0, 3)), a)


def brute_chamfer(a, b):
    d = np.sum((a[:, None] - b[None]) ** 2, axis=-1)
    return d.min(axis=1).mean() + d.min(axis=0).mean()


def test_chamfer_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
        assert chamfer_distance(a, b) == brute_chamfer(a, b)


@given(st.integers(0, 10 ** 6))
@settings(max_examples=50, deadline=None)
def test_chamfer_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(rng.integers(1, 40), 3)), rng.normal(size=(rng.integers(1, 40), 3))
    assert chamfer_distance(a, b) == pytest.approx(chamfer_distance(b, a), rel=1e-12)
    assert chamfer_distance(a, b) >= 0


# ------------------------------------------------------------------ projection


def test_project_sparse_culls():
    pose = Pose.identity()
    rel = np.ones((64, 64))
    pts = np.array([[0, 0, -1.0], [0, 0, 2.0]])
    # (-3, 5) in pixels: x = (u - cx) z / f
    off = np.array([[(-3 - K.cx) * 2 / K.fx, (5 - K.cy) * 2 / K.fy, 2.0]])
    good = np.tile([[0.1, 0.1, 3.0]], (10, 1))
    obs = project_sparse(np.concatenate([pts, off, good]), pose, K, rel)
    assert len(obs) == 11
    assert np.all(obs.metric_depth > 0)
    with pytest.raises(InsufficientObservationsError):
        project_sparse(np.concatenate([pts, off]), pose, K, rel)


def test_project_sparse_count_matches_raycast(frame):
    scene, poses, gt = frame
    # survivors are exactly the ray-cast-visible points whose projection lies in [0, W) x [0, H)
    own = sample_frame_points(scene, poses[6], K, 300, t=6.0, seed=2)
    p, _, _ = project(own, poses[6], K)
    inb = (p[:, 0] >= 0) & (p[:, 0] < 64) & (p[:, 1] >= 0) & (p[:, 1] < 64)
    vis = visible_points(scene, own, poses[6], K, 6.0)
    assert (vis & inb).sum() == len(project_sparse(own, poses[6], K, gt))
    # for a multi-frame cloud the survivors are the in-front, in-bounds projections
    sp = sample_sparse(scene, poses, K, 400, seed=2)
    obs = project_sparse(sp, poses[6], K, np.ones(K.shape))
    p, z, front = project(sp.xyz, poses[6], K)
    inside = front & (p[:, 0] >= 0) & (p[:, 0] < 64) & (p[:, 1] >= 0) & (p[:, 1] < 64)
    assert len(obs) == inside.sum()
    assert np.all((obs.pixels >= 0) & (obs.pixels < 64))


# ------------------------------------------------------------------ ransac


def make_obs(frame, alpha=3.2, beta=0.4, count=600, outliers=0.0, seed=0):
    scene, poses, gt = frame
    rel = np.where(gt > 0, (gt - beta) / alpha, 0.0)
    pts = sample_frame_points(scene, poses[6], K, count, t=6.0, seed=seed)
    obs = project_sparse(pts, poses[6], K, rel)
    rng = np.random.default_rng(seed)
    bad = rng.choice(len(obs), int(round(outliers * len(obs))), replace=False)
    obs.metric_depth[bad] *= rng.uniform(0.2, 5, len(bad))
    return obs, rel, pts


def test_outlier_free_matches_global_fit(frame):
    obs, rel, pts = make_obs(frame)
    res = align_depth_ransac(obs, rel, frame[1][6], K, pts, seed=0)
    ref = fit_affine_ls(obs.relative_depth, obs.metric_depth)
    assert np.allclose(res.params, ref, atol=1e-6)


def test_determinism_and_best_score(frame):
    obs, rel, pts = make_obs(frame, outliers=0.2, seed=3)
    a = align_depth_ransac(obs, rel, frame[1][6], K, pts, seed=11)
    b = align_depth_ransac(obs, rel, frame[1][6], K, pts, seed=11)
    assert a.params == b.params and a.depth.tobytes() == b.depth.tobytes()
    assert a.candidates.shape == (100, 3)
    scores = a.candidates[:, 2]
    assert np.all(scores[a.best_index] <= scores[np.isfinite(scores)])
    assert a.best_index == int(np.argmin(scores))


def test_aligned_depth_preserves_order(frame):
    obs, rel, pts = make_obs(frame, outliers=0.2, seed=5)
    params, depth = align_depth_ransac(obs, rel, frame[1][6], K, pts, seed=0)
    rng = np.random.default_rng(0)
    ok = np.flatnonzero(depth.ravel() > 0)
    p, q = rng.choice(ok, 500), rng.choice(ok, 500)
    r, d = rel.ravel(), depth.ravel()
    less = r[p] < r[q]
    assert np.all(d[p][less] < d[q][less])


def test_alignment_reduces_error(frame):
    obs, rel, pts = make_obs(frame, outliers=0.2, seed=6)
    _, depth = align_depth_ransac(obs, rel, frame[1][6], K, pts, seed=0)
    gt = frame[2]
    m = gt > 0
    assert np.median(np.abs(depth[m] - gt[m])) < np.median(np.abs(rel[m] - gt[m]))


def test_align_frame_uses_visible_points(frame):
    obs, rel, pts = make_obs(frame)
    res = align_frame(rel, frame[1][6], K, pts, seed=0)
    assert np.allclose(res.params, (3.2, 0.4), atol=1e-6)


def test_ransac_errors(frame):
    obs, rel, pts = make_obs(frame)
    with pytest.raises(InsufficientObservationsError):
        align_depth_ransac(obs, rel, frame[1][6], K, np.zeros((0, 3)))
    few = SparseObservations(obs.pixels[:5], obs.metric_depth[:5], obs.relative_depth[:5], obs.points[:5])
    with pytest.raises(InsufficientObservationsError):
        align_depth_ransac(few, rel, frame[1][6], K, pts)
    # depth that shrinks as relative depth grows only ever yields negative scales
    flip = SparseObservations(obs.pixels, 10.0 - obs.relative_depth, obs.relative_depth, obs.points)
    with pytest.raises(AlignmentFailedError):
        align_depth_ransac(flip, rel, frame[1][6], K, pts)
