import numpy as np
import pytest

from kwspot.errors import NumericDomainError, ParameterError
from kwspot.labels import SegmentLabel
from kwspot.loss import (AdaptiveScale, angular_loss, angular_loss_gradients,
                         initial_scale, joint_softmax, similarity, update_scale)


def one_hot(n, i):
    y = np.zeros(n)
    y[i] = 1.0
    return y


def random_labels(rng, batch, n_kw, n_pos, own_samples=True):
    labels = []
    for i in range(batch):
        y_pos = np.zeros(n_pos)
        lo = int(rng.integers(n_pos))
        hi = int(rng.integers(lo, n_pos))
        y_pos[lo:hi + 1] = 1.0 / (hi - lo + 1)
        labels.append(SegmentLabel(y_kw=one_hot(n_kw, int(rng.integers(n_kw))),
                                   y_pos=y_pos,
                                   sample_id=i if own_samples else 0,
                                   segment_index=1))
    return labels


def fd_gradients(batch_e, labels, centers, scale, h=1e-5, pos_weight=1.0):
    def loss_of(es, c):
        _, total = angular_loss(list(es), labels, c, scale, pos_weight)
        return total

    grad_e = [np.zeros_like(e) for e in batch_e]
    for b, e in enumerate(batch_e):
        it = np.nditer(e, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            ep = [x.copy() for x in batch_e]
            em = [x.copy() for x in batch_e]
            ep[b][idx] += h
            em[b][idx] -= h
            grad_e[b][idx] = (loss_of(ep, centers) - loss_of(em, centers)) / (2 * h)
    grad_c = np.zeros_like(centers)
    it = np.nditer(centers, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        cp = centers.copy()
        cm = centers.copy()
        cp[idx] += h
        cm[idx] -= h
        grad_c[idx] = (loss_of(batch_e, cp) - loss_of(batch_e, cm)) / (2 * h)
    return np.stack(grad_e), grad_c


def assert_close_relative(analytic, numeric, tol=1e-4, floor=1e-8):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    mag = np.maximum(np.abs(analytic), np.abs(numeric))
    mask = mag > floor
    rel = np.abs(analytic - numeric)[mask] / mag[mask]
    assert rel.size == 0 or rel.max() <= tol


class TestSimilarity:
    def test_self_similarity_is_one(self):
        v = np.array([1.0, 2.0, -1.0, 0.5])
        e = np.tile(v, (3, 1))
        centers = v[None, None, None, :] * np.ones((1, 1, 1, 1))
        theta = similarity(e, centers.reshape(1, 1, 1, 4))
        assert theta.shape == (1, 1)
        assert theta[0, 0] == pytest.approx(1.0)

    def test_orthogonal_is_zero(self):
        e = np.array([[1.0, 0.0], [1.0, 0.0]])
        centers = np.array([0.0, 1.0]).reshape(1, 1, 1, 2)
        assert similarity(e, centers)[0, 0] == pytest.approx(0.0)

    def test_max_picks_matching_cluster_per_frame(self):
        # frame 1 parallel to cluster 1, frame 2 parallel to cluster 2
        e = np.array([[2.0, 0.0], [0.0, 3.0]])
        centers = np.zeros((2, 1, 1, 2))
        centers[0, 0, 0] = [1.0, 0.0]
        centers[1, 0, 0] = [0.0, 5.0]
        assert similarity(e, centers)[0, 0] == pytest.approx(1.0)

    def test_entries_bounded(self, rng):
        e = rng.normal(size=(4, 6))
        centers = rng.normal(size=(3, 2, 5, 6))
        theta = similarity(e, centers)
        assert theta.shape == (2, 5)
        assert np.all(theta >= -1.0 - 1e-12) and np.all(theta <= 1.0 + 1e-12)

    def test_scale_invariance(self, rng):
        e = rng.normal(size=(4, 6))
        centers = rng.normal(size=(3, 2, 5, 6))
        ref = similarity(e, centers)
        scaled_e = e * np.array([2.0, 0.5, 7.0, 1e3])[:, None]
        assert np.allclose(similarity(scaled_e, centers), ref)
        assert np.allclose(similarity(e, centers * 42.0), ref)

    def test_zero_norm_rejected(self, rng):
        e = rng.normal(size=(3, 4))
        e[1] = 0.0
        centers = rng.normal(size=(2, 2, 2, 4))
        with pytest.raises(NumericDomainError):
            similarity(e, centers)
        e = rng.normal(size=(3, 4))
        centers[0, 1, 1] = 0.0
        with pytest.raises(NumericDomainError):
            similarity(e, centers)


class TestJointSoftmax:
    def test_constant_theta_uniform(self):
        s = joint_softmax(np.zeros((3, 4)) + 0.25, AdaptiveScale(7.0))
        assert np.allclose(s, 1.0 / 12)

    def test_sums_to_one(self, rng):
        theta = rng.uniform(-1, 1, size=(5, 6))
        s = joint_softmax(theta, AdaptiveScale(13.0))
        assert s.sum() == pytest.approx(1.0, abs=1e-6)
        assert np.all(s >= 0)

    def test_marginals_are_distributions(self, rng):
        theta = rng.uniform(-1, 1, size=(4, 3))
        s = joint_softmax(theta, AdaptiveScale(9.0))
        assert s.sum(axis=1).sum() == pytest.approx(1.0, abs=1e-9)
        assert s.sum(axis=0).sum() == pytest.approx(1.0, abs=1e-9)

    def test_large_scale_concentrates(self, rng):
        theta = rng.uniform(-1, 0.5, size=(3, 4))
        best = np.unravel_index(np.argmax(theta), theta.shape)
        gap = np.sort(theta.ravel())[-1] - np.sort(theta.ravel())[-2]
        s_hat = np.log(99.0 * (theta.size - 1)) / gap  # derived concentration bound
        s = joint_softmax(theta, AdaptiveScale(float(s_hat)))
        assert s[best] >= 0.99

    def test_argmax_invariant_under_scale(self, rng):
        theta = rng.uniform(-1, 1, size=(4, 5))
        a = joint_softmax(theta, AdaptiveScale(2.0))
        b = joint_softmax(theta, AdaptiveScale(50.0))
        assert np.argmax(a) == np.argmax(b)

    def test_no_overflow_at_extreme_scale(self):
        theta = np.array([[1.0, -1.0]])
        s = joint_softmax(theta, 1e4)
        assert np.all(np.isfinite(s))


class TestUpdateScale:
    def test_initialization_constant(self):
        c = 3 * 4
        assert initial_scale(3, 4).value == pytest.approx(np.sqrt(2) * np.log(c - 1))

    def test_fixed_point_on_repeated_batch(self, rng):
        n_kw, n_pos = 4, 3
        thetas = rng.uniform(-0.3, 0.3, size=(8, n_kw, n_pos))
        labels = random_labels(rng, 8, n_kw, n_pos)
        scale = initial_scale(n_kw, n_pos)
        for _ in range(300):
            scale = update_scale(thetas, labels, scale)
        after = update_scale(thetas, labels, scale)
        assert abs(after.value - scale.value) <= 1e-6
        assert scale.value > 0 and np.isfinite(scale.value)

    def test_degenerate_constant_batch_stationary(self):
        # with all thetas equal the median angle is stationary, so iterating
        # the update settles (possibly onto a clamp bound) and stays there
        n_kw, n_pos = 3, 4
        thetas = np.full((4, n_kw, n_pos), 0.1)
        labels = random_labels(np.random.default_rng(0), 4, n_kw, n_pos)
        scale = initial_scale(n_kw, n_pos)
        for _ in range(200):
            scale = update_scale(thetas, labels, scale)
        after = update_scale(thetas, labels, scale)
        assert after.value == pytest.approx(scale.value, abs=1e-9)

    def test_stays_positive_finite(self, rng):
        n_kw, n_pos = 5, 5
        scale = initial_scale(n_kw, n_pos)
        for _ in range(50):
            thetas = rng.uniform(-1, 1, size=(6, n_kw, n_pos))
            labels = random_labels(rng, 6, n_kw, n_pos)
            scale = update_scale(thetas, labels, scale)
            assert 0 < scale.value <= 100 and np.isfinite(scale.value)

    def test_empty_batch_rejected(self):
        with pytest.raises(ParameterError):
            update_scale(np.zeros((0, 2, 2)), [], initial_scale(2, 2))


class TestAngularLoss:
    def test_perfect_prediction_approaches_zero(self):
        # one cluster per cell; embedding sits exactly on the labeled center
        n_kw, n_pos, d = 3, 4, 8
        rng = np.random.default_rng(0)
        centers = rng.normal(size=(1, n_kw, n_pos, d))
        centers /= np.linalg.norm(centers, axis=-1, keepdims=True)
        e = np.tile(centers[0, 1, 2], (5, 1))
        label = SegmentLabel(y_kw=one_hot(n_kw, 1), y_pos=one_hot(n_pos, 2),
                             sample_id=0, segment_index=1)
        outputs, total = angular_loss([e], [label], centers, AdaptiveScale(80.0))
        assert total < 1e-3
        assert outputs[0].loss_total < 1e-3

    def test_uniform_prediction_value(self):
        # all cells equally similar -> s uniform -> loss = ln(K) + ln(P)
        n_kw, n_pos, d = 3, 4, 6
        centers = np.tile(np.eye(1, d), (2, n_kw, n_pos, 1))
        e = np.tile(np.eye(1, d), (5, 1))
        label = SegmentLabel(y_kw=one_hot(n_kw, 0), y_pos=one_hot(n_pos, 0),
                             sample_id=0, segment_index=1)
        _, total = angular_loss([e], [label], centers, AdaptiveScale(3.0))
        assert total == pytest.approx(np.log(n_kw) + np.log(n_pos), abs=1e-9)

    def test_soft_position_half_half_gives_ln2(self):
        # marginal p_pos = 0.5/0.5 on the two labeled positions
        n_kw, n_pos, d = 1, 2, 4
        rng = np.random.default_rng(1)
        centers = rng.normal(size=(1, n_kw, n_pos, d))
        # both cells equally similar to e -> p_pos = (0.5, 0.5)
        centers[0, 0, 1] = centers[0, 0, 0]
        e = rng.normal(size=(3, d))
        label = SegmentLabel(y_kw=one_hot(n_kw, 0), y_pos=np.array([0.5, 0.5]),
                             sample_id=0, segment_index=1)
        outputs, _ = angular_loss([e], [label], centers, AdaptiveScale(10.0))
        assert outputs[0].loss_pos == pytest.approx(np.log(2), abs=1e-9)

    def test_loss_nonnegative(self, rng):
        for trial in range(5):
            es = [rng.normal(size=(4, 6)) for _ in range(3)]
            centers = rng.normal(size=(2, 3, 4, 6))
            labels = random_labels(rng, 3, 3, 4)
            outputs, total = angular_loss(es, labels, centers, AdaptiveScale(5.0))
            assert total >= 0
            for out in outputs:
                assert out.loss_total >= 0
                assert np.all(out.theta >= -1 - 1e-12) and np.all(out.theta <= 1 + 1e-12)
                assert out.s.sum() == pytest.approx(1.0, abs=1e-6)

    def test_batch_mean_groups_by_sample(self, rng):
        # two segments of one sample average before the batch mean
        es = [rng.normal(size=(3, 5)) for _ in range(3)]
        centers = rng.normal(size=(2, 2, 3, 5))
        labels = random_labels(rng, 3, 2, 3)
        labels = [SegmentLabel(y_kw=l.y_kw, y_pos=l.y_pos, sample_id=sid, segment_index=1)
                  for l, sid in zip(labels, [0, 0, 1])]
        outputs, total = angular_loss(es, labels, centers, AdaptiveScale(4.0))
        per_item = [o.loss_total for o in outputs]
        expected = ((per_item[0] + per_item[1]) / 2 + per_item[2]) / 2
        assert total == pytest.approx(expected, abs=1e-12)


class TestGradients:
    def test_matches_finite_differences(self, rng):
        t_dim, d, n_kw, n_pos, m = 4, 5, 2, 3, 2
        es = [rng.normal(size=(t_dim, d)) for _ in range(3)]
        centers = rng.normal(size=(m, n_kw, n_pos, d))
        labels = random_labels(rng, 3, n_kw, n_pos)
        scale = AdaptiveScale(6.0)
        ge, gc, _ = angular_loss_gradients(es, labels, centers, scale)
        fe, fc = fd_gradients(es, labels, centers, scale)
        assert_close_relative(ge, fe)
        assert_close_relative(gc, fc)

    def test_matches_finite_differences_kw_only(self, rng):
        es = [rng.normal(size=(3, 4)) for _ in range(2)]
        centers = rng.normal(size=(2, 2, 2, 4))
        labels = random_labels(rng, 2, 2, 2)
        scale = AdaptiveScale(4.0)
        ge, gc, _ = angular_loss_gradients(es, labels, centers, scale, pos_weight=0.0)
        fe, fc = fd_gradients(es, labels, centers, scale, pos_weight=0.0)
        assert_close_relative(ge, fe)
        assert_close_relative(gc, fc)

    def test_gradients_vanish_at_perfect_prediction(self):
        n_kw, n_pos, d = 2, 2, 6
        rng = np.random.default_rng(3)
        centers = rng.normal(size=(1, n_kw, n_pos, d))
        centers /= np.linalg.norm(centers, axis=-1, keepdims=True)
        e = np.tile(centers[0, 0, 1], (4, 1))
        label = SegmentLabel(y_kw=one_hot(n_kw, 0), y_pos=one_hot(n_pos, 1),
                             sample_id=0, segment_index=1)
        ge, gc, total = angular_loss_gradients([e], [label], centers, AdaptiveScale(90.0))
        assert np.abs(ge).max() < 1e-6
        assert np.abs(gc).max() < 1e-6

    def test_never_attaining_center_gets_no_gradient(self, rng):
        # cluster 1 of every cell is far worse than cluster 0 for every frame
        d = 4
        e = np.abs(rng.normal(size=(3, d))) + 0.5
        centers = np.zeros((2, 1, 2, d))
        centers[0] = np.abs(rng.normal(size=(1, 2, d))) + 0.5   # positive orthant
        centers[1] = -centers[0]                                # antipodal, never max
        label = SegmentLabel(y_kw=one_hot(1, 0), y_pos=one_hot(2, 0),
                             sample_id=0, segment_index=1)
        ge, gc, _ = angular_loss_gradients([e], [label], centers, AdaptiveScale(5.0))
        assert np.abs(gc[1]).max() == 0.0
        assert np.abs(gc[0]).max() > 0.0
