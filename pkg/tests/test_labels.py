import numpy as np
import pytest

from kwspot.errors import ParameterError
from kwspot.labels import (NO_SPEECH, KeywordLabelSpace, SegmentLabel, TrainingItem,
                           active_interval, augment_reversed, mixup_pair,
                           oversample_plan, positional_label)


class TestActiveInterval:
    @pytest.mark.parametrize("n_seg,i_seg,n_pos,expected", [
        (5, 2, 10, (3, 4)),
        (4, 3, 4, (3, 3)),
        (3, 1, 10, (1, 4)),
    ])
    def test_examples(self, n_seg, i_seg, n_pos, expected):
        assert active_interval(n_seg, i_seg, n_pos) == expected

    def test_bijection_when_counts_match(self):
        for i in range(1, 7):
            assert active_interval(6, i, 6) == (i, i)

    def test_out_of_range_rejected(self):
        with pytest.raises(ParameterError):
            active_interval(5, 0, 10)
        with pytest.raises(ParameterError):
            active_interval(5, 6, 10)

    def test_more_segments_than_positions_rejected(self):
        with pytest.raises(ParameterError):
            active_interval(11, 1, 10)

    def test_partition_property(self):
        # intervals partition [1, n_pos] for every 1 <= n_seg <= n_pos <= 64
        for n_pos in range(1, 65):
            for n_seg in range(1, n_pos + 1):
                covered = []
                prev_hi = 0
                for i_seg in range(1, n_seg + 1):
                    lo, hi = active_interval(n_seg, i_seg, n_pos)
                    assert 1 <= lo <= hi <= n_pos
                    assert lo == prev_hi + 1       # contiguous, disjoint
                    prev_hi = hi
                    covered.extend(range(lo, hi + 1))
                assert covered == list(range(1, n_pos + 1))


class TestPositionalLabel:
    def test_interval_mass(self):
        y = positional_label((3, 4), 10)
        assert y[2] == y[3] == 0.5
        assert y.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.count_nonzero(y) == 2

    def test_singleton_one_hot(self):
        y = positional_label((7, 7), 8)
        assert y[6] == 1.0 and y.sum() == 1.0

    def test_no_speech_uniform(self):
        y = positional_label("no_speech", 8)
        assert np.allclose(y, 0.125)

    def test_reversed_uniform(self):
        y = positional_label("reversed", 5)
        assert np.allclose(y, 0.2)

    def test_all_labels_sum_to_one(self):
        for n_pos in range(1, 65):
            for n_seg in range(1, n_pos + 1):
                for i_seg in range(1, n_seg + 1):
                    y = positional_label(active_interval(n_seg, i_seg, n_pos), n_pos)
                    assert abs(y.sum() - 1.0) <= 1e-9

    def test_bad_interval_rejected(self):
        with pytest.raises(ParameterError):
            positional_label((0, 3), 10)
        with pytest.raises(ParameterError):
            positional_label((4, 11), 10)


class TestLabelSpace:
    def test_class_count_with_reversal(self):
        space = KeywordLabelSpace(keywords=tuple(f"kw{i}" for i in range(15)))
        assert space.n_classes == 31

    def test_class_count_without_reversal(self):
        space = KeywordLabelSpace(keywords=("a", "b"), with_reversed=False)
        assert space.n_classes == 3

    def test_duplicate_names_rejected(self):
        with pytest.raises(ParameterError):
            KeywordLabelSpace(keywords=("a", "a"))

    def test_round_trip(self):
        space = KeywordLabelSpace(keywords=("x", "y"), with_reversed=True)
        assert KeywordLabelSpace.from_dict(space.to_dict()) == space

    def test_index_layout(self):
        space = KeywordLabelSpace(keywords=("a", "b"))
        assert space.index("b") == 1
        assert space.reversed_index("b") == 3
        assert space.no_speech_index == 4
        assert space.class_names[-1] == NO_SPEECH


def make_item(space, cls_index, n_pos, sample_id, seg_index, t=6, d=4, seed=0):
    rng = np.random.default_rng(seed + sample_id * 100 + seg_index)
    if cls_index == space.no_speech_index:
        y_pos = positional_label("no_speech", n_pos)
    else:
        y_pos = positional_label((seg_index, seg_index), n_pos)
    return TrainingItem(
        features=rng.normal(size=(t, d)),
        label=SegmentLabel(y_kw=space.one_hot(cls_index), y_pos=y_pos,
                           sample_id=sample_id, segment_index=seg_index))


class TestAugmentReversed:
    def setup_method(self):
        self.space = KeywordLabelSpace(keywords=("a", "b"))
        self.items = [
            make_item(self.space, 0, 4, 0, 1),
            make_item(self.space, 0, 4, 0, 2),
            make_item(self.space, 1, 4, 1, 1),
            make_item(self.space, self.space.no_speech_index, 4, 2, 1),
        ]

    def test_doubles_keyword_segments(self):
        out = augment_reversed(self.items, self.space)
        assert len(out) == 4 + 3            # 3 keyword segments reversed, no-speech kept

    def test_no_speech_not_reversed(self):
        out = augment_reversed(self.items, self.space)
        ns = [it for it in out
              if int(np.argmax(it.label.y_kw)) == self.space.no_speech_index]
        assert len(ns) == 1

    def test_reversal_is_involution(self):
        out = augment_reversed(self.items, self.space)
        rev = out[4]
        assert np.array_equal(rev.features[::-1], self.items[0].features)

    def test_reversed_labels(self):
        out = augment_reversed(self.items, self.space)
        rev = out[4]
        assert int(np.argmax(rev.label.y_kw)) == self.space.reversed_index("a")
        assert np.allclose(rev.label.y_pos, 0.25)

    def test_originals_untouched(self):
        snapshot = [it.features.copy() for it in self.items]
        augment_reversed(self.items, self.space)
        for it, snap in zip(self.items, snapshot):
            assert np.array_equal(it.features, snap)

    def test_reversed_copies_get_fresh_sample_ids(self):
        out = augment_reversed(self.items, self.space)
        original_ids = {it.label.sample_id for it in self.items}
        new_ids = {it.label.sample_id for it in out[4:]}
        assert original_ids.isdisjoint(new_ids)


class TestOversamplePlan:
    def test_already_balanced_identity(self):
        plan = oversample_plan(np.array([0, 0, 0, 1, 1, 1]), np.random.default_rng(0))
        assert sorted(plan.tolist()) == [0, 1, 2, 3, 4, 5]

    def test_counts_balanced(self):
        ids = np.array([0, 0, 1, 1, 1, 1])
        plan = oversample_plan(ids, np.random.default_rng(0))
        counts = {cls: int((ids[plan] == cls).sum()) for cls in (0, 1)}
        assert counts == {0: 4, 1: 4}

    def test_single_class_identity(self):
        plan = oversample_plan(np.array([7, 7, 7]), np.random.default_rng(0))
        assert sorted(plan.tolist()) == [0, 1, 2]

    def test_every_original_present(self):
        ids = np.array([0] * 2 + [1] * 9 + [2] * 5)
        plan = oversample_plan(ids, np.random.default_rng(3))
        assert set(plan.tolist()) >= set(range(len(ids)))

    def test_duplicates_drawn_from_own_class(self):
        ids = np.array([0, 0, 1, 1, 1, 1, 1])
        plan = oversample_plan(ids, np.random.default_rng(5))
        extras = plan[len(ids):]
        assert all(ids[i] == 0 for i in extras)

    def test_deterministic_given_seed(self):
        ids = np.array([0, 1, 1, 2, 2, 2])
        a = oversample_plan(ids, np.random.default_rng(9))
        b = oversample_plan(ids, np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            oversample_plan(np.array([]), np.random.default_rng(0))


class TestMixup:
    def test_both_heads_share_coefficient(self):
        space = KeywordLabelSpace(keywords=("a", "b"))
        a = make_item(space, 0, 4, 0, 1)
        b = make_item(space, 1, 4, 1, 1)
        mixed = mixup_pair(a, b, 0.3)
        assert np.allclose(mixed.label.y_kw, 0.3 * a.label.y_kw + 0.7 * b.label.y_kw)
        assert np.allclose(mixed.label.y_pos, 0.3 * a.label.y_pos + 0.7 * b.label.y_pos)
        assert np.allclose(mixed.features, 0.3 * a.features + 0.7 * b.features)
        assert mixed.label.y_kw.sum() == pytest.approx(1.0)
