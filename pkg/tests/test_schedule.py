"""Tests for starpath.schedule module."""

import math
from collections import Counter

import numpy as np
import pytest

from starpath.schedule import EpochSchedule, permute


class TestPermute:
    """Per-epoch Philox permutations."""

    def test_single_element(self):
        assert permute(1, seed=5, B=3).tolist() == [0]

    def test_deterministic(self):
        np.testing.assert_array_equal(permute(50, seed=9, B=4), permute(50, seed=9, B=4))

    def test_is_a_permutation(self):
        assert sorted(permute(100, seed=1, B=0).tolist()) == list(range(100))

    def test_epochs_and_seeds_differ(self):
        assert not np.array_equal(permute(100, seed=1, B=0), permute(100, seed=1, B=1))
        assert not np.array_equal(permute(100, seed=1, B=0), permute(100, seed=2, B=0))

    def test_any_epoch_without_replay(self):
        s = EpochSchedule(40, seed=3)
        np.testing.assert_array_equal(s.permutation(17), permute(40, 3, 17))

    def test_uniform_over_epochs(self):
        draws = 100_000
        counts = Counter(tuple(permute(4, seed=13, B=B).tolist()) for B in range(draws))
        assert len(counts) == 24
        expected = draws / 24
        sigma = math.sqrt(draws * (1 / 24) * (23 / 24))
        assert all(abs(c - expected) <= 5 * sigma for c in counts.values())

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            permute(0, seed=0, B=0)
        with pytest.raises(ValueError):
            permute(5, seed=0, B=-1)


class TestEpochSchedule:
    """Index bookkeeping k = n*B + t."""

    def test_single_component(self):
        s = EpochSchedule(1, seed=0)
        assert [s.sample_index(k) for k in range(5)] == [0] * 5

    def test_direct_lookup(self):
        s = EpochSchedule(3, seed=0)
        s._perms[2] = np.array([2, 0, 1])
        assert [s.sample_index(6), s.sample_index(7), s.sample_index(8)] == [2, 0, 1]
        assert s.inverse_position(2, 2) == 1
        assert s.inverse_position(2, 0) == 2
        assert s.inverse_position(2, 1) == 3

    def test_identity_permutation(self):
        s = EpochSchedule(4, seed=0)
        s._perms[0] = np.arange(4)
        assert [s.inverse_position(0, v) for v in range(4)] == [1, 2, 3, 4]

    def test_inverse_composes_with_sample_index(self):
        s = EpochSchedule(25, seed=7)
        for B in range(4):
            for v in range(25):
                assert s.sample_index(25 * B + s.inverse_position(B, v) - 1) == v

    def test_each_component_once_per_epoch(self):
        s = EpochSchedule(30, seed=2)
        for B in range(3):
            assert sorted(s.sample_index(30 * B + t) for t in range(30)) == list(range(30))

    def test_split(self):
        assert EpochSchedule(7, seed=0).split(23) == (3, 2)

    def test_out_of_range_component(self):
        with pytest.raises(ValueError, match="outside"):
            EpochSchedule(3, seed=0).inverse_position(0, 3)

    def test_negative_iteration(self):
        with pytest.raises(ValueError):
            EpochSchedule(3, seed=0).sample_index(-1)

    def test_permutations_are_read_only(self):
        perm = EpochSchedule(5, seed=0).permutation(0)
        with pytest.raises(ValueError):
            perm[0] = 1
