"""
Tests for the counter-addressed random streams.
"""

import numpy as np

from app.services.rng import BROWNIAN_STREAM, INITIAL_STREAM, CounterStreams, generator


class TestCounterStreams:
    def test_same_address_same_numbers(self):
        a = generator(7, BROWNIAN_STREAM, 3).standard_normal(10)
        b = generator(7, BROWNIAN_STREAM, 3).standard_normal(10)
        np.testing.assert_array_equal(a, b)

    def test_addresses_are_distinct(self):
        base = generator(7, BROWNIAN_STREAM, 3).standard_normal(10)
        assert not np.array_equal(base, generator(8, BROWNIAN_STREAM, 3).standard_normal(10))
        assert not np.array_equal(base, generator(7, INITIAL_STREAM, 3).standard_normal(10))
        assert not np.array_equal(base, generator(7, BROWNIAN_STREAM, 4).standard_normal(10))

    def test_row_depends_only_on_label(self):
        streams = CounterStreams(11)
        full = streams.normals(np.arange(10), step=5)
        subset = streams.normals(np.array([7, 2]), step=5)
        np.testing.assert_array_equal(subset, full[[7, 2]])

    def test_permuted_labels_permute_rows(self):
        streams = CounterStreams(3)
        order = np.array([4, 0, 3, 1, 2])
        np.testing.assert_array_equal(
            streams.normals(order, step=0), streams.normals(np.arange(5), step=0)[order]
        )

    def test_brownian_increment_scale(self):
        streams = CounterStreams(1)
        labels = np.arange(20000)
        increments = streams.brownian_increment(labels, step=0, dt=0.01)
        assert increments.shape == (20000, 3)
        assert abs(np.var(increments) / 0.01 - 1.0) < 0.03

    def test_empty_labels(self):
        assert CounterStreams(0).normals(np.array([], dtype=np.int64), step=0).shape == (0, 3)

    def test_initial_draws_are_reproducible(self):
        n1, u1 = CounterStreams(5).initial(16)
        n2, u2 = CounterStreams(5).initial(16)
        np.testing.assert_array_equal(n1, n2)
        np.testing.assert_array_equal(u1, u2)
        assert np.all((u1 >= 0.0) & (u1 < 1.0))
