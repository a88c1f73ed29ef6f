"""Tests for quantile binning, transition matrices and Markov transition fields."""

import itertools

import numpy as np
import pytest

from app.services.mtf_encoder import (
    encode_window,
    encode_windows,
    markov_transition_field,
    quantile_bins,
    transition_matrix,
)
from app.utils.error_handler import InvalidParameterError


def _reference_field(x, q):
    """Loop-based field used as an oracle."""
    n = len(x)
    order = sorted(range(n), key=lambda i: (x[i], i))
    bins = [0] * n
    for rank, i in enumerate(order):
        bins[i] = rank * q // n
    counts = [[0.0] * q for _ in range(q)]
    for a, b in zip(bins, bins[1:]):
        counts[a][b] += 1
    field = np.zeros((n, n))
    for k1 in range(n):
        total = sum(counts[bins[k1]])
        for k2 in range(n):
            field[k1, k2] = counts[bins[k1]][bins[k2]] / total if total else 0.0
    return field


# ============================================================================
# Quantile bins
# ============================================================================


def test_quantile_bins_by_rank():
    """Test that bins follow value rank."""
    np.testing.assert_array_equal(quantile_bins([4.0, 1.0, 3.0, 2.0], 2), [2, 1, 2, 1])
    np.testing.assert_array_equal(quantile_bins([3.0, 1.0, 2.0], 3), [3, 1, 2])


def test_quantile_bins_constant_input_is_balanced():
    """Test that ties break by index so a constant input still fills every bin."""
    np.testing.assert_array_equal(quantile_bins(np.full(7, 5.0), 3), [1, 1, 1, 2, 2, 3, 3])


def test_quantile_bins_population_is_balanced(rng):
    """Test that every bin holds floor(n/q) or ceil(n/q) samples."""
    for n, q in [(120, 8), (100, 7), (60, 16), (9, 9)]:
        bins = quantile_bins(rng.normal(size=n), q)
        sizes = np.bincount(bins, minlength=q + 1)[1:]
        assert sizes.min() >= n // q
        assert sizes.max() <= -(-n // q)


@pytest.mark.parametrize("values, q", [([1.0, 2.0, 3.0], 1), ([1.0, 2.0], 3), ([1.0, np.nan, 2.0], 2)])
def test_quantile_bins_rejects_invalid_input(values, q):
    """Test that q outside [2, n] or non-finite values are rejected."""
    with pytest.raises(InvalidParameterError):
        quantile_bins(values, q)


# ============================================================================
# Transition matrix
# ============================================================================


@pytest.mark.parametrize(
    "bins, q, expected",
    [
        ([1, 2, 1, 2], 2, [[0.0, 1.0], [1.0, 0.0]]),
        ([1, 1, 1], 2, [[1.0, 0.0], [0.0, 0.0]]),
        ([1, 1, 2, 2], 2, [[0.5, 0.5], [0.0, 1.0]]),
    ],
)
def test_transition_matrix_examples(bins, q, expected):
    """Test that rows hold conditional next-bin frequencies and unvisited rows stay zero."""
    np.testing.assert_allclose(transition_matrix(bins, q).matrix, expected)


def test_transition_matrix_rows_are_stochastic(rng):
    """Test that every visited row sums to 1."""
    tm = transition_matrix(rng.integers(1, 6, size=200), 5)

    sums = tm.matrix.sum(axis=1)
    np.testing.assert_allclose(sums[tm.source_counts > 0], 1.0)
    assert tm.q == 5


def test_transition_matrix_rejects_bad_labels():
    """Test that labels outside 1..q and too-short inputs are rejected."""
    with pytest.raises(InvalidParameterError):
        transition_matrix([1, 3], 2)
    with pytest.raises(InvalidParameterError):
        transition_matrix([1], 2)


# ============================================================================
# Markov transition field
# ============================================================================


def test_field_of_alternating_sequence():
    """Test that an alternating sequence gives a checkerboard field."""
    expected = np.array([[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]], dtype=float)

    np.testing.assert_array_equal(markov_transition_field([1.0, 2.0, 1.0, 2.0], 2), expected)


def test_field_matches_loop_oracle_exhaustively():
    """Test that every sequence over {1,2,3} of length 2..6 matches the loop oracle."""
    for n in range(2, 7):
        for x in itertools.product([1.0, 2.0, 3.0], repeat=n):
            for q in (2, 3):
                if q > n:
                    continue
                np.testing.assert_allclose(markov_transition_field(x, q), _reference_field(list(x), q))


def test_field_properties_on_random_windows(rng):
    """Test that fields are n x n, bounded in [0, 1] and rows use only bin-shared values."""
    for _ in range(50):
        n = int(rng.integers(8, 130))
        q = int(rng.integers(2, min(n, 16) + 1))
        x = rng.normal(size=n).cumsum()

        field = markov_transition_field(x, q)
        bins = quantile_bins(x, q)

        assert field.shape == (n, n)
        assert field.min() >= 0.0 and field.max() <= 1.0
        same_bin = bins[:, None] == bins[None, :]
        i, j = np.nonzero(same_bin)
        np.testing.assert_array_equal(field[i], field[j])


def test_field_is_invariant_to_monotone_transform(rng):
    """Test that a strictly increasing map of the input leaves the field unchanged."""
    x = rng.normal(size=60)

    np.testing.assert_array_equal(markov_transition_field(x, 8), markov_transition_field(np.exp(x) * 3 + 1, 8))


# ============================================================================
# Window encoding
# ============================================================================


@pytest.mark.parametrize("n", [120, 60])
def test_encode_window_shape_and_channels(make_window, n):
    """Test that both channels are encoded independently into an (n, n, 2) float32 graph."""
    window = make_window(event_id=4, pmu_id="PMU007", n=n)

    graph = encode_window(window, q=8)

    assert graph.data.shape == (n, n, 2)
    assert graph.data.dtype == np.float32
    assert graph.event_id == 4 and graph.pmu_id == "PMU007" and graph.label is window.label
    np.testing.assert_allclose(graph.data[..., 0], markov_transition_field(window.samples_v, 8), rtol=1e-6)
    np.testing.assert_allclose(graph.data[..., 1], markov_transition_field(window.samples_f, 8), rtol=1e-6)


def test_encode_window_with_replaced_samples(make_window):
    """Test that replacement samples give a graph over the remaining samples."""
    window = make_window()

    graph = encode_window(window, 8, samples_v=window.samples_v[:90], samples_f=window.samples_f[:90])

    assert graph.n == 90


def test_encode_window_rejects_mismatched_channels(make_window):
    """Test that channels of different length are rejected."""
    window = make_window()

    with pytest.raises(InvalidParameterError):
        encode_window(window, 8, samples_v=window.samples_v[:90])


def test_encode_windows_keeps_order(make_window):
    """Test that batch encoding preserves window order."""
    windows = [make_window(event_id=i, seed=i) for i in range(3)]

    assert [g.event_id for g in encode_windows(windows)] == [0, 1, 2]
