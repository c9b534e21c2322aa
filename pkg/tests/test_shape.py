import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pic_mma.geometry import CellLocation
from pic_mma.shape import (bspline_1d, group_base, group_id, n_groups, node_offsets,
                           support_base, weights)


def loc(frac):
    frac = np.atleast_2d(np.asarray(frac, dtype=float))
    return CellLocation(cell=np.zeros(frac.shape, dtype=np.int64), frac=frac)


@pytest.mark.parametrize("n, t, expect", [
    (1, 0.0, 1.0), (1, 0.25, 0.75), (1, -1.0, 0.0), (1, 1.5, 0.0),
    (2, 0.0, 0.75), (2, 1.0, 0.125), (2, -0.5, 0.5), (2, 1.5, 0.0), (2, 2.0, 0.0),
])
def test_bspline_values(n, t, expect):
    assert bspline_1d(n, t) == expect


@pytest.mark.parametrize("n", [0, 3])
def test_bspline_unsupported(n):
    with pytest.raises(ValueError):
        bspline_1d(n, 0.0)


def test_tsc_pieces_continuous_at_half():
    assert bspline_1d(2, np.nextafter(0.5, 0)) == pytest.approx(bspline_1d(2, 0.5), abs=1e-15)


@pytest.mark.parametrize("n, xi, base", [(2, 0.3, -1), (2, 0.7, 0), (2, 0.5, 0), (1, 0.3, 0), (1, 0.9, 0)])
def test_support_base(n, xi, base):
    assert support_base(n, xi) == base


@pytest.mark.parametrize("n, frac, expect", [
    (1, [0.25], [0.75, 0.25]),
    (2, [0.0], [0.125, 0.75, 0.125]),
    (1, [0.25, 0.5], [0.375, 0.375, 0.125, 0.125]),
])
def test_weights_examples(n, frac, expect):
    ws = weights(n, loc(frac))
    np.testing.assert_allclose(ws.weights[0], expect, rtol=0, atol=1e-16)


def test_tsc_base_in_weights():
    assert weights(2, loc([0.0])).base[0, 0] == -1


@pytest.mark.parametrize("n, d, frac, gamma", [
    (1, 2, [0.9, 0.1], 0),
    (2, 2, [0.3, 0.3], 0),
    (2, 3, [0.7, 0.3, 0.7], 5),
    (2, 3, [0.5, 0.5, 0.5], 7),
])
def test_group_id(n, d, frac, gamma):
    assert group_id(n, loc(frac))[0] == gamma


def test_group_base_inverts_group_id():
    for d in (1, 2, 3):
        assert n_groups(2, d) == 2 ** d
        for g in range(2 ** d):
            b = group_base(2, d, g)
            frac = np.where(b == 0, 0.75, 0.25)
            assert group_id(2, loc(frac))[0] == g
    assert n_groups(1, 3) == 1


def test_node_offsets_lexicographic():
    offs = node_offsets(2, 2)
    assert offs.tolist() == [[i, j] for i in range(3) for j in range(3)]
    assert not offs.flags.writeable


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("d", [1, 2, 3])
def test_partition_of_unity(n, d):
    rng = np.random.default_rng(10 * n + d)
    w = weights(n, loc(rng.random((10_000, d)))).weights
    assert w.shape == (10_000, (n + 1) ** d)
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, rtol=0, atol=1e-14)


def test_tsc_weights_vanish_outside_window():
    rng = np.random.default_rng(3)
    frac = rng.random(1000)
    base = support_base(2, frac)
    # window is base .. base + 2; check the first node beyond either side
    for node in (base - 1, base + 3):
        assert np.all(bspline_1d(2, frac - node) == 0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1, exclude_max=True))
def test_cic_reflection(xi):
    a = weights(1, loc([xi])).weights[0]
    b = weights(1, loc([1 - xi])).weights[0] if xi > 0 else np.array([0.0, 1.0])
    np.testing.assert_allclose(a[::-1], b, atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 0.5, exclude_max=True, exclude_min=True))
def test_tsc_reflection(xi):
    # xi in the lower half, 1 - xi in the upper half: supports mirror
    a = weights(2, loc([xi])).weights[0]
    b = weights(2, loc([1 - xi])).weights[0]
    np.testing.assert_allclose(a[::-1], b, atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1, exclude_max=True), min_size=6, max_size=6))
def test_group_equality_iff_same_support(v):
    f1, f2 = np.array(v[:3]), np.array(v[3:])
    same_group = group_id(2, loc(f1))[0] == group_id(2, loc(f2))[0]
    same_base = np.array_equal(support_base(2, f1), support_base(2, f2))
    assert same_group == same_base
