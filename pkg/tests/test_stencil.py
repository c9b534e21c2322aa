import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pic_mma.assembler import assemble
from pic_mma.geometry import Grid, ParticleSet, sort_by_cell
from pic_mma.mma import FP64, TileShape
from pic_mma.oracle import assemble_dense
from pic_mma.stencil import (DENSE_LIMIT, StencilMatrix, build_table, canonical, canonical_offsets,
                             deposit, frobenius_rel_diff, max_rel_diff, offset_index)

GOLDEN = Path(__file__).parent / "golden"

# single particle, 1D CIC, cell 2, xi = 0.25, q = 2: block 2 * outer((0.75, 0.25))
BLOCK_1D = np.array([[1.125, 0.375], [0.375, 0.125]])


@pytest.mark.parametrize("delta, expect", [
    ((0, 0, 0), ((0, 0, 0), False)),
    ((-1, 0, 2), ((1, 0, -2), True)),
    ((2,), ((2,), False)),
    ((0, -1), ((0, 1), True)),
])
def test_canonical(delta, expect):
    assert canonical(delta, 2) == expect


def test_canonical_range():
    with pytest.raises(ValueError):
        canonical((3,), 1)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-4, 4), min_size=1, max_size=3))
def test_canonical_pairs(delta):
    c1, f1 = canonical(delta, 2)
    c2, f2 = canonical([-v for v in delta], 2)
    assert c1 == c2
    assert f1 != f2 or not any(delta)


def test_canonical_offsets_rule():
    for n in (1, 2):
        for d in (1, 2, 3):
            offs = canonical_offsets(n, d)
            assert np.abs(offs).max() <= n
            assert len({tuple(o) for o in offs} | {tuple(-o) for o in offs}) == (2 * n + 1) ** d


def test_build_table_1d_cic():
    t = build_table(1, 1, [[0]])
    assert list(zip(t.a, t.b)) == [(0, 0), (0, 1), (1, 1)]
    offs = canonical_offsets(1, 1)
    assert [tuple(offs[k]) for k in t.offset] == [(0,), (1,), (0,)]
    assert t.anchor[0, :, 0].tolist() == [0, 0, 1]
    assert not t.transposed.any()


@pytest.mark.parametrize("n, d, n_canonical", [(1, 3, 14), (2, 3, 63)])
def test_build_table_references_every_canonical_offset(n, d, n_canonical):
    from pic_mma.shape import group_base, n_groups
    t = build_table(n, d, [group_base(n, d, g) for g in range(n_groups(n, d))])
    # offsets within one support span {-n..n}^d, all canonical ones are reached
    assert len(set(t.offset.tolist())) == n_canonical
    assert t.n_pairs == ((n + 1) ** d) * ((n + 1) ** d + 1) // 2


def single_particle_store():
    grid = Grid((8,))
    store = StencilMatrix(grid, 1)
    deposit(store, np.array([2]), BLOCK_1D, build_table(1, 1, [[0]]), sigma=1.0)
    return store


def test_deposit_example():
    store = single_particle_store()
    k0, k1 = offset_index(1, [[0], [1]])
    nz = {(int(g), int(k)): v for (g, k, _), v in np.ndenumerate(store.values) if v}
    assert nz == {(2, k0): 1.125, (2, k1): 0.375, (3, k0): 0.125}


def test_deposit_zero_block_and_padding_ignored():
    store = StencilMatrix(Grid((4,)), 1)
    table = build_table(1, 1, [[0]])
    deposit(store, np.array([1]), np.zeros((2, 2)), table)
    assert not store.values.any()
    padded = np.full((1, 8, 8), 99.0)
    padded[0, :2, :2] = BLOCK_1D
    deposit(store, np.array([1]), padded, table)
    np.testing.assert_array_equal(store.to_dense()[0][1:3, 1:3], BLOCK_1D)


def test_two_deposits_sum():
    store = single_particle_store()
    deposit(store, np.array([3]), BLOCK_1D, build_table(1, 1, [[0]]))
    assert store.lookup(3, 3) == 0.125 + 1.125


def test_lookup():
    store = single_particle_store()
    assert store.lookup(2, 3) == store.lookup(3, 2) == 0.375
    assert store.lookup(2, 2) == store.values[2, offset_index(1, [0]), 0]
    assert store.lookup(0, 5) == 0.0


def test_to_dense_guard_and_empty():
    assert not StencilMatrix(Grid((4, 4)), 2).to_dense().any()
    with pytest.raises(ValueError):
        StencilMatrix(Grid((DENSE_LIMIT + 1,)), 1).to_dense()


def _random(grid, order, kind, ppc, seed):
    rng = np.random.default_rng(seed)
    P = ppc * grid.n_cells
    ps = ParticleSet(rng.random((P, grid.ndim)) * grid.length, rng.uniform(0.5, 1.5, P),
                     rng.uniform(-1, 1, (P, 3)) if kind == "tensorial" else None)
    return sort_by_cell(ps, grid)[0]


def test_dense_matches_explicit_product_1d():
    grid = Grid((4,))
    ps = _random(grid, 1, "scalar", 3, 0)
    M = assemble(ps, grid, 1)
    np.testing.assert_allclose(M.to_dense(), assemble_dense(ps, grid, 1), rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("dims, order, kind", [
    ((4,), 1, "scalar"), ((3,), 2, "scalar"), ((5, 5), 2, "tensorial"),
    ((3, 4, 3), 2, "scalar"), ((2, 2, 2), 1, "tensorial"), ((6, 7), 1, "scalar"),
])
def test_dense_matches_periodic_oracle(dims, order, kind):
    grid = Grid(dims)
    ps = _random(grid, order, kind, 4, 1)
    M = assemble(ps, grid, order, TileShape(8, 8, 4), FP64, kind)
    dense = M.to_dense()
    ref = assemble_dense(ps, grid, order, kind)
    np.testing.assert_allclose(dense, ref, rtol=0, atol=1e-13 * np.abs(ref).max())
    # lookup agrees with the dense view
    rng = np.random.default_rng(2)
    for g, g2 in rng.integers(0, grid.n_nodes, size=(40, 2)):
        for c in range(M.n_components):
            assert M.lookup(g, g2, c) == pytest.approx(dense[c, g, g2], abs=1e-14)


@pytest.mark.parametrize("order, d", [(1, 2), (2, 2), (1, 3), (2, 3)])
def test_row_sparsity(order, d):
    grid = Grid((6,) * d)
    dense = assemble(_random(grid, order, "scalar", 2, 3), grid, order).to_dense()[0]
    assert np.count_nonzero(dense, axis=1).max() <= (2 * order + 1) ** d


def test_component_sums_and_frobenius():
    grid = Grid((5, 5))
    ps = _random(grid, 2, "tensorial", 3, 4)
    M = assemble(ps, grid, 2, TileShape(16, 16, 8), FP64, "tensorial")
    dense = M.to_dense()
    np.testing.assert_allclose(M.component_sums(), dense.sum(axis=(1, 2)), rtol=1e-13)
    assert M.frobenius() == pytest.approx(np.linalg.norm(dense), rel=1e-13)
    assert max_rel_diff(M, M) == 0 and frobenius_rel_diff(M, M) == 0


def test_iadd_and_copy():
    a = single_particle_store()
    b = a.copy()
    b += a
    np.testing.assert_array_equal(b.values, 2 * a.values)
    assert not a.zeros_like().values.any()


def test_json_roundtrip():
    grid = Grid((4, 3), (0.5, 2.0))
    M = assemble(_random(grid, 2, "tensorial", 2, 5), grid, 2, TileShape(16, 16, 8), FP64,
                 "tensorial")
    back = StencilMatrix.from_json(M.to_json())
    assert back.grid == M.grid and back.order == 2 and back.n_components == 9
    np.testing.assert_array_equal(back.values, M.values)


def test_json_rejects_wrong_offsets():
    data = single_particle_store().to_dict()
    data["offsets"] = [[1], [0]]
    with pytest.raises(ValueError):
        StencilMatrix.from_dict(data)


def test_golden_file():
    store = single_particle_store()
    golden = json.loads((GOLDEN / "cic_1d_single_particle.json").read_text())
    assert store.to_dict() == golden
