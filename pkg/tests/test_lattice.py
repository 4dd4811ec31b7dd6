import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from marsnet.lattice import (
    AffinePiece,
    LatticePwl,
    affine_network,
    compile_lattice,
    eval_lattice,
    max_affine_eval,
    max_gadget,
    min_gadget,
    stack_parallel,
)


def random_lattice(rng, m_max=8, s_max=8, d_max=4):
    d = int(rng.integers(1, d_max + 1))
    n_pieces = int(rng.integers(1, 2 * s_max))
    pieces = [AffinePiece(tuple(rng.uniform(-2, 2, d + 1))) for _ in range(n_pieces)]
    groups = [list(rng.integers(0, n_pieces, int(rng.integers(1, s_max + 1))))
              for _ in range(int(rng.integers(1, m_max + 1)))]
    return LatticePwl(d, pieces, groups)


def _x_net(sign=1.0):
    return affine_network([[0.0, sign]])


def test_eval_lattice_examples():
    assert eval_lattice(LatticePwl(1, [AffinePiece((0.5, 2.0))], [[0]]), [3.0]) == 6.5
    abs_lat = LatticePwl(1, [(0.0, 1.0), (0.0, -1.0)], [[0, 1]])
    assert eval_lattice(abs_lat, [-2.0]) == 2.0
    clamp = LatticePwl(1, [(0.0, 1.0), (2.0, 0.0)], [[0], [1]])
    assert eval_lattice(clamp, [5.0]) == 2.0
    with pytest.raises(ValueError):
        eval_lattice(clamp, [1.0, 2.0])


def test_max_affine_examples():
    assert max_affine_eval([AffinePiece((1.0, 2.0))], [3.0]) == 7.0
    assert max_affine_eval([AffinePiece((0.0, 1.0)), AffinePiece((0.0, 0.0))], [-1.0]) == 0.0
    with pytest.raises(ValueError):
        max_affine_eval([], [1.0])


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=1, max_size=10), st.floats(-10, 10))
def test_max_affine_dominates(thetas, x):
    pieces = [AffinePiece(t) for t in thetas]
    v = max_affine_eval(pieces, [x])
    assert all(v >= p([x]) for p in pieces)


def test_lattice_validation():
    with pytest.raises(ValueError):
        LatticePwl(1, [(0.0, 1.0)], [])
    with pytest.raises(ValueError):
        LatticePwl(1, [(0.0, 1.0)], [[]])
    with pytest.raises(ValueError):
        LatticePwl(1, [(0.0, 1.0)], [[1]])
    with pytest.raises(ValueError):
        LatticePwl(2, [(0.0, 1.0)], [[0]])
    with pytest.raises(ValueError):
        AffinePiece((0.0, float("nan")))


def test_gadgets_on_constants():
    three, five = affine_network([[3.0, 0.0]]), affine_network([[5.0, 0.0]])
    assert max_gadget(three, five).predict([[0.7]])[0, 0] == 5.0
    assert min_gadget(three, five).predict([[0.7]])[0, 0] == 3.0


def test_gadget_identities():
    rng = np.random.default_rng(0)
    x = rng.uniform(-10, 10, size=(1000, 1))
    np.testing.assert_allclose(max_gadget(_x_net(), _x_net()).predict(x)[:100], x[:100], atol=1e-12)
    np.testing.assert_allclose(min_gadget(_x_net(), _x_net()).predict(x)[:100], x[:100], atol=1e-12)
    np.testing.assert_allclose(max_gadget(_x_net(), _x_net(-1)).predict(x)[:, 0], np.abs(x[:, 0]), atol=1e-12)
    a = affine_network([[0.3, 1.5]])
    b = affine_network([[-0.2, -0.7]])
    s = max_gadget(a, b).predict(x)[:, 0] + min_gadget(a, b).predict(x)[:, 0]
    np.testing.assert_allclose(s, a.predict(x)[:, 0] + b.predict(x)[:, 0], atol=1e-12)


def test_gadget_exact_on_dyadic_inputs():
    xs = np.arange(-8, 9, dtype=float)[:, None] / 4
    out = max_gadget(_x_net(), affine_network([[0.5, 0.0]])).predict(xs)[:, 0]
    np.testing.assert_array_equal(out, np.maximum(xs[:, 0], 0.5))


def test_gadget_dimension_mismatch():
    with pytest.raises(ValueError):
        max_gadget(_x_net(), affine_network([[0.0, 1.0, 1.0]]))


def test_gadgets_of_deeper_operands():
    # operands of different depth are padded with passthrough stages
    deep = max_gadget(_x_net(), _x_net(-1))  # |x|
    mixed = min_gadget(deep, affine_network([[1.0, 0.0]]))  # min(|x|, 1)
    x = np.linspace(-3, 3, 101)[:, None]
    np.testing.assert_allclose(mixed.predict(x)[:, 0], np.minimum(np.abs(x[:, 0]), 1.0), atol=1e-12)


def test_stack_parallel_concatenates():
    a, b = affine_network([[1.0, 2.0]]), max_gadget(_x_net(), _x_net(-1))
    both = stack_parallel([a, b])
    x = np.linspace(-1, 1, 9)[:, None]
    np.testing.assert_allclose(both.predict(x), np.column_stack([1 + 2 * x[:, 0], np.abs(x[:, 0])]), atol=1e-12)


def test_single_piece_is_affine():
    net, rep = compile_lattice(LatticePwl(2, [(1.0, 2.0, -1.0)], [[0]]))
    assert rep.gadget_stages == 0 and net.depth == 1
    assert net.predict([[1.0, 1.0]])[0, 0] == 2.0


def test_abs_lattice():
    net, rep = compile_lattice(LatticePwl(1, [(0.0, 1.0), (0.0, -1.0)], [[0, 1]]))
    x = np.random.default_rng(1).uniform(-5, 5, size=(1000, 1))
    np.testing.assert_allclose(net.predict(x)[:, 0], np.abs(x[:, 0]), atol=1e-12)
    assert rep.gadget_stages == 1 and rep.bound == 1


def test_four_groups_of_four():
    rng = np.random.default_rng(2)
    pieces = [AffinePiece(tuple(rng.uniform(-2, 2, 4))) for _ in range(16)]
    lat = LatticePwl(3, pieces, [list(range(4 * i, 4 * i + 4)) for i in range(4)])
    net, rep = compile_lattice(lat)
    x = rng.uniform(-3, 3, size=(1000, 3))
    assert np.max(np.abs(net.predict(x)[:, 0] - lat.evaluate(x))) <= 1e-9
    assert rep.gadget_stages <= 2 + 2


def test_odd_sizes_use_byes():
    lat = LatticePwl(1, [(0.0, 1.0), (1.0, -1.0), (-0.5, 0.5)], [[0, 1, 2], [1]])
    net, rep = compile_lattice(lat)
    x = np.linspace(-4, 4, 333)[:, None]
    np.testing.assert_allclose(net.predict(x)[:, 0], lat.evaluate(x), atol=1e-12)
    assert rep.max_rounds == 2 and rep.min_rounds == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_compiler_soundness(seed):
    rng = np.random.default_rng(seed)
    lat = random_lattice(rng)
    net, rep = compile_lattice(lat)
    x = rng.uniform(-3, 3, size=(1000, lat.d))
    assert np.max(np.abs(net.predict(x)[:, 0] - lat.evaluate(x))) <= 1e-9
    m, s = len(lat.groups), lat.max_group
    assert rep.gadget_stages <= math.ceil(math.log2(m)) + math.ceil(math.log2(s))
    assert rep.affine_layers == rep.gadget_stages + 1


def test_vectorised_eval_matches_scalar():
    rng = np.random.default_rng(3)
    lat = random_lattice(rng)
    x = rng.uniform(-2, 2, size=(50, lat.d))
    np.testing.assert_array_equal(lat.evaluate(x), [eval_lattice(lat, row) for row in x])


def test_lattice_json_round_trip():
    lat = random_lattice(np.random.default_rng(4))
    back = LatticePwl.loads(lat.dumps())
    assert back.to_dict() == lat.to_dict()
    assert set(lat.to_dict()) == {"d", "pieces", "groups"}
