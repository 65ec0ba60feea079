import numpy as np
import pytest
from hypothesis import given, strategies as st

from dodrom import autodiff as ad
from dodrom.autodiff import ShapeError, Tape, Tensor, value_and_grad
from fdcheck import check, param


def test_leaky_relu_values():
    assert np.allclose(ad.leaky_relu(Tensor([2.0, -1.0])).data, [2.0, -0.1])
    assert ad.leaky_relu(Tensor([0.0])).data[0] == 0.0
    assert np.allclose(ad.leaky_relu(Tensor([-10.0, 10.0]), 0.5).data, [-5.0, 10.0])


def test_linear_layer_hand_gradient(rng):
    W = param(rng, 3, 4)
    x = rng.standard_normal((4, 1))

    def loss():
        y = ad.matmul(W, Tensor(x))
        return ad.sum_(y * y) / 2.0

    (g,) = value_and_grad(loss, [W])[1]
    y = W.data @ x
    assert np.allclose(g, y @ x.T, atol=1e-13)


def test_constant_loss_has_zero_gradient(rng):
    W = param(rng, 2, 2)
    val, (g,) = value_and_grad(lambda: Tensor(3.0), [W])
    assert val == 3.0
    assert np.all(g == 0.0)


def test_unreachable_source_gets_zeros(rng):
    a, b = param(rng, 2), param(rng, 3)
    _, (ga, gb) = value_and_grad(lambda: ad.sum_(a * a), [a, b])
    assert np.allclose(ga, 2 * a.data) and np.all(gb == 0.0)


def test_value_and_grad_sets_grad_slot(rng):
    a = param(rng, 3)
    value_and_grad(lambda: ad.sum_(a * a), [a])
    assert np.allclose(a.grad, 2 * a.data)


def test_no_tape_means_no_recording(rng):
    a = param(rng, 3)
    y = ad.sum_(a * a)
    with Tape() as tape:
        pass
    assert not tape._records
    assert y.data == pytest.approx(np.sum(a.data ** 2))


BINARY = [ad.add, ad.sub, ad.mul, ad.div]


@pytest.mark.parametrize("op", BINARY)
@pytest.mark.parametrize("shapes", [((3, 4), (3, 4)), ((3, 4), (4,)), ((2, 3, 4), (3, 1)), ((3, 1), (1, 4))])
def test_binary_broadcast_gradients(op, shapes, rng):
    a = param(rng, *shapes[0])
    b = param(rng, *shapes[1], positive=op is ad.div)
    w = rng.standard_normal(np.broadcast_shapes(*shapes))
    check(lambda: ad.sum_(op(a, b) * Tensor(w)), [a, b])


@pytest.mark.parametrize("sa,sb", [((3, 4), (4, 2)), ((5, 3, 4), (5, 4, 2)), ((5, 3, 4), (4, 2)), ((2, 4), (3, 4, 2))])
def test_matmul_gradients(sa, sb, rng):
    a, b = param(rng, *sa), param(rng, *sb)
    w = rng.standard_normal(np.matmul(a.data, b.data).shape)
    check(lambda: ad.sum_(ad.matmul(a, b) * Tensor(w)), [a, b])


@pytest.mark.parametrize("name", ["neg", "sqrt", "square", "leaky_relu", "transpose", "reshape", "mean",
                                  "sum_axis", "getitem", "stack", "concat", "squared_norm"])
def test_unary_and_structural_gradients(name, rng):
    a = param(rng, 3, 4, positive=name == "sqrt")
    b = param(rng, 3, 4)
    fns = {
        "neg": lambda: ad.neg(a),
        "sqrt": lambda: ad.sqrt(a),
        "square": lambda: ad.square(a),
        "leaky_relu": lambda: ad.leaky_relu(a, 0.1),
        "transpose": lambda: ad.transpose(a),
        "reshape": lambda: ad.reshape(a, (2, 6)),
        "mean": lambda: ad.mean(a, axis=0, keepdims=True),
        "sum_axis": lambda: ad.sum_(a, axis=1),
        "getitem": lambda: ad.getitem(a, (slice(None), [0, 2, 2])),
        "stack": lambda: ad.stack([a, b], axis=2),
        "concat": lambda: ad.concat([a, b], axis=1),
        "squared_norm": lambda: ad.squared_norm(a, axis=0),
    }
    f = fns[name]
    w = rng.standard_normal(f().shape)
    check(lambda: ad.sum_(f() * Tensor(w)), [a, b] if name in ("stack", "concat") else [a])


def test_operator_overloads_match_functions(rng):
    a, b = param(rng, 2, 2), param(rng, 2, 2)
    assert np.array_equal((a + b).data, ad.add(a, b).data)
    assert np.array_equal((a @ b).data, ad.matmul(a, b).data)
    assert np.array_equal((2.0 - a).data, 2.0 - a.data)
    assert np.array_equal((1.0 / (a * a + 1.0)).data, 1.0 / (a.data ** 2 + 1.0))
    assert np.array_equal(a.T.data, a.data.T)


def test_reused_node_accumulates(rng):
    a = param(rng, 4)
    check(lambda: ad.sum_(a * a * a + a), [a])


@pytest.mark.parametrize("build", [
    lambda: ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,)))),
    lambda: ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2)))),
    lambda: ad.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2)))),
    lambda: ad.reshape(Tensor(np.ones((2, 3))), (4, 2)),
    lambda: ad.stack([Tensor(np.ones(2)), Tensor(np.ones(3))]),
])
def test_shape_errors_name_the_primitive(build):
    with pytest.raises(ShapeError) as exc:
        build()
    assert exc.value.primitive in str(exc.value)


def test_gradient_of_non_scalar_rejected(rng):
    a = param(rng, 3)
    with Tape() as tape:
        y = a * 2.0
    with pytest.raises(ShapeError):
        tape.gradient(y, [a])


@given(st.integers(1, 3), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**31 - 1))
def test_random_small_networks_match_finite_differences(depth, width, n_out, seed):
    rng = np.random.default_rng(seed)
    sizes = [3] + [width] * (depth - 1) + [n_out]
    Ws = [param(rng, o, i) for i, o in zip(sizes[:-1], sizes[1:])]
    bs = [param(rng, o) for o in sizes[1:]]
    x = Tensor(rng.standard_normal((5, 3)))

    def loss():
        h = x
        for k, (W, b) in enumerate(zip(Ws, bs)):
            h = ad.matmul(h, ad.transpose(W)) + b
            if k < len(Ws) - 1:
                h = ad.leaky_relu(h)
        return ad.mean(ad.squared_norm(h, axis=1))

    check(loss, Ws + bs)
