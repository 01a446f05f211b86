import numpy as np
import pytest

from teunroll.nn import engine as en
from teunroll.nn.engine import Tape, Tensor
from teunroll.nn.networks import ResNetProx, complex_to_channels


RNG = np.random.default_rng(1234)


def analytic_grad(fn, x_data):
    """Gradient of sum(fn(x) * probe) via the tape."""
    probe = RNG.standard_normal(fn(Tensor(x_data)).shape)
    x = Tensor(x_data.copy(), requires_grad=True)
    with Tape() as tape:
        loss = en.sum_all(en.mul(fn(x), Tensor(probe)))
    tape.backward(loss)
    return x.grad, probe


def fd_grad(fn, x_data, probe, coords, h=1e-5):
    numeric = {}
    for ix in coords:
        xp = x_data.copy()
        xm = x_data.copy()
        xp[ix] += h
        xm[ix] -= h
        fp = float(np.sum(fn(Tensor(xp)).data * probe))
        fm = float(np.sum(fn(Tensor(xm)).data * probe))
        numeric[ix] = (fp - fm) / (2 * h)
    return numeric


def check_op(fn, x_data, rel_tol=1e-6, n_coords=8):
    grads, probe = analytic_grad(fn, x_data)
    coords = [
        np.unravel_index(i, x_data.shape)
        for i in RNG.choice(x_data.size, size=min(n_coords, x_data.size), replace=False)
    ]
    numeric = fd_grad(fn, x_data, probe, coords)
    for ix, num in numeric.items():
        scale = max(abs(num), abs(grads[ix]), 1e-4)
        assert abs(num - grads[ix]) / scale <= rel_tol, f"coord {ix}: {num} vs {grads[ix]}"


def test_square_scalar_gradient():
    w = Tensor(np.float64(3.0), requires_grad=True)
    with Tape() as tape:
        loss = en.mul(w, w)
    tape.backward(loss)
    assert w.grad == pytest.approx(6.0)


W_CONV = RNG.standard_normal((3, 4, 3, 3)) * 0.4
W_CONV1 = RNG.standard_normal((5, 4, 1, 1)) * 0.4
M_MAT = RNG.standard_normal((6, 10))
D_CONST = np.abs(RNG.standard_normal((4, 5))) + 1.5
SYM = RNG.standard_normal((7, 7))
SYM = SYM + SYM.T

OPS = {
    "add": (lambda x: en.add(x, Tensor(RNG_CONST := 2.5)), (4, 5)),
    "add_broadcast": (lambda x: en.add(x, Tensor(np.arange(5.0))), (4, 5)),
    "sub": (lambda x: en.sub(Tensor(np.ones((4, 5))), x), (4, 5)),
    "neg": (lambda x: en.neg(x), (4, 5)),
    "mul": (lambda x: en.mul(x, Tensor(D_CONST)), (4, 5)),
    "mul_scalar_broadcast": (lambda x: en.mul(Tensor(np.float64(1.7)), x), (4, 5)),
    "div": (lambda x: en.div(x, Tensor(D_CONST)), (4, 5)),
    "matmul_vec": (lambda x: en.matmul(Tensor(M_MAT), x), (10,)),
    "matmul_mat": (lambda x: en.matmul(Tensor(M_MAT), x), (10, 3)),
    "relu": (lambda x: en.relu(x), (4, 5)),
    "silu": (lambda x: en.silu(x), (4, 5)),
    "mean": (lambda x: en.mean(x), (4, 5)),
    "sum": (lambda x: en.sum_all(x), (4, 5)),
    "mse": (lambda x: en.mse(x, Tensor(np.ones((4, 5)))), (4, 5)),
    "reshape": (lambda x: en.reshape(x, (20,)), (4, 5)),
    "concat": (lambda x: en.concat([x, en.mul(x, Tensor(2.0))], axis=0), (2, 4, 4)),
    "conv2d_3x3": (lambda x: en.conv2d(x, Tensor(W_CONV)), (4, 6, 6)),
    "conv2d_1x1": (lambda x: en.conv2d(x, Tensor(W_CONV1), kernel=1), (4, 6, 6)),
    "group_norm": (lambda x: en.group_norm(x, 2), (4, 6, 6)),
    "avg_pool2": (lambda x: en.avg_pool2(x), (3, 8, 8)),
    "upsample_nearest2": (lambda x: en.upsample_nearest2(x), (3, 4, 4)),
    "linear_selfadjoint": (lambda x: en.linear_selfadjoint(x, lambda v: SYM @ v), (7,)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_primitive_gradients_match_finite_differences(name):
    fn, shape = OPS[name]
    check_op(fn, RNG.standard_normal(shape))


def test_conv2d_weight_and_bias_gradients():
    x0 = RNG.standard_normal((2, 5, 5))
    w = Tensor(RNG.standard_normal((3, 2, 3, 3)) * 0.3, requires_grad=True)
    b = Tensor(np.zeros(3), requires_grad=True)
    probe = RNG.standard_normal((3, 5, 5))
    with Tape() as tape:
        loss = en.sum_all(en.mul(en.conv2d(Tensor(x0), w, b), Tensor(probe)))
    tape.backward(loss)
    h = 1e-5
    for tensor in (w, b):
        flat_idx = RNG.choice(tensor.data.size, size=min(4, tensor.data.size), replace=False)
        for i in flat_idx:
            ix = np.unravel_index(i, tensor.data.shape)
            saved = tensor.data[ix]
            tensor.data[ix] = saved + h
            fp = float(np.sum(en.conv2d(Tensor(x0), Tensor(w.data), Tensor(b.data)).data * probe))
            tensor.data[ix] = saved - h
            fm = float(np.sum(en.conv2d(Tensor(x0), Tensor(w.data), Tensor(b.data)).data * probe))
            tensor.data[ix] = saved
            num = (fp - fm) / (2 * h)
            scale = max(abs(num), abs(tensor.grad[ix]), 1e-4)
            assert abs(num - tensor.grad[ix]) / scale <= 1e-6


def test_matmul_parameter_gradient():
    w = Tensor(RNG.standard_normal((3, 5)), requires_grad=True)
    x = RNG.standard_normal(5)
    probe = RNG.standard_normal(3)
    with Tape() as tape:
        loss = en.sum_all(en.mul(en.matmul(w, Tensor(x)), Tensor(probe)))
    tape.backward(loss)
    np.testing.assert_allclose(w.grad, np.outer(probe, x), atol=1e-12)


def test_whole_toy_network_gradient_matches_finite_differences():
    net = ResNetProx(blocks=2, channels=8, time_embedded=True, seed=0)
    # zero-initialized FiLM heads would hide the head gradients; perturb them
    rng = np.random.default_rng(7)
    for name, t in net.parameters().items():
        if ".film." in name and name.endswith(".w"):
            t.data = rng.standard_normal(t.data.shape) * 0.05
    img = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    x2 = complex_to_channels(img)
    target = rng.standard_normal((2, 8, 8))

    def loss_value():
        out = net.forward(Tensor(x2), t=3)
        return float(np.mean((out.data - target) ** 2))

    params = net.parameters()
    for t in params.values():
        t.grad = None
    with Tape() as tape:
        out = net.forward(Tensor(x2), t=3)
        loss = en.mse(out, Tensor(target))
    tape.backward(loss)

    names = list(params)
    h = 1e-5
    checked = 0
    rng2 = np.random.default_rng(8)
    while checked < 50:
        name = names[int(rng2.integers(len(names)))]
        tensor = params[name]
        if tensor.grad is None:
            continue
        ix = np.unravel_index(int(rng2.integers(tensor.data.size)), tensor.data.shape)
        saved = tensor.data[ix]
        tensor.data[ix] = saved + h
        fp = loss_value()
        tensor.data[ix] = saved - h
        fm = loss_value()
        tensor.data[ix] = saved
        num = (fp - fm) / (2 * h)
        scale = max(abs(num), abs(tensor.grad[ix]), 1e-4)
        assert abs(num - tensor.grad[ix]) / scale <= 1e-5, name
        checked += 1


def test_backward_requires_scalar_connected_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = en.mul(x, x)
    with pytest.raises(ValueError):
        tape.backward(y)  # non-scalar
    with Tape() as tape:
        pass
    detached = Tensor(np.float64(1.0))
    with pytest.raises(ValueError):
        tape.backward(detached)


def test_no_tape_runs_eagerly_without_graph():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    out = en.mul(x, x)
    assert out.backward_rule is None
    assert out.parents == ()


def test_gradient_accumulates_across_reuse():
    x = Tensor(np.float64(2.0), requires_grad=True)
    with Tape() as tape:
        loss = en.add(en.mul(x, x), en.mul(Tensor(3.0), x))  # x^2 + 3x
    tape.backward(loss)
    assert x.grad == pytest.approx(7.0)
