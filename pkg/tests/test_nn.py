import numpy as np
import pytest

from gradient_cases import PRIMITIVE_CASES
from singsynth import nn
from singsynth.exceptions import FormatError, ShapeError
from singsynth.nn import BiLSTM, Linear, Parameter, Tensor, adam_step, grad_check


def _run_case(build, seed):
    out = build(np.random.default_rng(seed))
    f, params = out[0], out[1]
    scale = out[2] if len(out) > 2 else 1.0
    return grad_check(f, params, scale=scale)


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_gradients(name):
    worst = max(_run_case(PRIMITIVE_CASES[name], seed) for seed in range(20))
    assert worst < 1e-4, f"{name}: {worst:.2e}"


def test_matmul_gradient_tight():
    rng = np.random.default_rng(7)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)))
    upstream = rng.normal(size=(3, 2))
    f = lambda: nn.sum(nn.mul(nn.matmul(a, b), upstream))  # noqa: E731
    assert grad_check(f, [a], floor=1e-12) < 1e-6
    a.grad = None
    f().backward()
    assert np.allclose(a.grad, upstream @ b.data.T)


def test_layer_norm_constant_vector():
    bias = np.array([0.5, -1.0, 2.0])
    out = nn.layer_norm(np.full(3, 4.2), np.array([3.0, 1.0, 7.0]), bias)
    assert np.allclose(out.data, bias)


@pytest.mark.parametrize("k", [2, 5, 11])
def test_softmax_ce_uniform(k):
    for label in range(k):
        assert np.isclose(nn.softmax_cross_entropy(np.full(k, 0.3), label).item(), np.log(k))


class TestGradientReverse:
    def test_forward_identity(self):
        x = np.random.default_rng(0).normal(size=(4, 3))
        assert np.array_equal(nn.gradient_reverse(x, 0.02).data, x)

    def test_backward_scaling(self):
        x = Tensor(np.ones((2, 3)), requires_grad=True)
        g = np.arange(6.0).reshape(2, 3)
        nn.gradient_reverse(x, 0.02).backward(g)
        assert np.allclose(x.grad, -0.02 * g)

    def test_lambda_zero_blocks(self):
        x = Tensor(np.ones(3), requires_grad=True)
        nn.sum(nn.gradient_reverse(x, 0.0)).backward()
        assert np.all(x.grad == 0)

    def test_double_reversal(self):
        x = Tensor(np.ones(3), requires_grad=True)
        g = np.array([1.0, -2.0, 3.0])
        nn.gradient_reverse(nn.gradient_reverse(x, 0.5), 0.3).backward(g)
        assert np.allclose(x.grad, 0.15 * g)

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            nn.gradient_reverse(np.ones(2), -1.0)


class TestBiLSTM:
    def test_single_step(self):
        rng = np.random.default_rng(0)
        m = BiLSTM(3, 4, 1, rng)
        x = rng.normal(size=(1, 3))
        out = m(x).data
        f = nn.lstm(x, m.layers[0].fwd.w_ih, m.layers[0].fwd.w_hh, m.layers[0].fwd.b).data
        b = nn.lstm(x, m.layers[0].bwd.w_ih, m.layers[0].bwd.w_hh, m.layers[0].bwd.b).data
        assert out.shape == (1, 8)
        assert np.allclose(out, np.hstack([f, b]))

    @pytest.mark.parametrize("seed", range(5))
    def test_reversal_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        m = BiLSTM(3, 4, 1, rng)
        layer = m.layers[0]
        for name in ("w_ih", "w_hh", "b"):
            getattr(layer.bwd, name).data = getattr(layer.fwd, name).data.copy()
        x = rng.normal(size=(6, 3))
        out, rev = m(x).data, m(x[::-1]).data
        assert np.allclose(rev[:, :4], out[::-1, 4:])
        assert np.allclose(rev[:, 4:], out[::-1, :4])

    def test_stacked_shapes_and_gradients(self):
        rng = np.random.default_rng(1)
        m = BiLSTM(2, 3, 2, rng)
        x = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        w = rng.normal(size=(3, 6))
        f = lambda: nn.sum(nn.mul(m(x), w))  # noqa: E731
        assert m(x).shape == (3, 6)
        assert grad_check(f, [x] + m.parameters()) < 1e-5

    def test_forget_bias(self):
        m = BiLSTM(2, 3, 1, np.random.default_rng(0))
        b = m.layers[0].fwd.b.data
        assert np.all(b[3:6] > 0.4)

    def test_empty(self):
        with pytest.raises(ValueError):
            nn.bilstm(np.zeros((0, 2)), 1, 2)


class TestAdam:
    def test_zero_gradient(self):
        p = Parameter(np.array([1.0, -2.0]))
        p.grad = np.zeros(2)
        adam_step([p], lr=0.1)
        assert np.array_equal(p.data, [1.0, -2.0])

    def test_descent(self):
        w = Parameter(np.array(1.0))
        nn.mul(w, w).backward()
        adam_step([w], lr=0.1)
        assert w.data < 1.0

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(42)
            lin = Linear(3, 2, rng)
            x = rng.normal(size=(5, 3))
            for _ in range(10):
                lin.zero_grad()
                nn.mean(nn.mul(lin(x), lin(x))).backward()
                adam_step(lin.parameters(), lr=0.01)
            return lin.state_dict()

        a, b = run(), run()
        assert all(np.array_equal(a[k], b[k]) for k in a)


def test_tape_replay_deterministic():
    def loss(seed):
        rng = np.random.default_rng(seed)
        block = nn.FFTBlock(8, 2, 3, 16, rng)
        return nn.mean(block(rng.normal(size=(7, 8)))).item()

    assert loss(3) == loss(3)


def test_shape_errors_name_the_op():
    with pytest.raises(ShapeError, match="matmul"):
        nn.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError, match="conv1d"):
        nn.conv1d(np.ones((4, 3)), np.ones((3, 2, 2)))
    with pytest.raises(ShapeError, match="add"):
        nn.add(np.ones(3), np.ones(4))


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    block = nn.FFTBlock(8, 2, 3, 16, rng)
    nn.save_checkpoint(tmp_path / "m.ckpt", block.state_dict(), {"kind": "test"})
    assert (tmp_path / "m.ckpt").read_bytes()[:7] == b"WSCKPT1"
    meta, state = nn.load_checkpoint(tmp_path / "m.ckpt")
    assert meta == {"kind": "test"}
    other = nn.FFTBlock(8, 2, 3, 16, np.random.default_rng(1))
    other.load_state_dict(state)
    for (n1, p1), (n2, p2) in zip(block.named_parameters(), other.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.data.astype(np.float32), p2.data)
    with pytest.raises(FormatError, match="shape"):
        nn.FFTBlock(8, 2, 5, 16, rng).load_state_dict(state)
    with pytest.raises(FormatError, match="missing"):
        nn.FFTBlock(8, 2, 3, 16, rng).load_state_dict({})
