import numpy as np
import pytest

from misder import autodiff as ag
from misder.optim import Adam, AdamState, adam_step, grad_check


class TestAdamStep:
    def test_single_step_matches_reference(self):
        # frozen oracle: torch.optim.Adam, float64, lr 1e-3, grad 0.1
        p = ag.param(np.array([1.0]))
        p.grad = np.array([0.1])
        st = AdamState(p.shape, p.dtype)
        adam_step(p, st, lr=1e-3)
        assert p.data[0] == pytest.approx(0.99900000010000001, abs=1e-15)

    def test_two_steps_match_reference(self):
        p = ag.param(np.array([1.0]))
        st = AdamState(p.shape, p.dtype)
        for _ in range(2):
            p.grad = np.array([0.1])
            adam_step(p, st, lr=1e-3)
        assert p.data[0] == pytest.approx(0.99800000020000001, abs=1e-14)

    def test_matches_torch_trajectory(self):
        torch = pytest.importorskip("torch")
        rng = np.random.default_rng(3)
        x0 = rng.normal(size=5)
        p = ag.param(x0.copy())
        st = AdamState(p.shape, p.dtype)
        tp = torch.tensor(x0.copy(), dtype=torch.float64, requires_grad=True)
        opt = torch.optim.Adam([tp], lr=1e-2, betas=(0.9, 0.999), eps=1e-8)
        for i in range(25):
            g = rng.normal(size=5)
            p.grad = g.copy()
            adam_step(p, st, lr=1e-2)
            tp.grad = torch.tensor(g)
            opt.step()
        assert np.allclose(p.data, tp.detach().numpy(), atol=1e-12)

    def test_frozen_param_never_moves(self):
        p = ag.param(np.array([1.0, 2.0]))
        p.freeze()
        st = AdamState(p.shape, p.dtype)
        before = p.data.copy()
        for _ in range(10):
            p.grad = np.array([5.0, -5.0])
            moved = adam_step(p, st, lr=0.1)
            assert moved is False
        assert np.array_equal(p.data, before)
        assert st.t == 0

    def test_missing_grad_is_noop(self):
        p = ag.param(np.array([1.0]))
        st = AdamState(p.shape, p.dtype)
        assert adam_step(p, st, lr=0.1) is False
        assert p.data[0] == 1.0


class TestAdamOptimizer:
    def test_converges_on_quadratic(self):
        p = ag.param(np.array([4.0, -3.0]))
        opt = Adam([p], lr=0.05)
        for _ in range(600):
            opt.zero_grad()
            with ag.Tape() as tape:
                loss = ag.mean_all(ag.mul(p, p))
                tape.backward(loss)
            opt.step()
        assert np.all(np.abs(p.data) < 1e-3)

    def test_counts_frozen_skips(self):
        a = ag.param(np.array([1.0]))
        b = ag.param(np.array([1.0]))
        b.freeze()
        opt = Adam([a, b], lr=0.1)
        a.grad = np.array([1.0])
        b.grad = np.array([1.0])
        opt.step()
        assert opt.frozen_skips == 1
        assert b.data[0] == 1.0
        assert a.data[0] != 1.0


class TestGradCheck:
    def test_passes_on_correct_gradient(self):
        rng = np.random.default_rng(0)
        w = ag.param(rng.normal(size=(3, 3)))
        x = ag.constant(rng.normal(size=(2, 3)))
        err = grad_check(lambda: ag.mean_all(ag.tanh(ag.matmul(x, w))), [w])
        assert err < 1e-6

    def test_flags_wrong_gradient(self):
        # a deliberately broken op: forward exp, backward pretends identity
        def bad_exp(x):
            out = ag.Tensor(np.exp(x.data))
            ag._record(out, (x,), lambda g: (g,))
            return out

        w = ag.param(np.array([0.7, -0.2]))
        err = grad_check(lambda: ag.mean_all(bad_exp(w)), [w])
        assert err > 1e-2

    def test_raises_when_gradient_unreachable(self):
        w = ag.param(np.array([1.0]))
        dead = ag.param(np.array([1.0]))
        with pytest.raises(ValueError):
            grad_check(lambda: ag.mean_all(w), [dead])
