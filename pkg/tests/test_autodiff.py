import numpy as np
import pytest
from hypothesis import given, strategies as st

import masskit.autodiff as ad
from masskit.autodiff import NonFiniteError, ShapeError, Tape, Tensor, backward, grad_check


def param(x):
    return Tensor(np.array(x, dtype=np.float64), requires_grad=True)


def projected(fn, *inputs, seed=0):
    """Scalar loss sum(fn(*inputs) * R) with a fixed random R."""
    rng = np.random.default_rng(seed)
    cache = {}

    def loss():
        out = fn(*inputs)
        if "R" not in cache:
            cache["R"] = rng.normal(size=out.shape)
        return ad.reduce_sum(ad.mul(out, cache["R"]))

    return loss


class TestPrimitives:
    def test_softmax_uniform(self):
        out = ad.softmax(Tensor(np.full(4, 2.5)))
        np.testing.assert_array_equal(out.data, [0.25] * 4)

    def test_matmul_identity(self, rng):
        a = rng.normal(size=(3, 5))
        np.testing.assert_array_equal(ad.matmul(Tensor(np.eye(3)), Tensor(a)).data, a)

    def test_layer_norm_constant_row(self):
        out = ad.layer_norm(Tensor(np.ones(3)), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, np.zeros(3))

    def test_softmax_rows_sum_to_one(self, rng):
        x = Tensor(rng.normal(scale=30.0, size=(50, 17)))
        np.testing.assert_allclose(ad.softmax(x).data.sum(-1), 1.0, atol=1e-12, rtol=0)

    def test_masked_fill(self):
        out = ad.masked_fill(Tensor(np.arange(4.0)), np.array([True, False, True, False]), -9.0)
        np.testing.assert_array_equal(out.data, [-9.0, 1.0, -9.0, 3.0])

    def test_dropout_identity_in_eval(self, rng):
        x = Tensor(rng.normal(size=10))
        assert ad.dropout(x, 0.5, False, None) is x

    def test_dropout_seeded(self):
        x = Tensor(np.ones(1000))
        a = ad.dropout(x, 0.25, True, np.random.default_rng(3)).data
        b = ad.dropout(x, 0.25, True, np.random.default_rng(3)).data
        np.testing.assert_array_equal(a, b)
        assert set(np.unique(a)) <= {0.0, 1.0 / 0.75}
        assert 0.15 < (a == 0).mean() < 0.35

    def test_dropout_needs_rng(self):
        with pytest.raises(ValueError):
            ad.dropout(Tensor(np.ones(3)), 0.5, True, None)

    def test_gelu_known_values(self):
        out = ad.gelu(Tensor(np.array([0.0, 1.0, -1.0]))).data
        np.testing.assert_allclose(out, [0.0, 0.8413447460685429, -0.15865525393145707], rtol=1e-12)

    def test_embedding_out_of_range(self):
        with pytest.raises(IndexError):
            ad.embedding(Tensor(np.zeros((3, 2))), np.array([3]))

    def test_concat_and_split_shapes(self, rng):
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 4))
        assert ad.concat([Tensor(a), Tensor(b)], axis=-1).shape == (2, 7)

    @pytest.mark.parametrize(
        "op,shapes",
        [
            (ad.add, [(2, 3), (4, 3)]),
            (ad.matmul, [(2, 3), (2, 3)]),
            (ad.mul, [(3,), (4,)]),
        ],
    )
    def test_shape_errors(self, op, shapes):
        with pytest.raises(ShapeError):
            op(*(Tensor(np.zeros(s)) for s in shapes))


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = param(rng.normal(size=(2, 3, 4)))
        with Tape() as tape:
            loss = x.sum()
        backward(tape, loss)
        np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))

    def test_quadratic(self):
        x = param([1.0, 2.0])
        with Tape() as tape:
            loss = (x * x).sum()
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_fan_out_accumulates(self):
        x = param([3.0])
        with Tape() as tape:
            y = x * 2.0
            loss = (y + y * y).sum()
        tape.backward(loss)
        # d/dx (2x + 4x^2) = 2 + 8x
        np.testing.assert_allclose(x.grad, [26.0])

    def test_non_scalar_loss(self):
        x = param([1.0, 2.0])
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(y)

    def test_loss_not_on_tape(self):
        x = param([1.0])
        with Tape():
            y = (x * 2.0).sum()
        with Tape() as other:
            pass
        with pytest.raises(ValueError):
            other.backward(y)

    def test_inference_mode_records_nothing(self):
        x = param([1.0, 2.0])
        y = (x * x).sum()
        assert not y.requires_grad
        with Tape() as tape:
            Tensor(np.ones(2)) * 3.0
        assert len(tape) == 0

    def test_two_layer_network_matches_differences(self, rng):
        w1, b1 = param(rng.normal(size=(4, 6))), param(rng.normal(size=6))
        w2, b2 = param(rng.normal(size=(6, 3))), param(rng.normal(size=3))
        x = rng.normal(size=(5, 4))
        target = rng.normal(size=(5, 3))

        def loss():
            h = ad.gelu(ad.add(ad.matmul(Tensor(x), w1), b1))
            out = ad.add(ad.matmul(h, w2), b2)
            diff = ad.sub(out, target)
            return ad.reduce_mean(ad.mul(diff, diff))

        assert grad_check(loss, [w1, b1, w2, b2], eps=1e-4) < 1e-6

    def test_determinism(self, rng):
        w = rng.normal(size=(4, 4))

        def run():
            p = param(w.copy())
            with Tape() as tape:
                loss = ad.softmax(ad.matmul(p, p)).sum() + ad.layer_norm(p, Tensor(np.ones(4)), Tensor(np.zeros(4))).mean()
            tape.backward(loss)
            return loss.data.copy(), p.grad.copy()

        (l1, g1), (l2, g2) = run(), run()
        assert l1.tobytes() == l2.tobytes() and g1.tobytes() == g2.tobytes()


def _away_from_zero(x, margin=1e-3):
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 2, x)


PRIMITIVE_CASES = {
    "add": (lambda a, b: ad.add(a, b), [(3, 4), (4,)]),
    "sub": (lambda a, b: ad.sub(a, b), [(2, 3), (2, 1)]),
    "mul": (lambda a, b: ad.mul(a, b), [(3, 4), (3, 4)]),
    "div": (lambda a, b: ad.div(a, ad.add(ad.mul(b, b), 1.0)), [(3, 4), (3, 4)]),
    "neg": (lambda a: ad.neg(a), [(5,)]),
    "exp": (lambda a: ad.exp(a), [(2, 3)]),
    "sqrt": (lambda a: ad.sqrt(ad.add(ad.mul(a, a), 0.5)), [(6,)]),
    "relu": (lambda a: ad.relu(a), [(4, 5)]),
    "gelu": (lambda a: ad.gelu(a), [(4, 5)]),
    "matmul": (lambda a, b: ad.matmul(a, b), [(2, 3, 4), (4, 5)]),
    "matmul_batched": (lambda a, b: ad.matmul(a, b), [(2, 3, 4), (2, 4, 2)]),
    "softmax": (lambda a: ad.softmax(a), [(3, 6)]),
    "softmax_axis0": (lambda a: ad.softmax(a, axis=0), [(3, 6)]),
    # rows are spread out so central differences stay well conditioned
    "layer_norm": (lambda a, s, b: ad.layer_norm(ad.add(a, np.linspace(-2, 2, 5)), s, b), [(4, 5), (5,), (5,)]),
    "masked_fill": (lambda a: ad.masked_fill(a, np.array([True, False, False]), -3.0), [(2, 3)]),
    "concat": (lambda a, b: ad.concat([a, b], axis=0), [(2, 3), (1, 3)]),
    "reshape": (lambda a: ad.reshape(a, (3, 4)), [(2, 6)]),
    "transpose": (lambda a: ad.transpose(a, (2, 0, 1)), [(2, 3, 4)]),
    "index": (lambda a: ad.index(a, (np.array([0, 2, 2]), slice(None))), [(3, 4)]),
    "reduce_sum": (lambda a: ad.reduce_sum(a, axis=1), [(3, 4, 2)]),
    "reduce_mean": (lambda a: ad.reduce_mean(a, axis=(0, 2), keepdims=True), [(3, 4, 2)]),
}


class TestPrimitiveGradients:
    @pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_central_differences(self, name, seed):
        fn, shapes = PRIMITIVE_CASES[name]
        rng = np.random.default_rng(seed)
        inputs = [param(_away_from_zero(rng.normal(size=s))) for s in shapes]
        err = grad_check(projected(fn, *inputs, seed=seed), inputs, eps=1e-5)
        assert err < 1e-6, f"{name}: {err}"

    def test_embedding_gradient(self, rng):
        table = param(rng.normal(size=(5, 3)))
        idx = np.array([[0, 4, 4], [1, 0, 2]])
        err = grad_check(projected(lambda t: ad.embedding(t, idx), table), [table], eps=1e-6)
        assert err < 1e-6

    def test_dropout_gradient_uses_same_mask(self, rng):
        x = param(rng.normal(size=(4, 4)))

        def loss():
            return ad.reduce_sum(ad.mul(ad.dropout(x, 0.3, True, np.random.default_rng(9)), x))

        assert grad_check(loss, [x], eps=1e-6) < 1e-6

    @given(st.integers(0, 2**32 - 1))
    def test_softmax_cosine_composite(self, seed):
        rng = np.random.default_rng(seed)
        logits = param(rng.normal(size=(3, 8)))
        target = rng.uniform(size=(3, 8))

        def loss():
            p = ad.softmax(logits)
            dot = ad.reduce_sum(ad.mul(p, target), axis=-1)
            norm = ad.sqrt(ad.reduce_sum(ad.mul(p, p), axis=-1))
            return ad.reduce_mean(ad.sub(1.0, ad.div(dot, ad.mul(norm, float(np.linalg.norm(target[0]))))))

        assert grad_check(loss, [logits], eps=1e-5) < 1e-4


class TestGradCheck:
    def test_linear_function_is_exact(self, rng):
        w = param(rng.normal(size=(3, 3)))
        c = rng.normal(size=(3, 3))
        assert grad_check(lambda: ad.reduce_sum(ad.mul(w, c)), [w]) < 1e-9

    def test_detects_wrong_gradient(self):
        w = param([0.7, -0.3])

        def bad(a):
            out = ad.mul(a, a)
            return ad._record(out.data, (a,), lambda g: (g * 3.0 * a.data,))

        assert grad_check(lambda: ad.reduce_sum(bad(w)), [w]) > 0.1

    def test_non_finite_loss(self):
        w = param([-1.0])
        with pytest.raises(NonFiniteError):
            grad_check(lambda: ad.reduce_sum(ad.sqrt(w)), [w])


class TestDtype:
    def test_default_dtype_switch(self):
        prev = ad.get_default_dtype()
        try:
            ad.set_default_dtype(np.float32)
            assert Tensor([1.0, 2.0]).data.dtype == np.float32
        finally:
            ad.set_default_dtype(prev)
        assert Tensor([1.0]).data.dtype == prev
