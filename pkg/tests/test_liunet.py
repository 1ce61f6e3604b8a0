import numpy as np
import pytest

from spectral_rocket import liunet
from spectral_rocket.liunet import adapt_depth, backward, count_parameters, forward, init_params, stage_lengths
from spectral_rocket.training import softmax_cross_entropy


def shape_trace(length, classes, depth, padding):
    """Parameter count by walking layer shapes one at a time."""
    total, in_ch = 0, 1
    for width in (6, 12, 18, 24)[:depth]:
        total += width * in_ch * 6
        total += width
        if padding == "valid":
            length -= 5
        length //= 2
        in_ch = width
    return total + in_ch * length * classes + classes


def numerical_grads(params, x, y, eps=1e-4):
    def loss():
        return softmax_cross_entropy(forward(params, x)[0], y)[0]

    out = {}
    for name, arr in params.arrays().items():
        g = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + eps
            up = loss()
            arr[i] = old - eps
            down = loss()
            arr[i] = old
            g[i] = (up - down) / (2 * eps)
        out[name] = g
    return out


def max_rel_error(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)))


class TestDepth:
    def test_hypso(self):
        assert adapt_depth(112) == 4
        assert stage_lengths(112, 4) == [56, 28, 14, 7]

    def test_hyko(self):
        assert adapt_depth(15) == 3
        assert stage_lengths(15, 4) == [7, 3, 1, 0]

    def test_minimum(self):
        assert adapt_depth(2) == 1

    def test_too_short(self):
        with pytest.raises(ValueError):
            adapt_depth(1)

    @pytest.mark.parametrize("L", range(2, 130))
    def test_never_empty(self, L):
        assert stage_lengths(L, adapt_depth(L))[-1] >= 1


class TestParamCount:
    def test_conv_stack(self):
        p = init_params(112, 3)
        conv = sum(w.size + b.size for w, b in zip(p.conv_w, p.conv_b))
        assert conv == 42 + 444 + 1314 + 2616 == 4416

    def test_hypso_total(self):
        assert count_parameters(112, 3) == init_params(112, 3).param_count() == 4923
        assert shape_trace(112, 3, 4, "same") == 4923

    def test_valid_padding_reading(self):
        assert count_parameters(112, 3, depth=4, padding="valid") == shape_trace(112, 3, 4, "valid") == 4563

    def test_hyko_total(self):
        assert count_parameters(15, 10) == init_params(15, 10).param_count() == 1990


class TestForward:
    def test_zero_weights_uniform_softmax(self):
        p = init_params(25, 4)
        for a in p.arrays().values():
            a[...] = 0
        logits, _ = forward(p, np.random.default_rng(0).random((3, 25)))
        assert np.all(logits == 0)
        loss, _ = softmax_cross_entropy(logits, [0, 1, 2])
        assert loss == pytest.approx(np.log(4))

    def test_shape_trace(self):
        p = init_params(112, 3)
        _, caches = forward(p, np.zeros((2, 112)))
        lengths = [c[2].shape[-1] for c in caches[:-1]]
        assert lengths == [56, 28, 14, 7]
        assert caches[-1].shape == (2, 24 * 7)

    def test_batch_independent(self):
        p = init_params(15, 3, seed=2)
        x = np.random.default_rng(1).random((6, 15))
        full, _ = forward(p, x)
        for i in range(6):
            assert np.allclose(forward(p, x[i])[0], full[i], atol=1e-12)
        assert np.allclose(forward(p, x[::-1])[0], full[::-1], atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            forward(init_params(15, 3), np.zeros((1, 16)))

    def test_logits_finite(self):
        p = init_params(112, 3, seed=9)
        logits, _ = forward(p, np.random.default_rng(3).random((50, 112)))
        assert np.isfinite(logits).all()


class TestBackward:
    def test_dense_is_outer_product(self):
        p = init_params(15, 3, seed=1)
        x = np.random.default_rng(2).random(15)
        _, caches = forward(p, x)
        dl = np.array([0.3, -0.1, 0.5])
        g = backward(p, caches, dl)
        assert np.allclose(g.dense_w, np.outer(caches[-1][0], dl))
        assert np.allclose(g.dense_b, dl)

    def test_zero_upstream(self):
        p = init_params(15, 3)
        _, caches = forward(p, np.random.default_rng(0).random((4, 15)))
        g = backward(p, caches, np.zeros((4, 3)))
        assert all(np.all(a == 0) for a in g.arrays().values())

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        p = init_params(15, 3, seed=seed)
        x = rng.random((4, 15))
        y = rng.integers(0, 3, 4)
        logits, caches = forward(p, x)
        _, dl = softmax_cross_entropy(logits, y)
        analytic = backward(p, caches, dl).arrays()
        numeric = numerical_grads(p, x, y)
        for name in analytic:
            assert max_rel_error(analytic[name], numeric[name]) <= 1e-3, name


def test_checkpoint_round_trip(tmp_path):
    from spectral_rocket import training

    model = training.LiuNetModel(15, 3, seed=4)
    training.save_model(model, tmp_path / "m.ckpt")
    back = training.load_model(tmp_path / "m.ckpt")
    assert back.meta() == model.meta()
    for k, v in model.params.items():
        assert np.array_equal(back.params[k], v)
    (tmp_path / "again.ckpt").write_bytes(b"")
    training.save_model(back, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == (tmp_path / "m.ckpt").read_bytes()


def test_from_arrays_round_trip():
    p = init_params(25, 5, seed=3)
    q = liunet.LiuNetParams.from_arrays(25, 5, p.arrays())
    assert q.depth == 4 and q.flat_dim == 24
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays().values(), q.arrays().values()))
