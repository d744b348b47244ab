import numpy as np
import pytest

from decalign.autodiff import ShapeMismatchError, Tensor, finite_difference_gradient
from decalign.encoders import Encoder, default_widths, encode_batch, init_encoder


def forward_oracle(enc: Encoder, x: np.ndarray) -> np.ndarray:
    """Layer-by-layer numpy evaluation, no autodiff."""
    h = x
    for layer, (w, b) in enumerate(zip(enc.weights, enc.biases)):
        h = h @ w.data + b.data
        if layer != len(enc.weights) - 1:
            if enc.nonlinearity == "relu":
                h = np.maximum(h, 0.0)
            elif enc.nonlinearity == "tanh":
                h = np.tanh(h)
    return h


class TestInitEncoder:
    def test_zero_init_maps_everything_to_zero(self):
        enc = init_encoder([4, 4], "identity", seed=0, zero_init=True)
        out = encode_batch(enc, Tensor(np.random.default_rng(0).standard_normal((3, 4))))
        np.testing.assert_array_equal(out.data, np.zeros((3, 4)))

    def test_same_seed_identical(self):
        a = init_encoder([5, 8, 3], "relu", seed=11)
        b = init_encoder([5, 8, 3], "relu", seed=11)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_parameter_count(self):
        enc = init_encoder([8, 16, 4], "relu", seed=0)
        assert enc.parameter_count() == 8 * 16 + 16 + 16 * 4 + 4  # 228

    def test_rejects_single_width(self):
        with pytest.raises(ValueError):
            init_encoder([4], "relu")

    def test_rejects_zero_width(self):
        with pytest.raises(ValueError):
            init_encoder([4, 0, 2], "relu")

    def test_rejects_unknown_nonlinearity(self):
        with pytest.raises(ValueError, match="nonlinearity"):
            init_encoder([4, 2], "gelu")

    def test_default_widths_rule(self):
        assert default_widths(12, 32) == (12, 64, 32)


class TestEncodeBatch:
    def test_identity_single_layer(self):
        enc = init_encoder([3, 3], "identity", seed=0)
        enc.weights[0].data = np.eye(3)
        enc.biases[0].data = np.zeros((1, 3))
        x = np.random.default_rng(1).standard_normal((4, 3))
        np.testing.assert_array_equal(encode_batch(enc, Tensor(x)).data, x)

    def test_relu_kills_negative_preactivations(self):
        enc = init_encoder([2, 2, 2], "relu", seed=0)
        enc.weights[0].data = -np.eye(2)
        enc.biases[0].data = np.zeros((1, 2))
        x = np.abs(np.random.default_rng(2).standard_normal((5, 2))) + 0.1
        out = encode_batch(enc, Tensor(x)).data
        # hidden layer is all zero, so the output is just the last bias
        np.testing.assert_allclose(out, np.tile(enc.biases[1].data, (5, 1)))

    def test_matches_layer_oracle(self):
        rng = np.random.default_rng(3)
        for nonlinearity in ("relu", "tanh", "identity"):
            enc = init_encoder([6, 10, 4], nonlinearity, seed=int(rng.integers(100)))
            x = rng.standard_normal((7, 6))
            np.testing.assert_allclose(
                encode_batch(enc, Tensor(x)).data, forward_oracle(enc, x), atol=1e-12
            )

    def test_output_shape(self):
        enc = init_encoder([5, 9, 3], "tanh", seed=4)
        out = encode_batch(enc, Tensor(np.zeros((11, 5))))
        assert out.shape == (11, 3)

    def test_input_dim_mismatch(self):
        enc = init_encoder([5, 3], "relu", seed=0)
        with pytest.raises(ShapeMismatchError, match="5"):
            encode_batch(enc, Tensor(np.zeros((2, 4))))


class TestEncoderGradients:
    def test_all_parameters_match_finite_differences(self):
        rng = np.random.default_rng(5)
        enc = init_encoder([4, 6, 3], "tanh", seed=9)
        x = Tensor(rng.standard_normal((3, 4)))
        scale = Tensor(rng.standard_normal((3, 3)))

        def loss_value() -> float:
            return (encode_batch(enc, x) * scale).sum().item()

        loss = (encode_batch(enc, x) * scale).sum()
        loss.backward()
        for p in enc.parameters():
            analytic = p.grad_or_zero().copy()
            numeric = finite_difference_gradient(lambda _t: loss_value(), p)
            denom = max(np.abs(numeric).max(), 1.0)
            assert np.abs(analytic - numeric).max() / denom <= 1e-4
