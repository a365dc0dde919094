"""Learnable building blocks: Gaussian parameter MLP, GRU cell, forecast head.

All blocks use the column-batch convention: activations are ``[features,
batch]`` tensors, weights are ``[out, in]`` matrices applied from the
left, and biases are ``[out, 1]`` columns broadcast across the batch.
A single sample is simply a ``[d, 1]`` column.

Weights are initialized uniform in ±√(6/(fan_in + fan_out)) and biases
at zero; each constructor draws its weights from the supplied Rng in a
fixed documented order, so a seed pins every parameter bit-exactly.
"""

import numpy as np

from . import tensor
from .gaussian import SIGMA_MIN, DiagonalGaussian
from .tensor import ShapeError, Tensor


def glorot_uniform(rng, fan_out: int, fan_in: int) -> Tensor:
    """Weight matrix [fan_out, fan_in] drawn uniform in ±√(6/(fan_in+fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return tensor.parameter(rng.uniform(-bound, bound, (fan_out, fan_in)))


def _zero_bias(dim: int) -> Tensor:
    return tensor.parameter(np.zeros((dim, 1)))


def _check_input(x: Tensor, expected_dim: int, what: str) -> None:
    if x.data.ndim != 2 or x.shape[0] != expected_dim:
        raise ShapeError(
            f"{what} expects [{expected_dim}, batch] input, got {list(x.shape)}")


class GaussianMlp:
    """One-hidden-layer MLP emitting a diagonal Gaussian over out_dim values.

    forward: h = tanh(W1·x + b1); mean = W_mu·h + b_mu;
    std = softplus(W_sig·h + b_sig) + SIGMA_MIN.
    Draw order: W1, W_mu, W_sig.
    """

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, rng):
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.out_dim = out_dim
        self.W1 = glorot_uniform(rng, hidden_dim, in_dim)
        self.b1 = _zero_bias(hidden_dim)
        self.W_mu = glorot_uniform(rng, out_dim, hidden_dim)
        self.b_mu = _zero_bias(out_dim)
        self.W_sig = glorot_uniform(rng, out_dim, hidden_dim)
        self.b_sig = _zero_bias(out_dim)

    def forward(self, x: Tensor) -> DiagonalGaussian:
        _check_input(x, self.in_dim, "GaussianMlp")
        h = tensor.tanh(self.W1 @ x + self.b1)
        mean = self.W_mu @ h + self.b_mu
        std = tensor.softplus(self.W_sig @ h + self.b_sig) + SIGMA_MIN
        return DiagonalGaussian(mean, std)

    def parameters(self):
        return [
            ("W1", self.W1), ("b1", self.b1),
            ("W_mu", self.W_mu), ("b_mu", self.b_mu),
            ("W_sig", self.W_sig), ("b_sig", self.b_sig),
        ]


class GruCell:
    """Gated recurrent unit over column batches.

    step: r = σ(W_r[h;x] + b_r); ζ = σ(W_z[h;x] + b_z);
    c = tanh(W_c[r∘h; x] + b_c); h' = (1−ζ)∘h + ζ∘c.
    (c is the candidate state; biases are an addition to the classic
    bias-free formulation.) Draw order: W_r, W_z, W_c.
    """

    def __init__(self, in_dim: int, hidden_dim: int, rng):
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        cat = hidden_dim + in_dim
        self.W_r = glorot_uniform(rng, hidden_dim, cat)
        self.b_r = _zero_bias(hidden_dim)
        self.W_z = glorot_uniform(rng, hidden_dim, cat)
        self.b_z = _zero_bias(hidden_dim)
        self.W_c = glorot_uniform(rng, hidden_dim, cat)
        self.b_c = _zero_bias(hidden_dim)

    def step(self, h_prev: Tensor, x: Tensor, update_gate_override=None) -> Tensor:
        """One recurrence step; `update_gate_override` pins ζ (tests only)."""
        _check_input(h_prev, self.hidden_dim, "GruCell state")
        _check_input(x, self.in_dim, "GruCell input")
        if h_prev.shape[1] != x.shape[1]:
            raise ShapeError(
                f"GruCell batch sizes disagree: state {list(h_prev.shape)} "
                f"vs input {list(x.shape)}")
        hx = tensor.concat([h_prev, x], axis=0)
        r = tensor.sigmoid(self.W_r @ hx + self.b_r)
        if update_gate_override is None:
            zeta = tensor.sigmoid(self.W_z @ hx + self.b_z)
        else:
            zeta = update_gate_override
        cand = tensor.tanh(self.W_c @ tensor.concat([r * h_prev, x], axis=0) + self.b_c)
        return (1.0 - zeta) * h_prev + zeta * cand

    def parameters(self):
        return [
            ("W_r", self.W_r), ("b_r", self.b_r),
            ("W_z", self.W_z), ("b_z", self.b_z),
            ("W_c", self.W_c), ("b_c", self.b_c),
        ]


class ForecastHead:
    """Single linear layer mapping a feature column to the n-step forecast."""

    def __init__(self, in_dim: int, out_dim: int, rng):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.W_y = glorot_uniform(rng, out_dim, in_dim)
        self.b_y = _zero_bias(out_dim)

    def forward(self, features: Tensor) -> Tensor:
        _check_input(features, self.in_dim, "ForecastHead")
        return self.W_y @ features + self.b_y

    def parameters(self):
        return [("W_y", self.W_y), ("b_y", self.b_y)]
