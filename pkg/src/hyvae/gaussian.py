"""Diagonal Gaussian distributions: KL divergence, log-density, sampling.

This is the probabilistic vocabulary of the model — every latent prior,
posterior, and the decoder likelihood is a :class:`DiagonalGaussian`.
Standard deviations are floored at ``SIGMA_MIN`` (networks emit a
pre-activation mapped through ``softplus(·) + SIGMA_MIN``), which keeps
KL terms and densities finite.

All three operations reduce over *every* element of their operands, so a
``[d, 1]`` column gives the per-sample value and a ``[d, B]`` batch gives
the sum over the batch (callers divide by B where a mean is wanted).
Division by σ² is composed as ``exp(−2·log σ)``, which is safe because
σ ≥ SIGMA_MIN > 0.
"""

import math

from . import tensor
from .tensor import DomainError, ShapeError, Tensor

SIGMA_MIN = 1e-4

_LOG_2PI = math.log(2.0 * math.pi)


class DiagonalGaussian:
    """N(mean, diag(std²)) with elementwise standard deviations."""

    __slots__ = ("mean", "std")

    def __init__(self, mean: Tensor, std: Tensor):
        if mean.shape != std.shape:
            raise ShapeError(
                f"mean shape {list(mean.shape)} != std shape {list(std.shape)}")
        if (std.data < SIGMA_MIN).any():
            raise DomainError(
                f"standard deviations must be >= {SIGMA_MIN}; "
                f"smallest given is {std.data.min():.3e}")
        self.mean = mean
        self.std = std

    @property
    def shape(self):
        return self.mean.shape

    def __repr__(self):
        return f"DiagonalGaussian(shape={list(self.shape)})"


def _half_inv_var(std: Tensor) -> Tensor:
    """1/(2σ²) as exp(−2 log σ)·½ — differentiable, division-free."""
    return tensor.exp(tensor.log(std) * (-2.0)) * 0.5


def kl(q: DiagonalGaussian, p: DiagonalGaussian) -> Tensor:
    """KL(q ‖ p) summed over all coordinates (scalar tensor).

    Closed form per coordinate:
    ln(p.std/q.std) + (q.std² + (q.mean − p.mean)²) / (2 p.std²) − ½.
    Differentiable in all four parameter tensors; ≥ 0 up to rounding.
    """
    if q.shape != p.shape:
        raise ShapeError(
            f"KL dimensions disagree: {list(q.shape)} vs {list(p.shape)}")
    ln_ratio = tensor.log(p.std) - tensor.log(q.std)
    spread = tensor.square(q.std) + tensor.square(q.mean - p.mean)
    per_coord = ln_ratio + spread * _half_inv_var(p.std) - 0.5
    return tensor.reduce("sum", per_coord)


def log_prob(d: DiagonalGaussian, x: Tensor) -> Tensor:
    """log N(x | mean, diag(std²)) summed over all coordinates.

    Per coordinate: −½ ln(2π) − ln std − (x − mean)² / (2 std²).
    """
    if x.shape != d.shape:
        raise ShapeError(
            f"log_prob operand shape {list(x.shape)} != distribution "
            f"shape {list(d.shape)}")
    ln_std = tensor.log(d.std)
    quad = tensor.square(x - d.mean) * _half_inv_var(d.std)
    summed = tensor.reduce("sum", -ln_std - quad)
    return summed - 0.5 * _LOG_2PI * x.size


def rsample(d: DiagonalGaussian, rng) -> Tensor:
    """Reparameterized sample mean + std ∘ ε, ε ~ N(0, I) from `rng`.

    The noise enters as a constant, so gradients flow to the mean with
    coefficient 1 and to the std with coefficient ε.
    """
    eps = Tensor(rng.normal(d.shape))
    return d.mean + d.std * eps
