"""The hierarchical variational forecaster: priors, inference, ELBO, loss.

A length-m window is cut into T = m − l + 1 overlapping subsequences of
length l (stride 1). Each subsequence x^t gets a ladder of L latent
groups z_L^t … z_1^t; a GRU carries an entire-window state h^t across
subsequences. Conditioning per step t (all on the *previous* state):

  top posterior    q(z_L^t) = enc_top([h^{t−1}; x^t; z_1^{t−1}])
  ladder posterior q(z_i^t) = enc_ladder_i([sample(z_{i+1}^t); x^t])
  top prior        p(z_L^t) = prior_top([z_1^{t−1}; h^{t−1}])
  ladder prior     p(z_i^t) = prior_ladder_i(sample(z_{i+1}^t))
  likelihood       p(x^t)   = decoder([z_1^t; h^{t−1}])
  state update     h^t      = gru(h^{t−1}, x^t)

The training objective pairs the negative ELBO with a forecast penalty:
ℓ = −[recon − β·(KL_ladder + KL_temporal)] + (1/n)·Σ(y − ŷ)², where
ŷ = head([h^T; z_1^T; …; z_L^T]) uses the same pass's sampled state.

Two ablation variants are built by :func:`make_variant`: ``no_subseq``
collapses subsequences to single points (l = 1, L = 1); ``no_entire``
removes the entire-window channel (no GRU, state inputs dropped from
every network, and the z_1 chain pinned to zero — each subsequence is
encoded independently).

Windows may be single columns ``[m]`` or column batches ``[m, B]``;
reported ELBO terms are per-window means over the batch.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from . import tensor
from .blocks import ForecastHead, GaussianMlp, GruCell
from .gaussian import DiagonalGaussian, kl, log_prob, rsample
from .rng import Rng
from .tensor import ShapeError, Tensor

VARIANTS = ("full", "no_subseq", "no_entire")


class ModelPayloadError(ValueError):
    """Model file is not well-formed (truncated, bad JSON, missing keys)."""


class ModelVersionError(ValueError):
    """Model file declares an unsupported format version."""


class ModelShapeError(ValueError):
    """Model file parameters disagree with the declared configuration."""


@dataclass(frozen=True)
class HyVaeConfig:
    """Structural hyperparameters; T = m − l + 1 subsequences per window."""

    l: int
    L: int
    d_z: int
    d_h: int
    n: int
    m: int = 50
    warmup_epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.l <= self.m):
            raise ValueError(f"need 1 <= l <= m, got l={self.l}, m={self.m}")
        if self.L < 1:
            raise ValueError(f"ladder size L must be >= 1, got {self.L}")
        for name in ("d_z", "d_h", "n"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")

    @property
    def T(self) -> int:
        return self.m - self.l + 1

    def to_dict(self) -> dict:
        return {
            "l": self.l, "L": self.L, "d_z": self.d_z, "d_h": self.d_h,
            "n": self.n, "m": self.m, "warmup_epochs": self.warmup_epochs,
            "seed": self.seed,
        }


@dataclass
class ElboBreakdown:
    """The three ELBO terms (batch means) and the warm-up coefficient.

    elbo_enc = recon − beta·(kl_ladder + kl_temporal); all three term
    fields are scalar tensors on the gradient tape.
    """

    recon: Tensor
    kl_ladder: Tensor
    kl_temporal: Tensor
    beta: float

    def elbo_enc(self) -> Tensor:
        return self.recon - (self.kl_ladder + self.kl_temporal) * self.beta


class HyVaeModel:
    """Ladder-of-latents forecaster over sliding subsequences.

    `variant` selects the full model or one of the two ablations; see
    :func:`make_variant`. All parameters are drawn from Rng(config.seed)
    in a fixed order, so (config, variant) pins the initialization.
    """

    def __init__(self, config: HyVaeConfig, variant: str = "full", rng=None):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.config = config
        self.variant = variant
        self.has_state = variant != "no_entire"
        rng = Rng(config.seed) if rng is None else rng

        c = config
        width = c.d_z                      # MLP hidden width = embedding size
        d_state = c.d_h if self.has_state else 0
        self.prior_top = GaussianMlp(c.d_z + d_state, width, c.d_z, rng)
        self.prior_ladder = {
            level: GaussianMlp(c.d_z, width, c.d_z, rng)
            for level in range(c.L - 1, 0, -1)
        }
        self.enc_top = GaussianMlp(d_state + c.l + c.d_z, width, c.d_z, rng)
        self.enc_ladder = {
            level: GaussianMlp(c.d_z + c.l, width, c.d_z, rng)
            for level in range(c.L - 1, 0, -1)
        }
        self.decoder = GaussianMlp(c.d_z + d_state, width, c.l, rng)
        self.gru = GruCell(c.l, c.d_h, rng) if self.has_state else None
        self.head = ForecastHead(d_state + c.L * c.d_z, c.n, rng)

    # -- parameter access -----------------------------------------------

    def _blocks(self):
        yield "prior_top", self.prior_top
        for level in range(self.config.L - 1, 0, -1):
            yield f"prior_ladder_{level}", self.prior_ladder[level]
        yield "enc_top", self.enc_top
        for level in range(self.config.L - 1, 0, -1):
            yield f"enc_ladder_{level}", self.enc_ladder[level]
        yield "decoder", self.decoder
        if self.gru is not None:
            yield "gru", self.gru
        yield "head", self.head

    def parameters(self) -> dict:
        """Ordered mapping of stable names ("prior_top.W1") to leaf tensors."""
        out = {}
        for block_name, block in self._blocks():
            for param_name, p in block.parameters():
                out[f"{block_name}.{param_name}"] = p
        return out

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    # -- one subsequence step ---------------------------------------------

    def encode_step(self, h_prev, z1_prev, x_t, rng):
        """Posterior ladder for one subsequence, top (L) to bottom (1).

        Returns (posteriors, samples), both length L, ordered z_L … z_1.
        When `rng` is None the "samples" are the posterior means
        (deterministic inference).
        """
        parts = [h_prev] if self.has_state else []
        q_top = self.enc_top.forward(tensor.concat(parts + [x_t, z1_prev], axis=0))
        posteriors = [q_top]
        samples = [self._draw(q_top, rng)]
        for level in range(self.config.L - 1, 0, -1):
            q = self.enc_ladder[level].forward(
                tensor.concat([samples[-1], x_t], axis=0))
            posteriors.append(q)
            samples.append(self._draw(q, rng))
        return posteriors, samples

    @staticmethod
    def _draw(dist: DiagonalGaussian, rng):
        return rsample(dist, rng) if rng is not None else dist.mean

    def prior_step(self, h_prev, z1_prev, samples):
        """Prior ladder evaluated at the posterior's sampled ancestors.

        `samples` is encode_step's output; returns L priors, z_L … z_1.
        """
        if self.has_state:
            top_in = tensor.concat([z1_prev, h_prev], axis=0)
        else:
            top_in = z1_prev
        priors = [self.prior_top.forward(top_in)]
        for level in range(self.config.L - 1, 0, -1):
            ancestor = samples[self.config.L - 1 - level]   # sample of level+1
            priors.append(self.prior_ladder[level].forward(ancestor))
        return priors

    # -- whole-window passes -----------------------------------------------

    def _as_window_batch(self, window) -> np.ndarray:
        w = np.asarray(window, dtype=np.float64)
        if w.ndim == 1:
            w = w.reshape(-1, 1)
        if w.ndim != 2 or w.shape[0] != self.config.m:
            raise ShapeError(
                f"window must have length m={self.config.m}, got shape "
                f"{list(np.asarray(window).shape)}")
        return w

    def _zeros(self, dim: int, batch: int) -> Tensor:
        return Tensor(np.zeros((dim, batch)))

    def _recurse(self, w: np.ndarray, rng, with_elbo: bool, beta: float = 1.0):
        """Shared subsequence recursion for elbo() and forecast().

        Returns (breakdown or None, h_final or None, final samples z_L…z_1).
        """
        c = self.config
        batch = w.shape[1]
        h = self._zeros(c.d_h, batch) if self.has_state else None
        z1_prev = self._zeros(c.d_z, batch)
        recon = kl_ladder = kl_temporal = None
        samples = None
        for t in range(c.T):
            x_t = Tensor(np.ascontiguousarray(w[t:t + c.l, :]))
            posteriors, samples = self.encode_step(h, z1_prev, x_t, rng)
            if with_elbo:
                priors = self.prior_step(h, z1_prev, samples)
                dec_in = [samples[-1], h] if self.has_state else [samples[-1]]
                likelihood = self.decoder.forward(tensor.concat(dec_in, axis=0))
                recon = _acc(recon, log_prob(likelihood, x_t))
                kl_temporal = _acc(kl_temporal, kl(posteriors[0], priors[0]))
                for q, p in zip(posteriors[1:], priors[1:]):
                    kl_ladder = _acc(kl_ladder, kl(q, p))
            if self.has_state:
                h = self.gru.step(h, x_t)
                z1_prev = samples[-1]
        breakdown = None
        if with_elbo:
            scale = 1.0 / batch
            zero = Tensor(np.zeros(()))
            breakdown = ElboBreakdown(
                recon=recon * scale,
                kl_ladder=kl_ladder * scale if kl_ladder is not None else zero,
                kl_temporal=kl_temporal * scale,
                beta=beta,
            )
        return breakdown, h, samples

    def elbo(self, window, rng, beta: float):
        """ELBO terms for one (batch of) window(s); also the final state.

        Returns (ElboBreakdown, h_final, samples) where samples are the
        last subsequence's z_L … z_1 — the inputs to the forecast head.
        """
        if not 0.0 <= beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {beta}")
        w = self._as_window_batch(window)
        return self._recurse(w, rng, with_elbo=True, beta=beta)

    def _head_features(self, h, samples) -> Tensor:
        bottom_up = list(reversed(samples))          # z_1 … z_L
        parts = ([h] if self.has_state else []) + bottom_up
        return tensor.concat(parts, axis=0)

    def forecast(self, window, mode: str = "mean", rng=None) -> Tensor:
        """n-step-ahead prediction for a normalized window.

        mode "mean" is deterministic (posterior means at every level);
        mode "sample" draws one reparameterized sample per level from rng.
        """
        if mode == "mean":
            rng = None
        elif mode == "sample":
            if rng is None:
                raise ValueError("sample mode requires an rng")
        else:
            raise ValueError(f"unknown forecast mode {mode!r}")
        flat = np.asarray(window).ndim == 1
        w = self._as_window_batch(window)
        with tensor.no_grad():
            _, h, samples = self._recurse(w, rng, with_elbo=False)
            out = self.head.forward(self._head_features(h, samples))
        if flat:
            return Tensor(out.data.reshape(-1))
        return out

    def loss(self, window, y, rng, beta: float):
        """Total training loss ℓ = −ℓ_enc + (1/n)Σ(y − ŷ)² (batch mean).

        ŷ comes from the same pass's *sampled* final state, so the
        forecast penalty is stochastic during training and its gradients
        flow through every parameter. Returns (loss, ElboBreakdown).
        """
        if not 0.0 <= beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {beta}")
        w = self._as_window_batch(window)
        targets = np.asarray(y, dtype=np.float64)
        if targets.ndim == 1:
            targets = targets.reshape(-1, 1)
        if targets.shape != (self.config.n, w.shape[1]):
            raise ShapeError(
                f"targets must be [n={self.config.n}, batch={w.shape[1]}], "
                f"got {list(np.asarray(y).shape)}")
        breakdown, h, samples = self._recurse(w, rng, with_elbo=True, beta=beta)
        y_hat = self.head.forward(self._head_features(h, samples))
        sq_err = tensor.reduce("sum", tensor.square(Tensor(targets) - y_hat))
        pred = sq_err * (1.0 / (self.config.n * w.shape[1]))
        return pred - breakdown.elbo_enc(), breakdown


def _acc(total, term):
    return term if total is None else total + term


def make_variant(config: HyVaeConfig, kind: str) -> HyVaeModel:
    """Build the full model or one of the two ablations.

    no_subseq: l and L forced to 1 — a pointwise recurrent latent model
    with no subsequence-level patterns (T = m steps of length 1).
    no_entire: the entire-window channel is removed — no GRU, state
    inputs dropped everywhere, z_1 chain pinned to zero, forecast from
    the final subsequence's latents alone.
    """
    if kind not in VARIANTS:
        raise ValueError(f"unknown variant {kind!r}; expected one of {VARIANTS}")
    if kind == "no_subseq":
        config = replace(config, l=1, L=1)
    return HyVaeModel(config, variant=kind)


# -- serialization ------------------------------------------------------------

FORMAT_VERSION = 1


def _emit_json(value, out):
    if isinstance(value, dict):
        out.append("{")
        for i, (k, v) in enumerate(value.items()):
            if i:
                out.append(",")
            out.append(json.dumps(k))
            out.append(":")
            _emit_json(v, out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, v in enumerate(value):
            if i:
                out.append(",")
            _emit_json(v, out)
        out.append("]")
    elif isinstance(value, bool):
        out.append("true" if value else "false")
    elif isinstance(value, (int, np.integer)):
        out.append(str(int(value)))
    elif isinstance(value, (float, np.floating)):
        f = float(value)
        if not np.isfinite(f):
            raise ValueError("cannot serialize non-finite float")
        out.append(format(f, ".17g"))
    elif isinstance(value, str):
        out.append(json.dumps(value))
    else:
        raise TypeError(f"unsupported value in model document: {type(value)}")


def serialize(model: HyVaeModel, normalization) -> bytes:
    """Model file bytes: versioned JSON with 17-significant-digit floats.

    `normalization` maps {"min": float, "max": float} — the training-split
    range the model expects its inputs scaled by.
    """
    doc = {
        "format_version": FORMAT_VERSION,
        "variant": model.variant,
        "config": model.config.to_dict(),
        "normalization": {
            "min": float(normalization["min"]),
            "max": float(normalization["max"]),
        },
        "params": {
            name: {"shape": list(p.shape), "data": [float(v) for v in p.data.reshape(-1)]}
            for name, p in model.parameters().items()
        },
    }
    out = []
    _emit_json(doc, out)
    return "".join(out).encode("ascii")


def deserialize(payload: bytes):
    """Rebuild (model, normalization) from serialize() output.

    Raises ModelPayloadError for malformed documents, ModelVersionError
    for unsupported versions, ModelShapeError when parameters disagree
    with the declared config. Never returns a partially loaded model.
    """
    try:
        doc = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelPayloadError(f"unreadable model document: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelPayloadError("model document must be a JSON object")

    version = doc.get("format_version")
    if version is None:
        raise ModelPayloadError("model document missing format_version")
    if version != FORMAT_VERSION:
        raise ModelVersionError(
            f"unsupported model format_version {version!r} "
            f"(this build reads version {FORMAT_VERSION})")

    try:
        config = HyVaeConfig(**{k: int(v) for k, v in doc["config"].items()})
        normalization = {
            "min": float(doc["normalization"]["min"]),
            "max": float(doc["normalization"]["max"]),
        }
        raw_params = doc["params"]
        variant = doc.get("variant", "full")
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelPayloadError(f"malformed model document: {exc}") from None
    if variant not in VARIANTS:
        raise ModelPayloadError(f"unknown variant {variant!r} in model document")

    model = HyVaeModel(config, variant=variant)
    expected = model.parameters()
    if set(raw_params) != set(expected):
        missing = sorted(set(expected) - set(raw_params))
        extra = sorted(set(raw_params) - set(expected))
        raise ModelShapeError(
            f"parameter names disagree with config: missing {missing}, "
            f"unexpected {extra}")
    for name, p in expected.items():
        entry = raw_params[name]
        try:
            shape = tuple(int(s) for s in entry["shape"])
            data = entry["data"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelPayloadError(
                f"malformed parameter entry {name!r}: {exc}") from None
        if shape != p.shape:
            raise ModelShapeError(
                f"parameter {name!r} has shape {list(shape)}, "
                f"expected {list(p.shape)}")
        if len(data) != p.data.size:
            raise ModelShapeError(
                f"parameter {name!r} carries {len(data)} values, "
                f"expected {p.data.size}")
        p.data = np.asarray(data, dtype=np.float64).reshape(shape)
    return model, normalization
