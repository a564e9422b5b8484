"""Toy attention-UNet noise predictor, identity autoencoder and the LDM loss.

The "UNet" is a stack of residual transformer blocks at a single
resolution, split into encoder/middle/decoder stages so that swap layers
can be addressed by stage. Weights are random but fully seeded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import (
    AttentionWeights,
    AttentionRecord,
    _masked_swap,
    _row_sum_error,
    cross_attention,
    self_attention,
)
from .exceptions import ConfigurationError, DimensionError, EmptyContextError
from .numerics import SeededRng, as_matrix, matmul, mix

__all__ = [
    "Autoencoder",
    "Block",
    "LatentState",
    "ToyDenoiser",
    "ldm_loss",
    "rms_norm",
    "timestep_embedding",
]

_MODEL_KEY = 0x4D4F44454C


@dataclass(frozen=True)
class LatentState:
    """Spatial latent as ``l = H*W`` row-major pixels of ``h`` features."""

    grid: tuple
    features: np.ndarray = field(repr=False)

    def __post_init__(self):
        h, w = self.grid
        if self.features.ndim != 2 or self.features.shape[0] != h * w:
            raise DimensionError(
                f"features of shape {self.features.shape} do not fit a {h}x{w} grid"
            )
        if not np.isfinite(self.features).all():
            raise ValueError("latent features must be finite")

    @property
    def length(self):
        return self.features.shape[0]

    @property
    def channels(self):
        return self.features.shape[1]

    def replace(self, features):
        return LatentState(self.grid, np.asarray(features, dtype=np.float64))


def rms_norm(x, eps=1e-6):
    """Scale each row to unit root-mean-square (no learned gain)."""
    return x / np.sqrt(np.mean(x * x, axis=1, keepdims=True) + eps)


def timestep_embedding(step, dim):
    """Sinusoidal embedding: ``[sin(t w_0), cos(t w_0), sin(t w_1), ...]``."""
    emb = np.zeros(dim)
    for i in range(dim // 2):
        freq = 10000.0 ** (-2.0 * i / dim)
        emb[2 * i] = math.sin(step * freq)
        emb[2 * i + 1] = math.cos(step * freq)
    return emb


@dataclass
class Block:
    layer: int
    stage: str
    self_attn: AttentionWeights
    self_out: np.ndarray = field(repr=False)
    cross_attn: AttentionWeights = field(repr=False)
    cross_out: np.ndarray = field(repr=False)
    ff_in: np.ndarray = field(repr=False)
    ff_out: np.ndarray = field(repr=False)


def _linear(rng, fan_in, fan_out):
    return rng.normal_matrix(fan_in, fan_out, 1.0 / math.sqrt(fan_in))


class ToyDenoiser:
    """Seeded noise predictor ``eps(z_t, t, c)``.

    Each block applies residual self-attention, residual cross-attention
    against the context and a residual two-layer ReLU feedforward, each on
    an RMS-normalized copy of the stream. The sinusoidal timestep embedding
    is added to every pixel before block 0; the noise estimate is a linear
    map of the RMS-normalized final stream, so it stays bounded across
    sampling steps.
    """

    def __init__(self, height=16, width=16, h=32, h_c=32, d=32, encoder_blocks=4,
                 middle_blocks=1, decoder_blocks=6, ff_mult=2, seed=0):
        self.height = height
        self.width = width
        self.h = h
        self.h_c = h_c
        self.d = d
        self.encoder_blocks = encoder_blocks
        self.middle_blocks = middle_blocks
        self.decoder_blocks = decoder_blocks
        self.ff_mult = ff_mult
        self.seed = seed
        if min(height, width, h, h_c, d, ff_mult) < 1:
            raise ConfigurationError("model dimensions must be positive")
        if encoder_blocks < 0 or middle_blocks < 0 or decoder_blocks < 0:
            raise ConfigurationError("block counts must be non-negative")

        rng = SeededRng(mix(seed, _MODEL_KEY))
        stages = (["encoder"] * encoder_blocks + ["middle"] * middle_blocks
                  + ["decoder"] * decoder_blocks)
        self.blocks = []
        for layer, stage in enumerate(stages):
            self.blocks.append(Block(
                layer=layer,
                stage=stage,
                self_attn=AttentionWeights.random(rng, h, h, d),
                self_out=_linear(rng, d, h),
                cross_attn=AttentionWeights.random(rng, h, h_c, d),
                cross_out=_linear(rng, d, h),
                ff_in=_linear(rng, h, ff_mult * h),
                ff_out=_linear(rng, ff_mult * h, h),
            ))
        self.out_proj = _linear(rng, h, h)
        self._temb = {}

    @property
    def n_blocks(self):
        return len(self.blocks)

    @property
    def grid(self):
        return (self.height, self.width)

    def layer_ids(self, stage=None):
        return [b.layer for b in self.blocks if stage is None or b.stage == stage]

    def decoder_layers(self, indices):
        """Global layer ids of the given decoder-block positions."""
        dec = self.layer_ids("decoder")
        try:
            return [dec[i] for i in indices]
        except IndexError:
            raise ConfigurationError(
                f"decoder block index out of range, model has {len(dec)} decoder blocks"
            ) from None

    def zero_weights(self):
        """Zero every attention and feedforward weight (the output map is kept)."""
        for b in self.blocks:
            b.self_attn = AttentionWeights.zeros_like(b.self_attn)
            b.cross_attn = AttentionWeights.zeros_like(b.cross_attn)
            b.self_out = np.zeros_like(b.self_out)
            b.cross_out = np.zeros_like(b.cross_out)
            b.ff_in = np.zeros_like(b.ff_in)
            b.ff_out = np.zeros_like(b.ff_out)
        return self

    def timestep_embedding(self, step):
        if step not in self._temb:
            self._temb[step] = timestep_embedding(step, self.h)
        return self._temb[step]

    def forward(self, z, step, context, swap=None, *, capture_layers=(), keep_self_maps=False):
        """Predict the noise in ``z`` at timestep ``step``.

        Parameters
        ----------
        z : LatentState
        step : int
            Timestep index, ``>= 1``.
        context : ContextualEmbedding or array of shape (l_c, h_c)
        swap : SwapBuffer, optional
            Donor keys/values and masks; self-attention at the buffer's
            layers becomes the masked swap.
        capture_layers : iterable of int
            Layers whose self-attention K/V are kept on the records.

        Returns
        -------
        (LatentState, list of AttentionRecord)
        """
        if step < 1:
            raise ValueError(f"timestep must be >= 1, got {step}")
        features = as_matrix(z.features, "latent")
        if features.shape[1] != self.h:
            raise DimensionError(f"latent has {features.shape[1]} channels, model expects {self.h}")
        rows = np.asarray(getattr(context, "rows", context), dtype=np.float64)
        if rows.shape[0] == 0:
            raise EmptyContextError("empty context")

        swap_layers = set()
        if swap is not None:
            valid = set(self.layer_ids())
            swap_layers = set(swap.layers)
            unknown = swap_layers - valid
            if unknown:
                raise ConfigurationError(f"swap hook references unknown layers {sorted(unknown)}")
        capture_layers = set(capture_layers)
        unknown = capture_layers - set(self.layer_ids())
        if unknown:
            raise ConfigurationError(f"capture requested for unknown layers {sorted(unknown)}")

        grid = z.grid
        x = features + self.timestep_embedding(step)
        records = []
        for b in self.blocks:
            if b.layer in swap_layers:
                w = b.self_attn
                xn = rms_norm(x)
                q, k, v = matmul(xn, w.w_q), matmul(xn, w.w_k), matmul(xn, w.w_v)
                sa, weights = _masked_swap(
                    q, k, v, swap.keys[b.layer], swap.values[b.layer], swap.masks[b.layer]
                )
                rec = AttentionRecord(
                    b.layer, step, "self", grid, _row_sum_error(weights),
                    map=weights if keep_self_maps else None,
                    keys=k if b.layer in capture_layers else None,
                    values=v if b.layer in capture_layers else None,
                    swapped=True,
                )
            else:
                sa, rec, _ = self_attention(
                    rms_norm(x), b.self_attn, layer=b.layer, step=step, grid=grid,
                    keep_map=keep_self_maps, keep_kv=b.layer in capture_layers,
                )
            records.append(rec)
            x = x + matmul(sa, b.self_out)

            ca, rec = cross_attention(rms_norm(x), rows, b.cross_attn, layer=b.layer, step=step, grid=grid)
            records.append(rec)
            x = x + matmul(ca, b.cross_out)

            x = x + matmul(np.maximum(matmul(rms_norm(x), b.ff_in), 0.0), b.ff_out)

        return z.replace(matmul(rms_norm(x), self.out_proj)), records

    __call__ = forward


class Autoencoder:
    """Identity stand-in for the latent autoencoder ``(E, D)``."""

    mode = "identity"

    def encode(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.ndim != 3:
            raise DimensionError(f"image must be H x W or H x W x C, got shape {x.shape}")
        h, w, c = x.shape
        return LatentState((h, w), x.reshape(h * w, c).copy())

    def decode(self, z):
        h, w = z.grid
        return z.features.reshape(h, w, z.channels).copy()


def encode_image(x):
    return Autoencoder().encode(x)


def decode_latent(z):
    return Autoencoder().decode(z)


def ldm_loss(model, z0, noise, step, context, schedule):
    """Mean squared error between ``noise`` and the model's prediction at ``z_t``.

    ``z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) noise`` with ``abar`` from
    ``schedule``. ``model`` is anything with ``forward(z, step, context)``.
    """
    z0_f = np.asarray(z0.features, dtype=np.float64)
    eps = np.asarray(getattr(noise, "features", noise), dtype=np.float64)
    if z0_f.shape != eps.shape:
        raise DimensionError(f"latent {z0_f.shape} and noise {eps.shape} differ in shape")
    schedule.check_step(step)
    abar = schedule.alpha_bar(step)
    zt = z0.replace(math.sqrt(abar) * z0_f + math.sqrt(1.0 - abar) * eps)
    pred, _ = model.forward(zt, step, context)
    pred = np.asarray(getattr(pred, "features", pred), dtype=np.float64)
    if pred.shape != eps.shape:
        raise DimensionError(f"prediction {pred.shape} does not match noise {eps.shape}")
    return float(np.mean((eps - pred) ** 2))
