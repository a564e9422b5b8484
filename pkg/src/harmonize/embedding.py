"""Toy text/visual encoders and contextual-embedding composition."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, EmptyInputError, ModeError
from .numerics import SeededRng, as_matrix, matmul, mix

__all__ = [
    "ContextMode",
    "ContextualEmbedding",
    "TextEmbedding",
    "TokenRole",
    "VisualEmbedding",
    "compose_context",
    "encode_text",
    "encode_visual",
]

DEFAULT_VOCAB_SIZE = 65536
DESCRIPTOR_GRID = (4, 4)
# seed tag for the visual mapper, keeps it apart from the token streams
_VISUAL_MAPPER_KEY = 0x56495355414C


class TokenRole(str, enum.Enum):
    SUBJECT = "subject"
    CLASS_NAME = "class_name"
    ARTICLE = "article"
    PADDING = "padding"
    SPECIAL = "special"
    REGULAR = "regular"


class ContextMode(str, enum.Enum):
    FULL = "full"
    VISUAL_ONLY = "visual_only"
    TEXTUAL_ONLY = "textual_only"


@dataclass(frozen=True)
class TextEmbedding:
    token_ids: tuple
    roles: tuple
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.token_ids) != len(self.roles) or len(self.roles) != self.vectors.shape[0]:
            raise DimensionError("token ids, roles and vectors must have equal length")
        if sum(r is TokenRole.SUBJECT for r in self.roles) > 1:
            raise ValueError("at most one subject token is allowed")
        if not np.isfinite(self.vectors).all():
            raise ValueError("text vectors must be finite")
        self.vectors.setflags(write=False)

    @property
    def n_tokens(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


@dataclass(frozen=True)
class VisualEmbedding:
    vectors: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] < 1:
            raise DimensionError("visual embedding needs at least one token")
        if not np.isfinite(self.vectors).all():
            raise ValueError("visual vectors must be finite")
        self.vectors.setflags(write=False)

    @property
    def n_tokens(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


@dataclass(frozen=True)
class ContextualEmbedding:
    """Concatenated visual and textual rows fed to cross-attention.

    ``slots[i]`` is ``("visual", k)`` or ``("text", k)``: the source token
    of row ``i``. ``roles[i]`` is the token role for text rows and ``None``
    for visual rows.
    """

    mode: ContextMode
    rows: np.ndarray = field(repr=False)
    slots: tuple
    roles: tuple

    def __post_init__(self):
        self.rows.setflags(write=False)

    @property
    def length(self):
        return self.rows.shape[0]

    @property
    def dim(self):
        return self.rows.shape[1]

    def indices(self, source):
        return [i for i, (s, _) in enumerate(self.slots) if s == source]

    def role_indices(self, roles):
        roles = {TokenRole(r) for r in roles}
        return [i for i, r in enumerate(self.roles) if r is not None and r in roles]

    def with_rows(self, rows):
        return ContextualEmbedding(self.mode, np.array(rows, dtype=np.float64), self.slots, self.roles)


def encode_text(token_ids, roles, seed, dim=32, vocab_size=DEFAULT_VOCAB_SIZE):
    """Map token ids to seeded Gaussian vectors scaled by ``1/sqrt(dim)``.

    The vector for id ``k`` is the first ``dim`` Gaussians of
    ``SeededRng(mix(seed, k))``, so it depends on nothing but ``(seed, k)``.
    """
    token_ids = tuple(int(t) for t in token_ids)
    roles = tuple(TokenRole(r) for r in roles)
    if not token_ids:
        raise EmptyInputError("prompt has no tokens")
    if len(roles) != len(token_ids):
        raise DimensionError(f"{len(token_ids)} token ids but {len(roles)} roles")
    for t in token_ids:
        if not 0 <= t < vocab_size:
            raise ValueError(f"token id {t} outside vocabulary [0, {vocab_size})")
    scale = 1.0 / math.sqrt(dim)
    cache = {}
    for t in token_ids:
        if t not in cache:
            cache[t] = SeededRng(mix(seed, t)).gaussians(dim) * scale
    vectors = np.stack([cache[t] for t in token_ids])
    return TextEmbedding(token_ids, roles, vectors)


def _adaptive_average_pool(grid, out_h, out_w):
    h, w = grid.shape
    out = np.empty((out_h, out_w))
    for i in range(out_h):
        r0, r1 = (i * h) // out_h, -((-(i + 1) * h) // out_h)
        for j in range(out_w):
            c0, c1 = (j * w) // out_w, -((-(j + 1) * w) // out_w)
            out[i, j] = grid[r0:r1, c0:c1].mean()
    return out


def visual_mapper(seed, dim):
    """The seeded ``16 x dim`` linear map shared by all strips."""
    n_desc = DESCRIPTOR_GRID[0] * DESCRIPTOR_GRID[1]
    return SeededRng(mix(seed, _VISUAL_MAPPER_KEY)).normal_matrix(n_desc, dim, scale=0.25)


def encode_visual(image, n_tokens=4, seed=0, dim=32):
    """Encode a single-channel image into ``n_tokens`` visual tokens.

    The image is cut into ``n_tokens`` equal horizontal strips; each strip
    is adaptive-average-pooled to a 4x4 descriptor and mapped to ``dim``
    features by a seeded linear map.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    img = as_matrix(img, "image")
    if n_tokens < 1 or img.shape[0] % n_tokens:
        raise DimensionError(
            f"image height {img.shape[0]} is not divisible into {n_tokens} strips"
        )
    strip_h = img.shape[0] // n_tokens
    desc = np.stack([
        _adaptive_average_pool(img[k * strip_h:(k + 1) * strip_h], *DESCRIPTOR_GRID).ravel()
        for k in range(n_tokens)
    ])
    return VisualEmbedding(matmul(desc, visual_mapper(seed, dim)))


def compose_context(visual=None, text=None, mode=ContextMode.FULL):
    """Concatenate ``[v; t]`` in the requested mode; absent parts are omitted, not zero-filled."""
    mode = ContextMode(mode)
    need_v = mode in (ContextMode.FULL, ContextMode.VISUAL_ONLY)
    need_t = mode in (ContextMode.FULL, ContextMode.TEXTUAL_ONLY)
    if need_v and visual is None:
        raise ModeError(f"{mode.value} composition requires a visual embedding")
    if need_t and text is None:
        raise ModeError(f"{mode.value} composition requires a text embedding")
    if need_v and need_t and visual.dim != text.dim:
        raise DimensionError(f"visual dim {visual.dim} != text dim {text.dim}")

    blocks, slots, roles = [], [], []
    if need_v:
        blocks.append(np.asarray(visual.vectors))
        slots += [("visual", k) for k in range(visual.n_tokens)]
        roles += [None] * visual.n_tokens
    if need_t:
        blocks.append(np.asarray(text.vectors))
        slots += [("text", k) for k in range(text.n_tokens)]
        roles += list(text.roles)
    rows = np.concatenate(blocks, axis=0)
    return ContextualEmbedding(mode, rows, tuple(slots), tuple(roles))
