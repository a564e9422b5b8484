"""Run configuration: strict JSON schema plus cross-field checks.

Both ``harmonize --validate-only`` and a full run go through
:func:`validate_config`, so they accept exactly the same files.
"""
from __future__ import annotations

import json
import zlib
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .embedding import DEFAULT_VOCAB_SIZE, TokenRole

__all__ = [
    "ConfigError",
    "RunConfig",
    "Violation",
    "default_config",
    "load_config",
    "read_grid",
    "token_id",
    "validate_config",
]

VARIANT_CHOICES = ("baseline", "orchestration", "swap", "ours", "all")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Strict):
    height: int = Field(16, ge=1)
    width: int = Field(16, ge=1)
    h: int = Field(32, ge=1)
    h_c: int = Field(32, ge=1)
    d: int = Field(32, ge=1)
    encoder_blocks: int = Field(4, ge=0)
    middle_blocks: int = Field(1, ge=0)
    decoder_blocks: int = Field(6, ge=1)
    ff_mult: int = Field(2, ge=1)

    @property
    def n_blocks(self):
        return self.encoder_blocks + self.middle_blocks + self.decoder_blocks


class PromptToken(_Strict):
    text: str = Field(min_length=1)
    role: TokenRole = TokenRole.REGULAR
    id: Optional[int] = Field(None, ge=0)


class ImageSection(_Strict):
    path: Optional[str] = None
    grid: Optional[List[List[float]]] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.path is None) == (self.grid is None):
            raise ValueError("give exactly one of 'path' or 'grid'")
        return self


class SchedulerSection(_Strict):
    steps: int = Field(100, ge=1)
    beta_start: float = Field(1e-4, gt=0.0, lt=1.0)
    beta_end: float = Field(0.02, gt=0.0, lt=1.0)


class SwapSection(_Strict):
    enabled: bool = True
    start_step: int = Field(21, ge=1)
    layers: List[int] = Field(default_factory=lambda: [8, 9, 10])


class OrchestrationSection(_Strict):
    enabled: bool = True
    excluded_roles: List[TokenRole] = Field(default_factory=lambda: [
        TokenRole.SUBJECT, TokenRole.CLASS_NAME, TokenRole.ARTICLE,
        TokenRole.PADDING, TokenRole.SPECIAL,
    ])
    eps_drop: float = Field(1e-10, gt=0.0)


class MaskSection(_Strict):
    threshold: float = Field(0.5, ge=0.0, le=1.0)
    roles: List[TokenRole] = Field(default_factory=lambda: [TokenRole.SUBJECT], min_length=1)


class RunConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    model: ModelSection = Field(default_factory=ModelSection)
    prompt: List[PromptToken] = Field(min_length=1)
    vocab_size: int = Field(DEFAULT_VOCAB_SIZE, ge=1)
    image: ImageSection
    visual_tokens: int = Field(4, ge=1)
    scheduler: SchedulerSection = Field(default_factory=SchedulerSection)
    swap: SwapSection = Field(default_factory=SwapSection)
    orchestration: OrchestrationSection = Field(default_factory=OrchestrationSection)
    mask: MaskSection = Field(default_factory=MaskSection)
    reference_mask: Optional[List[List[int]]] = None
    shared_noise: bool = True
    variant: Literal["baseline", "orchestration", "swap", "ours", "all"] = "all"
    output_dir: str = "harmonize-out"

    def echo(self):
        """Config as written to the manifest (output location left out)."""
        data = self.model_dump(mode="json")
        data.pop("output_dir")
        return data


class Violation(tuple):
    """``(field_path, message)``."""

    def __new__(cls, path, message):
        return super().__new__(cls, (path, message))

    @property
    def path(self):
        return self[0]

    @property
    def message(self):
        return self[1]

    def __str__(self):
        return f"{self.path}: {self.message}"


class ConfigError(Exception):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


def token_id(token, vocab_size):
    if token.id is not None:
        return token.id
    return zlib.crc32(token.text.encode("utf-8")) % vocab_size


def read_grid(path):
    """Read a PGM (P2/P5) or whitespace-separated ASCII grid as floats."""
    raw = Path(path).read_bytes()
    if raw[:2] in (b"P2", b"P5"):
        from .pgm import read_pgm
        return read_pgm(path).astype(np.float64)
    rows = [line.split() for line in raw.decode("utf-8").splitlines() if line.strip()]
    return np.array([[float(v) for v in row] for row in rows], dtype=np.float64)


def _semantic_checks(cfg, base_dir):
    out = []
    m = cfg.model
    n_blocks = m.n_blocks
    decoder_ids = set(range(m.encoder_blocks + m.middle_blocks, n_blocks))
    for i, layer in enumerate(cfg.swap.layers):
        if layer < 0 or layer >= n_blocks:
            out.append(Violation("swap.layers", f"layer id {layer} outside [0, {n_blocks})"))
        elif layer not in decoder_ids:
            out.append(Violation("swap.layers", f"layer id {layer} is not a decoder block"))
    if len(set(cfg.swap.layers)) != len(cfg.swap.layers):
        out.append(Violation("swap.layers", "duplicate layer ids"))
    if cfg.swap.start_step > cfg.scheduler.steps + 1:
        out.append(Violation(
            "swap.start_step",
            f"{cfg.swap.start_step} exceeds steps + 1 = {cfg.scheduler.steps + 1}",
        ))
    if cfg.scheduler.beta_start > cfg.scheduler.beta_end:
        out.append(Violation("scheduler.beta_start", "must not exceed scheduler.beta_end"))

    roles = [t.role for t in cfg.prompt]
    if roles.count(TokenRole.SUBJECT) > 1:
        out.append(Violation("prompt", "at most one subject token"))
    for i, tok in enumerate(cfg.prompt):
        if tok.id is not None and tok.id >= cfg.vocab_size:
            out.append(Violation(f"prompt.{i}.id", f"id {tok.id} >= vocab_size {cfg.vocab_size}"))
    if not set(cfg.mask.roles) & set(roles):
        out.append(Violation("mask.roles", "no prompt token carries any of these roles"))

    image = None
    if cfg.image.grid is not None:
        widths = {len(r) for r in cfg.image.grid}
        if not cfg.image.grid or len(widths) != 1 or 0 in widths:
            out.append(Violation("image.grid", "must be a non-empty rectangular grid"))
        else:
            image = np.array(cfg.image.grid, dtype=np.float64)
    else:
        path = Path(cfg.image.path)
        if not path.is_absolute():
            path = Path(base_dir) / path
        try:
            image = read_grid(path)
        except (OSError, ValueError) as exc:
            out.append(Violation("image.path", f"cannot read image: {exc}"))
    if image is not None:
        if not np.isfinite(image).all():
            out.append(Violation("image", "contains non-finite values"))
        if image.shape[0] % cfg.visual_tokens:
            out.append(Violation(
                "visual_tokens",
                f"image height {image.shape[0]} is not divisible into {cfg.visual_tokens} strips",
            ))
        if cfg.reference_mask is not None:
            ref = np.array(cfg.reference_mask)
            if ref.shape != image.shape:
                out.append(Violation(
                    "reference_mask", f"shape {ref.shape} does not match image {image.shape}"
                ))
            elif not np.isin(ref, (0, 1)).all():
                out.append(Violation("reference_mask", "entries must be 0 or 1"))
    return out, image


def validate_config(data, base_dir="."):
    """Return ``(RunConfig or None, image or None, violations)``."""
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        violations = [
            Violation(".".join(str(p) for p in err["loc"]) or "<root>", err["msg"])
            for err in exc.errors()
        ]
        return None, None, violations
    violations, image = _semantic_checks(cfg, base_dir)
    return (cfg, image, violations) if not violations else (None, None, violations)


def load_config(path, overrides=None):
    """Read, apply CLI overrides (dotted keys) and validate; raises ``ConfigError``."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([Violation("<file>", f"invalid JSON: {exc}")]) from None
    for key, value in (overrides or {}).items():
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    cfg, image, violations = validate_config(data, path.parent)
    if violations:
        raise ConfigError(violations)
    return cfg, image


def default_config():
    """A complete config at the default model size and sampling settings."""
    h = w = 16
    checker = [[float((i // 4 + j // 4) % 2) for j in range(w)] for i in range(h)]
    return {
        "seed": 0,
        "prompt": [
            {"text": "<start>", "role": "special"},
            {"text": "a", "role": "article"},
            {"text": "S*", "role": "subject"},
            {"text": "dog", "role": "class_name"},
            {"text": "jumping", "role": "regular"},
            {"text": "on", "role": "regular"},
            {"text": "grass", "role": "regular"},
            {"text": "<end>", "role": "special"},
        ],
        "image": {"grid": checker},
    }
