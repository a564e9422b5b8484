"""Orthogonal visual embeddings: project visual tokens off the textual subspace.

The textual subspace is spanned by the prompt tokens whose role is not
excluded (by default the subject pseudo-token, its class name, articles,
padding and special tokens). Gram-Schmidt runs in prompt order.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .embedding import ContextMode, TextEmbedding, TokenRole
from .exceptions import DimensionError, ModeError, ProjectionCollapseWarning

__all__ = [
    "DEFAULT_EXCLUDED_ROLES",
    "Decomposition",
    "OrthogonalBasis",
    "OrthogonalProjector",
    "build_basis",
    "orchestrate",
    "orthogonalize",
]

DEFAULT_EXCLUDED_ROLES = frozenset({
    TokenRole.SUBJECT,
    TokenRole.CLASS_NAME,
    TokenRole.ARTICLE,
    TokenRole.PADDING,
    TokenRole.SPECIAL,
})
COLLAPSE_RATIO = 1e-6


def _dot(a, b):
    # correctly rounded, so independent of vector length and platform
    return math.fsum((a * b).tolist())


def _dots(rows, v):
    return [math.fsum(r) for r in (rows * v).tolist()]


def _norm(a):
    return math.sqrt(_dot(a, a))


@dataclass(frozen=True)
class OrthogonalBasis:
    vectors: np.ndarray = field(repr=False)
    source_indices: tuple
    excluded_indices: tuple
    dropped_indices: tuple

    @property
    def rank(self):
        return self.vectors.shape[0]

    @property
    def dim(self):
        return self.vectors.shape[1]


@dataclass(frozen=True)
class Decomposition:
    orthogonal: np.ndarray
    parallel: np.ndarray
    collapsed: bool = False


def build_basis(text, excluded_roles=DEFAULT_EXCLUDED_ROLES, eps_drop=1e-10):
    """Gram-Schmidt basis of the included text tokens.

    Each residual is computed against the partial basis and then
    re-orthogonalized once more, which leaves the spanned subspace (and so
    the projection) unchanged while keeping the basis orthonormal to
    machine precision. Tokens whose residual falls below
    ``eps_drop * ||t||`` are recorded as dropped.
    """
    if eps_drop <= 0:
        raise ValueError("eps_drop must be positive")
    if isinstance(text, TextEmbedding):
        vectors, roles = np.asarray(text.vectors), text.roles
    else:
        vectors, roles = text
        vectors = check_array(vectors, dtype=np.float64)
        roles = tuple(roles)
    excluded_roles = {TokenRole(r) for r in excluded_roles}
    dim = vectors.shape[1]
    if dim < 1:
        raise DimensionError("text vectors must have at least one feature")

    basis, sources, excluded, dropped = [], [], [], []
    for j, (t, role) in enumerate(zip(vectors, roles)):
        if TokenRole(role) in excluded_roles:
            excluded.append(j)
            continue
        t = np.array(t, dtype=np.float64)
        residual = t.copy()
        if basis:
            current = np.array(basis)
            for _ in range(2):
                for c, q in zip(_dots(current, residual), current):
                    residual = residual - c * q
        original = _norm(t)
        res_norm = _norm(residual)
        if original == 0.0 or res_norm < eps_drop * original or len(basis) == dim:
            dropped.append(j)
            continue
        basis.append(residual / res_norm)
        sources.append(j)

    vecs = np.array(basis, dtype=np.float64).reshape(len(basis), dim)
    vecs.setflags(write=False)
    return OrthogonalBasis(vecs, tuple(sources), tuple(excluded), tuple(dropped))


def orthogonalize(v, basis):
    """Split ``v`` into its components orthogonal and parallel to the basis span."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (basis.dim,):
        raise DimensionError(f"vector of shape {v.shape} does not match basis dim {basis.dim}")
    parallel = np.zeros_like(v)
    if basis.rank:
        for c, q in zip(_dots(basis.vectors, v), basis.vectors):
            parallel = parallel + c * q
    orthogonal = v - parallel
    v_norm = _norm(v)
    collapsed = v_norm > 0.0 and _norm(orthogonal) < COLLAPSE_RATIO * v_norm
    if collapsed:
        warnings.warn(
            f"orthogonal component kept only {_norm(orthogonal) / v_norm:.2e} of the token norm",
            ProjectionCollapseWarning,
            stacklevel=2,
        )
    return Decomposition(orthogonal, parallel, collapsed)


def orchestrate(context, basis):
    """Replace every visual row of a full context by its orthogonal component."""
    if context.mode is not ContextMode.FULL:
        raise ModeError(f"orchestration needs a full context, got {context.mode.value}")
    rows = np.array(context.rows)
    for i in context.indices("visual"):
        rows[i] = orthogonalize(rows[i], basis).orthogonal
    return context.with_rows(rows)


class OrthogonalProjector(TransformerMixin, BaseEstimator):
    """Project visual tokens onto the orthogonal complement of a textual subspace.

    ``fit`` learns the basis from a prompt embedding; ``transform`` maps an
    ``(M, h_c)`` array of visual tokens to their orthogonal components.

    Parameters
    ----------
    excluded_roles : iterable of TokenRole or str, default=None
        Roles left out of the subspace. ``None`` uses the default set
        (subject, class name, article, padding, special).
    eps_drop : float, default=1e-10
        Relative residual below which a token counts as linearly dependent.
    """

    def __init__(self, excluded_roles=None, eps_drop=1e-10):
        self.excluded_roles = excluded_roles
        self.eps_drop = eps_drop

    def fit(self, X, y=None, roles=None):
        """Fit on a ``TextEmbedding`` or an ``(N, h_c)`` array with ``roles``."""
        excluded = DEFAULT_EXCLUDED_ROLES if self.excluded_roles is None else self.excluded_roles
        if isinstance(X, TextEmbedding):
            self.basis_ = build_basis(X, excluded, self.eps_drop)
        else:
            X = check_array(X, dtype=np.float64)
            if roles is None:
                roles = [TokenRole.REGULAR] * X.shape[0]
            self.basis_ = build_basis((X, roles), excluded, self.eps_drop)
        self.n_features_in_ = self.basis_.dim
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return np.stack([orthogonalize(v, self.basis_).orthogonal for v in X])

    def parallel_component(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(X, dtype=np.float64)
        return np.stack([orthogonalize(v, self.basis_).parallel for v in X])

    def orchestrate(self, context):
        check_is_fitted(self, "basis_")
        return orchestrate(context, self.basis_)
